//! Joint fine-tuning of encoder and head.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basic_index::{BasicIndex, Sampling};
use crate::config::TrainConfig;
use crate::corpus::{AnnotatedInstance, Corpus, Split};
use crate::encoder::{contextual_target_embedding, scatter_target_grad, sentence_embedding, Encoder};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, EvalReport};
use crate::model::{bce_logit_grad, predict, weighted_bce_term, FeatureBundle, HeadConfig, ModelHead, Prediction};
use crate::nn::Parameterized;
use crate::optim::{AdamW, LinearSchedule};

const HEAD_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed binary cross entropy over the epoch's training instances.
    pub loss_sum: f64,
    pub dev: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<EvalReport>,
}

/// Which data fed which stage of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlow {
    /// Instances that produced optimizer steps.
    pub optimized: String,
    /// Training corpus the literal pools were drawn from.
    pub pools: String,
    /// Instances used for checkpoint selection.
    pub selection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_fingerprint: String,
    pub ablate_bmip: bool,
    pub epochs: Vec<EpochRecord>,
    /// 0-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
    pub data_flow: DataFlow,
    pub key_fn_id: String,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss_sum).collect()
    }

    /// Equality of everything except timing.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.wall_clock_secs = other.wall_clock_secs;
        &a == other
    }
}

pub struct TrainOutcome<E> {
    pub record: RunRecord,
    /// Head and encoder from the best dev epoch.
    pub head: ModelHead,
    pub encoder: E,
}

fn sampling_for(config: &TrainConfig, epoch: usize) -> Sampling {
    let seed = if config.resample_per_epoch {
        config.seed.wrapping_add(epoch as u64 + 1)
    } else {
        config.seed
    };
    Sampling {
        k: config.pool_size,
        seed,
    }
}

/// Builds the four vectors for one instance under the encoder's current
/// weights. Training instances are excluded from their own pool.
pub fn featurize<E: Encoder + ?Sized>(
    encoder: &E,
    index: &BasicIndex,
    instance: &AnnotatedInstance,
    sampling: Sampling,
) -> Result<FeatureBundle> {
    let word = instance.target_word();
    let key = index.policy().key(instance);
    let enc = encoder
        .encode(&instance.tokens)
        .map_err(|e| e.in_sentence(&instance.sentence_id))?;
    let v_context_target = contextual_target_embedding(&enc, enc.alignment(instance.target_index)?)?;
    let exclude = (instance.split == Split::Train).then(|| instance.reference());
    let v_basic = index
        .basic_embedding(&key, word, encoder, sampling, exclude.as_ref())?
        .vector;
    let v_aggregated = crate::encoder::decontextualized_embedding(encoder, word)?;
    Ok(FeatureBundle {
        v_context_target,
        v_basic,
        v_aggregated,
        v_sentence: sentence_embedding(&enc),
    })
}

pub fn predict_instances<E: Encoder + ?Sized>(
    encoder: &E,
    head: &ModelHead,
    index: &BasicIndex,
    instances: &[AnnotatedInstance],
    sampling: Sampling,
    threshold: f64,
) -> Result<Vec<Prediction>> {
    instances
        .iter()
        .map(|inst| {
            let bundle = featurize(encoder, index, inst, sampling)?;
            predict(&bundle, head, threshold, head.is_ablated()).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{}: {msg}", inst.reference())),
                other => other,
            })
        })
        .collect()
}

pub fn evaluate<E: Encoder + ?Sized>(
    encoder: &E,
    head: &ModelHead,
    index: &BasicIndex,
    instances: &[AnnotatedInstance],
    sampling: Sampling,
    threshold: f64,
) -> Result<EvalReport> {
    let preds = predict_instances(encoder, head, index, instances, sampling, threshold)?;
    let labels: Vec<_> = instances.iter().map(|i| i.label).collect();
    compute_metrics(&preds, &labels)
}

/// Checks that `index` was built from exactly the train split of `corpus`.
pub fn check_index(corpus: &Corpus, index: &BasicIndex) -> Result<()> {
    let found = corpus.split(Split::Train).fingerprint();
    if index.corpus_fingerprint() != found {
        return Err(Error::Fingerprint {
            expected: index.corpus_fingerprint().to_string(),
            found,
        });
    }
    Ok(())
}

struct Step<'a, E> {
    encoder: &'a mut E,
    head: &'a mut ModelHead,
    index: &'a BasicIndex,
    sampling: Sampling,
    train_encoder: bool,
    pos_weight: f64,
    eps: f64,
}

impl<E: Encoder> Step<'_, E> {
    /// Forward and backward for one instance; returns its unweighted loss.
    fn run(&mut self, inst: &AnnotatedInstance, scale: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let word = inst.target_word();
        let key = self.index.policy().key(inst);
        let (sent, sent_tape) = self
            .encoder
            .forward(&inst.tokens)
            .map_err(|e| e.in_sentence(&inst.sentence_id))?;
        let align = sent.alignment(inst.target_index)?.clone();
        let (lone, lone_tape) = self
            .encoder
            .forward(&[word.to_string()])
            .map_err(|e| e.in_sentence(&inst.sentence_id))?;
        let lone_align = lone.alignment(0)?.clone();
        let exclude = inst.reference();
        // v_B is a constant: no gradient flows through the pool
        let v_basic = self
            .index
            .basic_embedding(&key, word, &*self.encoder, self.sampling, Some(&exclude))?
            .vector;
        let bundle = FeatureBundle {
            v_context_target: contextual_target_embedding(&sent, &align)?,
            v_basic,
            v_aggregated: contextual_target_embedding(&lone, &lone_align)?,
            v_sentence: sentence_embedding(&sent),
        };
        let tape = self
            .head
            .forward_train(&bundle, Some(rng))
            .map_err(|e| Error::Numeric(format!("{}: {e}", inst.reference())))?;
        let y = inst.label.as_f64();
        let loss = weighted_bce_term(tape.score, y, 1.0, self.eps);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "{}: loss {loss} (logit {}, score {})",
                inst.reference(),
                tape.logit,
                tape.score
            )));
        }
        let g = bce_logit_grad(tape.score, y, self.pos_weight, self.eps) * scale;
        let grads = self.head.backward(&tape, g);
        if self.train_encoder {
            let mut d_sent = Array2::zeros(sent.hidden_states().raw_dim());
            scatter_target_grad(&mut d_sent, &align, grads.d_context_target.view());
            let mut row = d_sent.row_mut(0);
            row += &grads.d_sentence;
            self.encoder.backward(&sent_tape, d_sent.view())?;
            let mut d_lone = Array2::zeros(lone.hidden_states().raw_dim());
            scatter_target_grad(&mut d_lone, &lone_align, grads.d_aggregated.view());
            self.encoder.backward(&lone_tape, d_lone.view())?;
        }
        Ok(loss)
    }
}

/// Trains `encoder` plus a fresh head on the train split of `corpus`,
/// keeping the epoch with the best dev F1.
pub fn train<E: Encoder + Clone>(
    config: &TrainConfig,
    corpus: &Corpus,
    index: &BasicIndex,
    mut encoder: E,
) -> Result<TrainOutcome<E>> {
    config.validate()?;
    let started = Instant::now();
    let train_split = corpus.split(Split::Train);
    let dev = corpus.split(Split::Dev);
    let test = corpus.split(Split::Test);
    if train_split.is_empty() || dev.is_empty() {
        return Err(Error::Validation(format!(
            "training needs train and dev instances, got {} and {}",
            train_split.len(),
            dev.len()
        )));
    }
    check_index(corpus, index)?;
    let expected_policy = config.key_policy()?.id();
    if index.key_fn_id() != expected_policy {
        return Err(Error::Config(format!(
            "index uses key policy `{}`, config asks for `{expected_policy}`",
            index.key_fn_id()
        )));
    }

    let d = encoder.hidden_dim();
    let head_config = HeadConfig {
        input_dim: d,
        hidden_dim: config.hidden_dim.unwrap_or(d),
        dropout: config.dropout,
        ablate_bmip: config.ablate_bmip,
    };
    let mut head = ModelHead::new(head_config, &mut stream(config.seed, HEAD_STREAM))?;
    let mut dropout_rng = stream(config.seed, DROPOUT_STREAM);
    let mut shuffle_rng = stream(config.seed, SHUFFLE_STREAM);
    let mut optimizer = AdamW::new(config.weight_decay);

    let n = train_split.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let schedule = LinearSchedule::with_warmup_fraction(steps_per_epoch * config.epochs, config.warmup_fraction);
    let train_encoder = encoder.has_trainable();
    let eval_sampling = sampling_for(config, 0);

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelHead, E)> = None;
    let mut global_step = 0;
    for epoch in 0..config.epochs {
        let sampling = sampling_for(config, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            head.zero_grad();
            encoder.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut step = Step {
                encoder: &mut encoder,
                head: &mut head,
                index,
                sampling,
                train_encoder,
                pos_weight: config.pos_weight.unwrap_or(1.0),
                eps: config.clamp_epsilon,
            };
            for &i in batch {
                let inst = &train_split.instances()[i];
                loss_sum += step.run(inst, scale, &mut dropout_rng).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            }
            let factor = schedule.factor(global_step);
            optimizer.step("head", &mut head, config.lr_head * factor);
            if train_encoder {
                encoder.apply_update(&mut optimizer, config.lr_encoder * factor);
            }
            global_step += 1;
        }
        if !loss_sum.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: non-finite loss sum {loss_sum}")));
        }

        let dev_report = evaluate(&encoder, &head, index, dev.instances(), eval_sampling, config.threshold)?;
        let train_report = if config.eval_train {
            Some(evaluate(
                &encoder,
                &head,
                index,
                train_split.instances(),
                eval_sampling,
                config.threshold,
            )?)
        } else {
            None
        };
        log::info!(
            "epoch {epoch}: loss {loss_sum:.4}, dev F1 {:.4}",
            dev_report.f1
        );
        if best.as_ref().map_or(true, |b| dev_report.f1 > b.1) {
            best = Some((epoch, dev_report.f1, head.clone(), encoder.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            loss_sum,
            dev: dev_report,
            train: train_report,
        });
    }

    let (best_epoch, best_dev_f1, head, encoder) = best.expect("at least one epoch");
    let test_report = if test.is_empty() {
        None
    } else {
        Some(evaluate(&encoder, &head, index, test.instances(), eval_sampling, config.threshold)?)
    };
    let record = RunRecord {
        seed: config.seed,
        config_fingerprint: config.fingerprint(),
        ablate_bmip: config.ablate_bmip,
        epochs,
        best_epoch,
        best_dev_f1,
        test: test_report,
        data_flow: DataFlow {
            optimized: train_split.fingerprint(),
            pools: index.corpus_fingerprint().to_string(),
            selection: dev.fingerprint(),
            test: (!test.is_empty()).then(|| test.fingerprint()),
        },
        key_fn_id: index.key_fn_id(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { record, head, encoder })
}

/// A seed suite stopped by a failing run; finished runs are kept.
#[derive(Debug)]
pub struct SuiteFailure {
    pub completed: Vec<RunRecord>,
    pub seed: u64,
    pub error: Error,
}

impl std::fmt::Display for SuiteFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run with seed {} failed after {} completed runs: {}",
            self.seed,
            self.completed.len(),
            self.error
        )
    }
}

impl std::error::Error for SuiteFailure {}

/// One training run per seed. `make_encoder` builds a fresh encoder for a seed.
pub fn run_seeds<E, F>(
    config: &TrainConfig,
    corpus: &Corpus,
    index: &BasicIndex,
    seeds: &[u64],
    mut make_encoder: F,
) -> std::result::Result<Vec<RunRecord>, SuiteFailure>
where
    E: Encoder + Clone,
    F: FnMut(&TrainConfig) -> Result<E>,
{
    let fail = |completed: Vec<RunRecord>, seed: u64, error: Error| SuiteFailure { completed, seed, error };
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if seeds.len() < 2 || unique.len() != seeds.len() {
        return Err(fail(
            Vec::new(),
            seeds.first().copied().unwrap_or(0),
            Error::Validation(format!("a seed suite needs at least 2 distinct seeds, got {seeds:?}")),
        ));
    }
    let mut records = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let result = make_encoder(&cfg).and_then(|enc| train(&cfg, corpus, index, enc));
        match result {
            Ok(outcome) => records.push(outcome.record),
            Err(e) => return Err(fail(records, seed, e)),
        }
    }
    Ok(records)
}

/// Seeds `config.seed + 0 .. config.seed + n_seeds`.
pub fn run_seed_suite<E, F>(
    config: &TrainConfig,
    corpus: &Corpus,
    index: &BasicIndex,
    n_seeds: usize,
    make_encoder: F,
) -> std::result::Result<Vec<RunRecord>, SuiteFailure>
where
    E: Encoder + Clone,
    F: FnMut(&TrainConfig) -> Result<E>,
{
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| config.seed.wrapping_add(i)).collect();
    run_seeds(config, corpus, index, &seeds, make_encoder)
}

/// Pairs test F1 of two suites by seed.
pub fn paired_f1(a: &[RunRecord], b: &[RunRecord]) -> Result<Vec<(f64, f64)>> {
    let test_f1 = |r: &RunRecord| {
        r.test
            .as_ref()
            .map(|t| t.f1)
            .ok_or_else(|| Error::Validation(format!("run with seed {} has no test metrics", r.seed)))
    };
    a.iter()
        .map(|ra| {
            let rb = b
                .iter()
                .find(|rb| rb.seed == ra.seed)
                .ok_or_else(|| Error::Validation(format!("seed {} missing from the second suite", ra.seed)))?;
            Ok((test_f1(ra)?, test_f1(rb)?))
        })
        .collect()
}
