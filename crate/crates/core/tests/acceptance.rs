//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one status line:
//!
//! ```text
//! cargo test -p basicmip --test acceptance
//! ```
//!
//! Set `BASICMIP_VUA_DIR` to a directory holding `vua18/` and `vua20/`, each
//! with normalized `train.jsonl` and `test.jsonl`, to run criterion 8.

mod common;

use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use basicmip::basic_index::{BasicIndex, BasicSource, KeyPolicy, Sampling};
use basicmip::corpus::{load_corpus, AnnotatedInstance, Corpus, CorpusFormat, Label, Split};
use basicmip::encoder::{
    contextual_target_embedding, decontextualized_embedding, Encoder, ToyConfig, ToyEncoder,
};
use basicmip::evaluation::{breakdown_eval, compute_metrics, contrast_measure, cosine, paired_ttest};
use basicmip::model::{
    bce_logit_grad, bce_loss, weighted_bce_term, FeatureBundle, HeadConfig, ModelHead, Prediction,
};
use basicmip::nn::Parameterized;
use basicmip::synthetic;
use basicmip::training::featurize;
use basicmip::Error;

use common::{fixture, surface_index, toy_config, train_toy};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn toy(seed: u64, dim: usize) -> ToyEncoder {
    ToyEncoder::new(ToyConfig {
        dim,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn criterion_1() -> Outcome {
    let corpus = synthetic::polysemy_corpus();
    let encoder = toy(5, 16);
    // metaphor-only training data leaves every key without a literal pool
    let metaphors: Vec<AnnotatedInstance> = corpus
        .split(Split::Train)
        .instances()
        .iter()
        .filter(|i| i.label.is_metaphor())
        .cloned()
        .collect();
    let index = BasicIndex::build(&Corpus::new(metaphors).unwrap(), KeyPolicy::surface()).unwrap();
    let cfg = HeadConfig {
        input_dim: 16,
        hidden_dim: 16,
        dropout: 0.0,
        ablate_bmip: false,
    };
    let mut head = ModelHead::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let f2 = head.f2().clone();
    *head.f0_mut().unwrap() = f2;
    let mut checked = 0;
    for inst in corpus.instances() {
        let key = index.policy().key(inst);
        let word = inst.target_word();
        let res = index
            .basic_embedding(&key, word, &encoder, Sampling::default(), None)
            .map_err(|e| e.to_string())?;
        let v_f = decontextualized_embedding(&encoder, word).map_err(|e| e.to_string())?;
        ensure(res.source == BasicSource::FallbackDecontextualized && res.pool_size_used == 0, || {
            format!("{key}: expected the fallback, got {:?}", res.source)
        })?;
        ensure(res.vector == v_f, || format!("{key}: v_B differs from v_F"))?;
        let bundle = featurize(&encoder, &index, inst, Sampling::default()).map_err(|e| e.to_string())?;
        let bmip = head.bmip_feature(&bundle).map_err(|e| e.to_string())?;
        let amip = head.amip_feature(&bundle).map_err(|e| e.to_string())?;
        ensure(bmip == amip, || format!("{}: h_BMIP differs from h_AMIP", inst.reference()))?;
        checked += 1;
    }
    Ok(format!("{checked} instances, bitwise equal"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = ["tree", "walk", "soft", "ran", "under", "blue", "cold", "sang", "of", "unbelievably"];
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let encoder = toy(trial, 8);
        let size = rng.gen_range(1..=8);
        let mut instances = Vec::new();
        for j in 0..size {
            let len = rng.gen_range(2..7);
            let target = rng.gen_range(0..len);
            let mut tokens: Vec<String> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect();
            tokens[target] = "grasp".into();
            instances.push(
                AnnotatedInstance::new(format!("p{trial}-{j}"), tokens, target, Label::Literal, Split::Train).unwrap(),
            );
        }
        let corpus = Corpus::new(instances.clone()).unwrap();
        let index = BasicIndex::build(&corpus, KeyPolicy::surface()).unwrap();
        let sampling = Sampling { k: 8, seed: trial };
        let got = index
            .basic_embedding("grasp", "grasp", &encoder, sampling, None)
            .map_err(|e| e.to_string())?;
        ensure(got.pool_size_used == size, || format!("trial {trial}: used {} of {size}", got.pool_size_used))?;
        // oracle: encode each sentence afresh and read the first piece's row
        let mut sum = vec![0.0; 8];
        for inst in &instances {
            let enc = encoder.encode(&inst.tokens).unwrap();
            let start = enc.alignment(inst.target_index).unwrap().piece_range.start;
            for (s, v) in sum.iter_mut().zip(enc.hidden_states().row(start)) {
                *s += v;
            }
        }
        for (j, s) in sum.iter().enumerate() {
            let want = s / size as f64;
            let rel = (got.vector[j] - want).abs() / want.abs().max(1e-12);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-6, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 pools, max relative error {worst:.1e}"))
}

fn head_loss(head: &ModelHead, bundle: &FeatureBundle, y: f64) -> f64 {
    let tape = head.forward_train::<ChaCha8Rng>(bundle, None).unwrap();
    weighted_bce_term(tape.score, y, 1.0, 1e-7)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn criterion_3() -> Outcome {
    let half = bce_loss(&[0.5], &[1.0]).map_err(|e| e.to_string())?;
    ensure((half - std::f64::consts::LN_2).abs() <= 1e-9, || format!("loss at 0.5 is {half}"))?;
    let pair = bce_loss(&[0.9, 0.2], &[1.0, 0.0]).map_err(|e| e.to_string())?;
    ensure((pair - 0.328504).abs() <= 1e-6, || format!("fixture loss {pair}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut n_checked = 0;
    for fixture_no in 0..20 {
        let d = rng.gen_range(2..6);
        let cfg = HeadConfig {
            input_dim: d,
            hidden_dim: rng.gen_range(2..6),
            dropout: 0.0,
            ablate_bmip: fixture_no % 4 == 3,
        };
        let mut head = ModelHead::new(cfg, &mut rng).unwrap();
        let vec = |rng: &mut ChaCha8Rng| Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
        let bundle = FeatureBundle {
            v_context_target: vec(&mut rng),
            v_basic: vec(&mut rng),
            v_aggregated: vec(&mut rng),
            v_sentence: vec(&mut rng),
        };
        let y = f64::from(u8::from(rng.gen_bool(0.5)));

        head.zero_grad();
        let tape = head.forward_train::<ChaCha8Rng>(&bundle, None).unwrap();
        let feature_grads = head.backward(&tape, bce_logit_grad(tape.score, y, 1.0, 1e-7));
        let mut analytic = Vec::new();
        head.visit_params_mut(&mut |p| analytic.extend_from_slice(p.grad));

        // parameters
        for (flat, &a) in analytic.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut probe = head.clone();
                let mut seen = 0;
                probe.visit_params_mut(&mut |p| {
                    if flat >= seen && flat < seen + p.value.len() {
                        p.value[flat - seen] += delta;
                    }
                    seen += p.value.len();
                });
                head_loss(&probe, &bundle, y)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
            n_checked += 1;
        }
        // encoder-facing inputs
        let inputs: [(&Array1<f64>, fn(&mut FeatureBundle) -> &mut Array1<f64>); 3] = [
            (&feature_grads.d_context_target, |b| &mut b.v_context_target),
            (&feature_grads.d_aggregated, |b| &mut b.v_aggregated),
            (&feature_grads.d_sentence, |b| &mut b.v_sentence),
        ];
        for (grad, field) in inputs {
            for j in 0..d {
                let shifted = |delta: f64| {
                    let mut b = bundle.clone();
                    field(&mut b)[j] += delta;
                    head_loss(&head, &b, y)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst = worst.max(rel_err(grad[j], numeric));
                n_checked += 1;
            }
        }
    }
    ensure(worst <= 1e-4, || format!("max relative gradient error {worst:e}"))?;
    Ok(format!(
        "ln 2 and 0.328504 reproduced; {n_checked} gradient entries over 20 fixtures, max relative error {worst:.1e}"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut degenerate = 0;
    for set in 0..1000 {
        let n = rng.gen_range(1..40);
        // every tenth set has no gold positives, every tenth no predicted ones
        let pos_rate = if set % 10 == 0 { 0.0 } else { rng.gen_range(0.0..1.0) };
        let pred_rate = if set % 10 == 5 { 0.0 } else { rng.gen_range(0.0..1.0) };
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.gen_bool(pos_rate) { Label::Metaphor } else { Label::Literal })
            .collect();
        let preds: Vec<Prediction> = (0..n)
            .map(|_| {
                let hat = u8::from(rng.gen_bool(pred_rate));
                Prediction {
                    score: if hat == 1 { 0.75 } else { 0.25 },
                    label_hat: hat,
                }
            })
            .collect();
        let r = compute_metrics(&preds, &labels).map_err(|e| e.to_string())?;
        let count = |p: u8, y: bool| {
            preds
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a.label_hat == p && b.is_metaphor() == y)
                .count()
        };
        let (tp, fp, fn_, tn) = (count(1, true), count(1, false), count(0, true), count(0, false));
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let accuracy = (tp + tn) as f64 / n as f64;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        ensure(
            (r.tp, r.fp, r.fn_, r.tn) == (tp, fp, fn_, tn)
                && close(r.precision, precision)
                && close(r.recall, recall)
                && close(r.f1, f1)
                && close(r.accuracy, accuracy)
                && r.degenerate == (tp + fp == 0 || tp + fn_ == 0),
            || format!("set {set}: {r:?} vs tallies {tp}/{fp}/{fn_}/{tn}"),
        )?;
        degenerate += usize::from(r.degenerate);
    }
    Ok(format!("1000 sets agree, {degenerate} degenerate"))
}

struct Overfit {
    encoder: ToyEncoder,
    index: BasicIndex,
    corpus: Corpus,
    sampling: Sampling,
}

fn criterion_5() -> (Outcome, Option<Overfit>) {
    let seed = 0;
    let poly = synthetic::polysemy_corpus();
    let from_file = load_corpus(&fixture("polysemy.jsonl"), CorpusFormat::NormalizedJsonl).unwrap();
    if from_file.instances() != poly.instances() {
        return (Err("bundled polysemy corpus differs from the generator".into()), None);
    }
    let index = surface_index(&poly);
    let mut cfg = toy_config(seed, false);
    cfg.eval_train = true;
    let first = train_toy(&cfg, &poly, &index);
    let again = train_toy(&cfg, &poly, &index);
    if !first.record.same_results(&again.record) {
        return (Err(format!("seed {seed}: rerun gave different results")), None);
    }
    let reached = first
        .record
        .epochs
        .iter()
        .position(|e| e.train.as_ref().is_some_and(|t| t.f1 == 1.0));
    let Some(reached) = reached else {
        let best = first.record.epochs.iter().filter_map(|e| e.train.as_ref()).map(|t| t.f1).fold(0.0, f64::max);
        return (Err(format!("train F1 peaked at {best:.3} in {} epochs", cfg.epochs)), None);
    };

    let adv = synthetic::adversarial_corpus();
    let adv_index = surface_index(&adv);
    let full = train_toy(&toy_config(seed, false), &adv, &adv_index).record.test.unwrap();
    let ablated = train_toy(&toy_config(seed, true), &adv, &adv_index).record.test.unwrap();
    let summary = format!(
        "train F1 1.0 at epoch {} of {}, deterministic; adversarial test F1 full {:.3} vs ablated {:.3}",
        reached + 1,
        cfg.epochs,
        full.f1,
        ablated.f1
    );
    if ablated.f1 >= full.f1 {
        return (Err(summary), None);
    }
    let overfit = Overfit {
        encoder: first.encoder,
        index,
        corpus: poly,
        sampling: Sampling {
            k: cfg.pool_size,
            seed,
        },
    };
    (Ok(summary), Some(overfit))
}

fn criterion_6(overfit: Option<&Overfit>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pairs = 0;
    let vua = load_corpus(&fixture("vua/sentences.csv"), CorpusFormat::VuaSharedTask).map_err(|e| e.to_string())?;
    let encoder = toy(6, 16);
    let mut vectors = Vec::new();
    for c in [&synthetic::polysemy_corpus(), &vua] {
        for inst in c.instances() {
            let enc = encoder.encode(&inst.tokens).map_err(|e| e.to_string())?;
            vectors.push(contextual_target_embedding(&enc, enc.alignment(inst.target_index).unwrap()).unwrap());
            vectors.push(enc.hidden_states().row(0).to_owned());
        }
    }
    for w in vectors.windows(2) {
        let (u, v) = (&w[0], &w[1]);
        let c = cosine(u.view(), v.view()).ok_or("zero-norm fixture vector")?;
        ensure((-1.0..=1.0).contains(&c), || format!("cosine {c} out of range"))?;
        let back = cosine(v.view(), u.view()).unwrap();
        ensure((c - back).abs() <= 1e-9, || format!("asymmetric: {c} vs {back}"))?;
        let a = rng.gen_range(1e-3..1e3);
        let b = rng.gen_range(1e-3..1e3);
        let scaled = cosine((u * a).view(), (v * b).view()).unwrap();
        ensure((c - scaled).abs() <= 1e-9, || format!("scale changed {c} to {scaled}"))?;
        pairs += 1;
    }

    let model = overfit.ok_or("no overfit model (criterion 5 failed)")?;
    let items: Vec<(FeatureBundle, Label)> = model
        .corpus
        .instances()
        .iter()
        .map(|inst| {
            featurize(&model.encoder, &model.index, inst, model.sampling).map(|b| (b, inst.label))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let stats = contrast_measure(&items).map_err(|e| e.to_string())?;
    let lit = stats.contextual_vs_basic.literal.ok_or("no literal instances")?;
    let met = stats.contextual_vs_basic.metaphor.ok_or("no metaphor instances")?;
    let summary = format!("{pairs} vector pairs; contextual vs basic: literal {lit:.4}, metaphor {met:.4}");
    ensure(lit > met, || summary.clone())?;
    Ok(summary)
}

#[derive(serde::Deserialize)]
struct TtestCase {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    p: f64,
}

fn criterion_7() -> Outcome {
    let text = std::fs::read_to_string(fixture("ttest_reference.json")).map_err(|e| e.to_string())?;
    let cases: Vec<TtestCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(cases.len() == 50, || format!("{} reference cases", cases.len()))?;
    let mut worst: f64 = 0.0;
    for (i, c) in cases.iter().enumerate() {
        ensure(c.a.len() == 10, || format!("case {i} has {} pairs", c.a.len()))?;
        let pairs: Vec<(f64, f64)> = c.a.iter().copied().zip(c.b.iter().copied()).collect();
        let r = paired_ttest(&pairs).map_err(|e| e.to_string())?;
        ensure((r.t - c.t).abs() <= 1e-6 * c.t.abs().max(1.0), || format!("case {i}: t {} vs {}", r.t, c.t))?;
        worst = worst.max((r.p - c.p).abs());
    }
    ensure(worst <= 1e-6, || format!("max p-value error {worst:e}"))?;
    let flat = vec![(0.7, 0.6); 10];
    ensure(matches!(paired_ttest(&flat), Err(Error::Degenerate(_))), || {
        "zero-variance input did not raise the degenerate error".into()
    })?;
    Ok(format!("50 cases, max p-value error {worst:.1e}; zero variance rejected"))
}

/// Has-literal and no-literal (samples, targets) per release.
const TABLE_COUNTS: [(&str, [(usize, usize); 2]); 2] = [
    ("vua18", [(38_825, 3_874), (5_122, 2_915)]),
    ("vua20", [(18_060, 4_076), (4_136, 2_539)]),
];

fn criterion_8() -> Option<Outcome> {
    let root = std::env::var_os("BASICMIP_VUA_DIR")?;
    let root = Path::new(&root);
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, want) in TABLE_COUNTS {
        let load = |split: &str| load_corpus(&root.join(name).join(format!("{split}.jsonl")), CorpusFormat::NormalizedJsonl);
        let (train, test) = match (load("train"), load("test")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Some(Err(format!("{name}: {e}"))),
        };
        let index = match BasicIndex::build(&train.split(Split::Train), KeyPolicy::surface()) {
            Ok(i) => i,
            Err(e) => return Some(Err(format!("{name}: {e}"))),
        };
        let test = test.split(Split::Test);
        let preds = vec![
            Prediction {
                score: 0.0,
                label_hat: 0
            };
            test.len()
        ];
        let b = match breakdown_eval(&preds, test.instances(), &index) {
            Ok(b) => b,
            Err(e) => return Some(Err(format!("{name}: {e}"))),
        };
        let got = [(b.has_literal.samples, b.has_literal.targets), (b.no_literal.samples, b.no_literal.targets)];
        ok &= got == want;
        notes.push(format!("{name} has-literal {:?} no-literal {:?} (expected {:?} {:?})", got[0], got[1], want[0], want[1]));
    }
    let summary = notes.join("; ");
    Some(if ok { Ok(summary) } else { Err(summary) })
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, what: &str, outcome: Outcome, secs: f64| match outcome {
        Ok(msg) => println!("PASS criterion {n} ({what}): {msg} [{secs:.1}s]"),
        Err(msg) => {
            failed += 1;
            println!("FAIL criterion {n} ({what}): {msg} [{secs:.1}s]");
        }
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed().as_secs_f64())
    };

    let (o, s) = timed(&criterion_1);
    report(1, "degeneration", o, s);
    let (o, s) = timed(&criterion_2);
    report(2, "averaging oracle", o, s);
    let (o, s) = timed(&criterion_3);
    report(3, "loss and gradient", o, s);
    let (o, s) = timed(&criterion_4);
    report(4, "metrics oracle", o, s);
    let t = Instant::now();
    let (o, overfit) = criterion_5();
    report(5, "end-to-end overfit", o, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let o = criterion_6(overfit.as_ref());
    report(6, "contrast properties", o, t.elapsed().as_secs_f64());
    let (o, s) = timed(&criterion_7);
    report(7, "paired t-test", o, s);
    match criterion_8() {
        Some(o) => report(8, "VUA breakdown counts", o, 0.0),
        None => println!("SKIP criterion 8 (VUA breakdown counts): BASICMIP_VUA_DIR not set"),
    }
    println!("SKIP criterion 9 (full fine-tuning reproduction): extended run, see README");
    println!("acceptance finished in {:.1}s, {failed} failed", started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
