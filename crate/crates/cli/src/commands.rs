use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::Serialize;

use basicmip::basic_index::{BasicIndex, EmbeddingCache, KeyPolicy, LemmaTable, Sampling};
use basicmip::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT_VERSION};
use basicmip::config::TrainConfig;
use basicmip::corpus::{load_corpus, load_corpus_with, AnnotatedInstance, Corpus, CorpusFormat, LoadOptions, Split};
use basicmip::encoder::{Encoder, EncoderMode, ToyEncoder};
use basicmip::evaluation::{breakdown_eval, case_study, compute_metrics, contrast_measure, paired_ttest, pca_export, EvalReport};
use basicmip::fingerprint::file_sha256;
use basicmip::model::{ModelHead, Prediction};
use basicmip::training::{featurize, paired_f1, predict_instances, run_seed_suite, train, RunRecord, TrainOutcome};
use basicmip::{Error, Result};
use basicmip_transformer::{EncoderOptions, TransformerEncoder};

use crate::args::*;
use crate::manifest::RunManifest;

pub struct Context {
    pub output_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self, out: &Path) -> Result<PathBuf> {
        let dir = match &self.output_root {
            Some(root) if out.is_relative() => root.join(out),
            _ => out.to_path_buf(),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, file: &str, value: &T, m: &mut RunManifest) -> Result<()> {
    let path = dir.join(file);
    std::fs::write(&path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&path, e))?;
    m.artifact(dir, file)
}

fn write_text(dir: &Path, file: &str, text: &str, m: &mut RunManifest) -> Result<()> {
    let path = dir.join(file);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    m.artifact(dir, file)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Reads `train.jsonl`, `dev.jsonl` and `test.jsonl` from `dir`, whichever exist.
pub fn load_data(dir: &Path) -> Result<Corpus> {
    let mut parts = Vec::new();
    for split in Split::ALL {
        let path = dir.join(format!("{split}.jsonl"));
        if !path.exists() {
            continue;
        }
        let part = load_corpus(&path, CorpusFormat::NormalizedJsonl)?;
        if let Some(inst) = part.instances().iter().find(|i| i.split != split) {
            return Err(Error::Validation(format!(
                "{}: instance {} is marked {}",
                path.display(),
                inst.reference(),
                inst.split
            )));
        }
        parts.push(part);
    }
    if parts.is_empty() {
        return Err(Error::Validation(format!(
            "{} has none of train.jsonl, dev.jsonl, test.jsonl",
            dir.display()
        )));
    }
    Corpus::merge(parts)
}

fn record_data(m: &mut RunManifest, corpus: &Corpus) {
    for split in Split::ALL {
        let part = corpus.split(split);
        if !part.is_empty() {
            m.input(format!("data.{split}"), part.fingerprint());
        }
    }
}

fn key_policy(args: &KeyArgs) -> Result<KeyPolicy> {
    let policy = match args.key {
        KeyArg::Surface => KeyPolicy::surface(),
        KeyArg::Lemma => {
            let path = args
                .lemma_table
                .as_ref()
                .ok_or_else(|| Error::Config("--key lemma needs --lemma-table".into()))?;
            KeyPolicy::lemma(LemmaTable::load(path)?)
        }
    };
    Ok(policy.with_pos(args.key_pos))
}

fn split_instances(corpus: &Corpus, split: Split) -> Result<Vec<AnnotatedInstance>> {
    let part = corpus.split(split);
    if part.is_empty() {
        return Err(Error::Validation(format!("the data has no {split} instances")));
    }
    Ok(part.instances().to_vec())
}

// ---- encoders and checkpoints ----

fn toy_encoder(cfg: &TrainConfig) -> Result<ToyEncoder> {
    ToyEncoder::new(cfg.toy_config())
}

fn pretrained_encoder(cfg: &TrainConfig) -> Result<TransformerEncoder> {
    let dir = cfg
        .pretrained_path
        .as_ref()
        .ok_or_else(|| Error::Config("encoder_mode = \"pretrained\" needs pretrained_path".into()))?;
    TransformerEncoder::load(
        dir,
        EncoderOptions {
            max_len: cfg.max_len,
            pooling: cfg.pooling,
            freeze_layers: cfg.freeze_layers,
        },
    )
}

/// A trained model restored from a checkpoint, paired with its index.
struct Model<E> {
    config: TrainConfig,
    head: ModelHead,
    encoder: E,
    index: BasicIndex,
    /// Where the basic-embedding cache for these weights lives, if anywhere.
    cache: Option<(PathBuf, String)>,
}

impl<E: Encoder> Model<E> {
    fn restore(ckpt: &Checkpoint, mut encoder: E, index: BasicIndex, ckpt_sha: String, cache_root: Option<&Path>) -> Result<Self> {
        if ckpt.meta.index_fingerprint != index.corpus_fingerprint() {
            return Err(Error::Fingerprint {
                expected: ckpt.meta.index_fingerprint.clone(),
                found: index.corpus_fingerprint().to_string(),
            });
        }
        ckpt.load_encoder(&mut encoder)?;
        let cache = cache_root.map(|root| (root.join(&ckpt_sha[..16]), ckpt_sha));
        let index = match &cache {
            Some((dir, sha)) if dir.join("manifest.json").exists() => {
                let restored = EmbeddingCache::load(dir, sha, encoder.weights_version())?;
                log::info!("restored {} cached basic-pool vectors from {}", restored.len(), dir.display());
                index.with_cache(restored)
            }
            _ => index,
        };
        Ok(Model {
            config: ckpt.meta.config.clone(),
            head: ckpt.head()?,
            encoder,
            index,
            cache,
        })
    }

    fn sampling(&self) -> Sampling {
        Sampling {
            k: self.config.pool_size,
            seed: self.config.seed,
        }
    }

    fn predict(&self, instances: &[AnnotatedInstance]) -> Result<Vec<Prediction>> {
        predict_instances(
            &self.encoder,
            &self.head,
            &self.index,
            instances,
            self.sampling(),
            self.config.threshold,
        )
    }

    fn save_cache(&self) -> Result<()> {
        if let Some((dir, sha)) = &self.cache {
            self.index.cache().save(dir, sha)?;
        }
        Ok(())
    }
}

/// Loads the checkpoint at `$path` and runs `$body` with `$model` bound to a
/// [`Model`] of the right encoder type.
macro_rules! with_model {
    ($ctx:expr, $path:expr, $corpus:expr, $index_path:expr, |$model:ident| $body:expr) => {{
        let path: &Path = $path;
        let ckpt = Checkpoint::read(path)?;
        let sha = file_sha256(path)?;
        let cfg = ckpt.meta.config.clone();
        let index = BasicIndex::load($index_path, &$corpus.split(Split::Train), cfg.key_policy()?)?;
        let cache_root = $ctx.cache_dir.as_deref();
        match cfg.encoder_mode {
            EncoderMode::Toy => {
                let $model = Model::restore(&ckpt, toy_encoder(&cfg)?, index, sha, cache_root)?;
                let out = $body;
                $model.save_cache()?;
                out
            }
            EncoderMode::Pretrained => {
                let $model = Model::restore(&ckpt, pretrained_encoder(&cfg)?, index, sha, cache_root)?;
                let out = $body;
                $model.save_cache()?;
                out
            }
        }
    }};
}

// ---- config resolution ----

fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

/// Defaults, then the config file, then command-line flags.
fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let file = match &a.config {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
            // paths in a config file are relative to the file
            let base = path.parent().unwrap_or(Path::new(""));
            for key in ["pretrained_path", "lemma_table"] {
                if let Some(toml::Value::String(p)) = table.get(key) {
                    if Path::new(p).is_relative() {
                        let joined = base.join(p).to_string_lossy().into_owned();
                        table.insert(key.into(), toml::Value::String(joined));
                    }
                }
            }
            Some(table)
        }
    };
    let mut overrides = toml::Table::new();
    for item in &a.set {
        let (k, v) = parse_override(item)?;
        overrides.insert(k, v);
    }
    if let Some(seed) = a.seed {
        overrides.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    if let Some(epochs) = a.epochs {
        overrides.insert("epochs".into(), toml::Value::Integer(epochs as i64));
    }
    if a.ablate_bmip {
        overrides.insert("ablate_bmip".into(), toml::Value::Boolean(true));
    }
    if let Some(mode) = a.encoder_mode {
        let s = match mode {
            ModeArg::Toy => "toy",
            ModeArg::Pretrained => "pretrained",
        };
        overrides.insert("encoder_mode".into(), toml::Value::String(s.into()));
    }
    if let Some(p) = &a.pretrained_path {
        overrides.insert("pretrained_path".into(), toml::Value::String(p.to_string_lossy().into_owned()));
    }
    TrainConfig::resolve(file.as_ref(), &overrides)
}

/// Loads data and index for a training command and starts its manifest.
fn prepare_training(command: &str, a: &TrainArgs) -> Result<(TrainConfig, Corpus, BasicIndex, RunManifest)> {
    let cfg = resolve_config(a)?;
    let corpus = load_data(&a.data)?;
    let index = BasicIndex::load(&a.index, &corpus.split(Split::Train), cfg.key_policy()?)?;
    let mut m = RunManifest::new(command).with_config(&cfg);
    record_data(&mut m, &corpus);
    m.input_file("index", &a.index)?;
    if let (EncoderMode::Pretrained, Some(dir)) = (cfg.encoder_mode, &cfg.pretrained_path) {
        m.input_file("pretrained", &dir.join("model.safetensors"))?;
    }
    if let Some(table) = &cfg.lemma_table {
        m.input_file("lemma_table", table)?;
    }
    Ok((cfg, corpus, index, m))
}

// ---- subcommands ----

pub fn ingest(ctx: &Context, a: &IngestArgs) -> Result<()> {
    let format = match a.format {
        Format::VuaSharedTask => CorpusFormat::VuaSharedTask,
        Format::NormalizedJsonl => CorpusFormat::NormalizedJsonl,
    };
    let opts = LoadOptions {
        split: a.split.into(),
        targets: a.targets.clone(),
    };
    let corpus = load_corpus_with(&a.input, format, &opts)?;
    for issue in corpus.issues() {
        log::warn!("{}:{}: {}", a.input.display(), issue.line, issue.message);
    }
    let out = ctx.out_dir(&a.out)?;
    // successive ingests into one directory share its manifest
    let mut m = match RunManifest::read(&out) {
        Ok(prev) if prev.command == "ingest" => prev,
        _ => RunManifest::new("ingest"),
    };
    m.input_file(format!("input.{}", a.split_label(&corpus)), &a.input)?;
    if let Some(t) = &a.targets {
        m.input_file(format!("targets.{}", a.split_label(&corpus)), t)?;
    }
    let mut written = Vec::new();
    for split in Split::ALL {
        let part = corpus.split(split);
        if part.is_empty() {
            continue;
        }
        let file = format!("{split}.jsonl");
        part.write_jsonl(&out.join(&file))?;
        m.artifact(&out, &file)?;
        m.input(format!("data.{split}"), part.fingerprint());
        written.push(format!("{split}: {}", part.len()));
    }
    m.write(&out)?;
    if written.is_empty() {
        log::warn!("{} produced no instances", a.input.display());
    }
    println!(
        "ingested {} instances ({}), {} rows skipped -> {}",
        corpus.len(),
        written.join(", "),
        corpus.issues().len(),
        out.display()
    );
    Ok(())
}

impl IngestArgs {
    fn split_label(&self, corpus: &Corpus) -> String {
        match self.format {
            Format::VuaSharedTask => Split::from(self.split).to_string(),
            Format::NormalizedJsonl => {
                let splits: Vec<&str> = Split::ALL
                    .iter()
                    .filter(|s| !corpus.split(**s).is_empty())
                    .map(|s| s.as_str())
                    .collect();
                if splits.is_empty() {
                    "empty".into()
                } else {
                    splits.join("+")
                }
            }
        }
    }
}

pub fn build_index(ctx: &Context, a: &BuildIndexArgs) -> Result<()> {
    let corpus = load_data(&a.data)?;
    let train_split = corpus.split(Split::Train);
    if train_split.is_empty() {
        return Err(Error::Validation(format!("{} has no train instances", a.data.display())));
    }
    let index = BasicIndex::build(&train_split, key_policy(&a.key)?)?;
    let out = ctx.out_dir(&a.out)?;
    index.save(&out.join("index.json"))?;
    let mut m = RunManifest::new("build-index");
    m.input("data.train", train_split.fingerprint());
    if let Some(t) = &a.key.lemma_table {
        m.input_file("lemma_table", t)?;
    }
    m.artifact(&out, "index.json")?;
    m.write(&out)?;
    let pooled = index.pools().values().filter(|p| !p.is_empty()).count();
    println!(
        "index over {} train instances: {pooled} keys with literal pools, key policy {} -> {}",
        train_split.len(),
        index.key_fn_id(),
        out.display()
    );
    Ok(())
}

fn save_run<E: Encoder>(
    out: &Path,
    cfg: &TrainConfig,
    index: &BasicIndex,
    outcome: &TrainOutcome<E>,
    m: &mut RunManifest,
) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        head: *outcome.head.config(),
        encoder_mode: cfg.encoder_mode,
        encoder_weights_version: outcome.encoder.weights_version(),
        config_fingerprint: cfg.fingerprint(),
        index_fingerprint: index.corpus_fingerprint().to_string(),
        key_fn_id: index.key_fn_id(),
        config: cfg.clone(),
    };
    save_checkpoint(&out.join("model.safetensors"), &outcome.head, &outcome.encoder, &meta)?;
    m.artifact(out, "model.safetensors")?;
    write_text(out, "config.toml", &cfg.to_toml_string(), m)?;
    write_json(out, "run.json", &outcome.record, m)?;
    Ok(())
}

fn print_run(r: &RunRecord) {
    for e in &r.epochs {
        println!("epoch {:>3}  loss {:>10.4}  dev {}", e.epoch, e.loss_sum, e.dev.summary());
    }
    println!("best epoch {} (dev F1 {:.4})", r.best_epoch, r.best_dev_f1);
    if let Some(t) = &r.test {
        println!("test {}", t.summary());
    }
}

pub fn train_cmd(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let (cfg, corpus, index, mut m) = prepare_training("train", a)?;
    let out = ctx.out_dir(&a.out)?;
    let record = match cfg.encoder_mode {
        EncoderMode::Toy => {
            let outcome = train(&cfg, &corpus, &index, toy_encoder(&cfg)?)?;
            save_run(&out, &cfg, &index, &outcome, &mut m)?;
            outcome.record
        }
        EncoderMode::Pretrained => {
            let outcome = train(&cfg, &corpus, &index, pretrained_encoder(&cfg)?)?;
            save_run(&out, &cfg, &index, &outcome, &mut m)?;
            outcome.record
        }
    };
    m.write(&out)?;
    print_run(&record);
    Ok(())
}

pub fn seed_suite(ctx: &Context, a: &SeedSuiteArgs) -> Result<()> {
    let (cfg, corpus, index, mut m) = prepare_training("seed-suite", &a.train)?;
    let out = ctx.out_dir(&a.train.out)?;
    let result = match cfg.encoder_mode {
        EncoderMode::Toy => run_seed_suite(&cfg, &corpus, &index, a.n_seeds, toy_encoder),
        EncoderMode::Pretrained => run_seed_suite(&cfg, &corpus, &index, a.n_seeds, pretrained_encoder),
    };
    let (runs, failure) = match result {
        Ok(runs) => (runs, None),
        Err(f) => (f.completed.clone(), Some(f)),
    };
    write_json(&out, "runs.json", &runs, &mut m)?;
    m.write(&out)?;
    for r in &runs {
        let f1 = r.test.as_ref().map_or("-".into(), |t| format!("{:.4}", t.f1));
        println!("seed {:>4}  best epoch {:>3}  dev F1 {:.4}  test F1 {f1}", r.seed, r.best_epoch, r.best_dev_f1);
    }
    match failure {
        None => Ok(()),
        Some(f) => Err(Error::Validation(f.to_string())),
    }
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    sentence_id: &'a str,
    target_index: usize,
    target: &'a str,
    label: u8,
    score: f64,
    label_hat: u8,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    split: Split,
    checkpoint_config_fingerprint: &'a str,
    report: &'a EvalReport,
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let corpus = load_data(&a.data.data)?;
    let split = Split::from(a.data.split);
    let instances = split_instances(&corpus, split)?;
    let (preds, cfg_fp) = with_model!(ctx, &a.checkpoint, corpus, &a.data.index, |model| {
        (model.predict(&instances)?, model.config.fingerprint())
    });
    let labels: Vec<_> = instances.iter().map(|i| i.label).collect();
    let report = compute_metrics(&preds, &labels)?;

    let out = ctx.out_dir(&a.data.out)?;
    let mut m = analysis_manifest("eval", &a.checkpoint, &a.data.index, &corpus)?;
    write_json(
        &out,
        "metrics.json",
        &EvalOutput {
            split,
            checkpoint_config_fingerprint: &cfg_fp,
            report: &report,
        },
        &mut m,
    )?;
    let mut lines = String::new();
    for (inst, p) in instances.iter().zip(&preds) {
        let row = PredictionRow {
            sentence_id: &inst.sentence_id,
            target_index: inst.target_index,
            target: inst.target_word(),
            label: u8::from(inst.label.is_metaphor()),
            score: p.score,
            label_hat: p.label_hat,
        };
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');
    }
    write_text(&out, "predictions.jsonl", &lines, &mut m)?;
    m.write(&out)?;
    println!("{split} ({} instances): {}", instances.len(), report.summary());
    Ok(())
}

fn analysis_manifest(command: &str, checkpoint: &Path, index: &Path, corpus: &Corpus) -> Result<RunManifest> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let mut m = RunManifest::new(command).with_config(&ckpt.meta.config);
    m.input_file("checkpoint", checkpoint)?;
    m.input_file("index", index)?;
    record_data(&mut m, corpus);
    Ok(m)
}

pub fn breakdown(ctx: &Context, a: &BreakdownArgs) -> Result<()> {
    let corpus = load_data(&a.data.data)?;
    let split = Split::from(a.data.split);
    let instances = split_instances(&corpus, split)?;
    let (result, mut m) = match &a.checkpoint {
        Some(ckpt) => {
            let result = with_model!(ctx, ckpt, corpus, &a.data.index, |model| {
                breakdown_eval(&model.predict(&instances)?, &instances, &model.index)?
            });
            (result, analysis_manifest("breakdown", ckpt, &a.data.index, &corpus)?)
        }
        None => {
            let index = BasicIndex::load(&a.data.index, &corpus.split(Split::Train), key_policy(&a.key)?)?;
            let placeholder = vec![
                Prediction {
                    score: 0.0,
                    label_hat: 0
                };
                instances.len()
            ];
            let mut result = breakdown_eval(&placeholder, &instances, &index)?;
            result.has_literal.report = None;
            result.no_literal.report = None;
            let mut m = RunManifest::new("breakdown");
            m.input_file("index", &a.data.index)?;
            record_data(&mut m, &corpus);
            (result, m)
        }
    };
    let table = result.table(a.iaa);
    let out = ctx.out_dir(&a.data.out)?;
    write_json(&out, "breakdown.json", &result, &mut m)?;
    write_text(&out, "breakdown.txt", &table, &mut m)?;
    m.write(&out)?;
    print!("{table}");
    Ok(())
}

pub fn contrast(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let corpus = load_data(&a.data.data)?;
    let split = Split::from(a.data.split);
    let instances = split_instances(&corpus, split)?;
    let stats = with_model!(ctx, &a.checkpoint, corpus, &a.data.index, |model| {
        let items = instances
            .iter()
            .map(|inst| Ok((featurize(&model.encoder, &model.index, inst, model.sampling())?, inst.label)))
            .collect::<Result<Vec<_>>>()?;
        contrast_measure(&items)?
    });
    if stats.excluded > 0 {
        log::warn!("{} instances excluded for zero-norm vectors", stats.excluded);
    }
    let out = ctx.out_dir(&a.data.out)?;
    let mut m = analysis_manifest("contrast", &a.checkpoint, &a.data.index, &corpus)?;
    let table = stats.table();
    write_json(&out, "contrast.json", &stats, &mut m)?;
    write_text(&out, "contrast.txt", &table, &mut m)?;
    m.write(&out)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct TtestOutput {
    seeds: Vec<u64>,
    pairs: Vec<(f64, f64)>,
    #[serde(flatten)]
    test: basicmip::evaluation::TTest,
}

pub fn ttest(ctx: &Context, a: &TtestArgs) -> Result<()> {
    let runs_a: Vec<RunRecord> = read_json(&a.a)?;
    let runs_b: Vec<RunRecord> = read_json(&a.b)?;
    let pairs = paired_f1(&runs_a, &runs_b)?;
    let test = paired_ttest(&pairs)?;
    let out = ctx.out_dir(&a.out)?;
    let mut m = RunManifest::new("ttest");
    m.input_file("a", &a.a)?;
    m.input_file("b", &a.b)?;
    let output = TtestOutput {
        seeds: runs_a.iter().map(|r| r.seed).collect(),
        pairs,
        test,
    };
    write_json(&out, "ttest.json", &output, &mut m)?;
    m.write(&out)?;
    println!(
        "n = {}  mean difference {:.4}  t = {:.4}  p = {:.4} (two-tailed)",
        test.n, test.mean_diff, test.t, test.p
    );
    Ok(())
}

pub fn casestudy(ctx: &Context, a: &CasestudyArgs) -> Result<()> {
    let corpus = load_data(&a.data.data)?;
    let split = Split::from(a.data.split);
    let instances = split_instances(&corpus, split)?;
    let (full, index) = with_model!(ctx, &a.full, corpus, &a.data.index, |model| {
        if model.head.is_ablated() {
            log::warn!("{} is an ablated model", a.full.display());
        }
        (model.predict(&instances)?, model.index.clone())
    });
    let ablated = with_model!(ctx, &a.ablated, corpus, &a.data.index, |model| {
        if !model.head.is_ablated() {
            log::warn!("{} is not an ablated model", a.ablated.display());
        }
        model.predict(&instances)?
    });
    let cases = case_study(&full, &ablated, &instances, &index, a.examples, a.seed)?;

    let mut text = String::new();
    for c in &cases {
        let _ = writeln!(text, "target: {}\ncase: {}", c.target, c.sentence);
        for ex in &c.basic_examples {
            let _ = writeln!(text, "  basic: {ex}");
        }
        text.push('\n');
    }
    let out = ctx.out_dir(&a.data.out)?;
    let mut m = RunManifest::new("casestudy");
    m.input_file("checkpoint.full", &a.full)?;
    m.input_file("checkpoint.ablated", &a.ablated)?;
    m.input_file("index", &a.data.index)?;
    m.seed = Some(a.seed);
    record_data(&mut m, &corpus);
    write_json(&out, "cases.json", &cases, &mut m)?;
    write_text(&out, "cases.txt", &text, &mut m)?;
    m.write(&out)?;
    print!("{text}");
    println!("{} cases", cases.len());
    Ok(())
}

#[derive(Serialize)]
struct PcaSummary {
    word: String,
    points: usize,
    explained_variance_ratio: [f64; 2],
    degenerate: bool,
    file: String,
}

pub fn pca(ctx: &Context, a: &PcaArgs) -> Result<()> {
    let corpus = load_data(&a.data.data)?;
    let split = Split::from(a.data.split);
    let instances = split_instances(&corpus, split)?;
    let out = ctx.out_dir(&a.data.out)?;
    let mut m = analysis_manifest("pca-export", &a.checkpoint, &a.data.index, &corpus)?;
    let exports = with_model!(ctx, &a.checkpoint, corpus, &a.data.index, |model| {
        let mut exports = Vec::new();
        for word in &a.words {
            let word = word.to_lowercase();
            let matching: Vec<&AnnotatedInstance> =
                instances.iter().filter(|i| i.target_word().to_lowercase() == word).collect();
            if matching.is_empty() {
                return Err(Error::Validation(format!("no {split} instance has target `{word}`")));
            }
            let mut vectors: Vec<(String, Array1<f64>)> = Vec::new();
            for inst in &matching {
                let b = featurize(&model.encoder, &model.index, inst, model.sampling())?;
                if vectors.is_empty() {
                    vectors.push((format!("{word}:basic"), b.v_basic.clone()));
                    vectors.push((format!("{word}:frequent"), b.v_aggregated.clone()));
                }
                let sense = if inst.label.is_metaphor() { "metaphor" } else { "literal" };
                vectors.push((format!("{word}:{sense}"), b.v_context_target));
            }
            exports.push((word, pca_export(&vectors)?));
        }
        exports
    });
    let mut summary = Vec::new();
    for (word, export) in &exports {
        let file = format!("pca_{word}.csv");
        export.write_csv(&out.join(&file))?;
        m.artifact(&out, &file)?;
        println!(
            "{word}: {} points, explained variance {:.3} / {:.3}{}",
            export.rows.len(),
            export.explained_variance_ratio[0],
            export.explained_variance_ratio[1],
            if export.degenerate { " (degenerate)" } else { "" }
        );
        summary.push(PcaSummary {
            word: word.clone(),
            points: export.rows.len(),
            explained_variance_ratio: export.explained_variance_ratio,
            degenerate: export.degenerate,
            file,
        });
    }
    write_json(&out, "pca.json", &summary, &mut m)?;
    m.write(&out)?;
    Ok(())
}
