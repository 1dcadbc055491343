use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tokenizers::Tokenizer;

use basicmip::corpus::{load_corpus, load_corpus_with, CorpusFormat, LoadOptions, Split};
use basicmip::training::RunRecord;
use basicmip_transformer::{BertConfig, EncoderOptions, TransformerEncoder};

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy.toml")
}

fn basicmip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basicmip"))
        .args(args)
        .env_remove("BASICMIP_OUTPUT_ROOT")
        .env_remove("BASICMIP_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = basicmip(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Exactly one manifest, listing only files that exist.
fn check_manifest(dir: &Path, command: &str) -> Value {
    let manifests: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() == "manifest.json")
        .collect();
    assert_eq!(manifests.len(), 1, "{}", dir.display());
    let m = read_json(&dir.join("manifest.json"));
    assert_eq!(m["command"], command);
    assert!(m["versions"]["basicmip"].is_string());
    for (_, file) in m["artifacts"].as_object().unwrap() {
        assert!(dir.join(file.as_str().unwrap()).is_file(), "{file}");
    }
    m
}

/// Ingests the polysemy corpus and builds its index.
fn prepared(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let idx = root.join("idx");
    ok(&[
        "ingest",
        "--format",
        "normalized_jsonl",
        "--input",
        s(&core_fixture("polysemy.jsonl")),
        "--out",
        s(&data),
    ]);
    ok(&["build-index", "--data", s(&data), "--out", s(&idx)]);
    (data, idx.join("index.json"))
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = basicmip(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(basicmip(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(basicmip(&["eval"]).status.code(), Some(2));
}

#[test]
fn ingest_vua_fixture_writes_normalized_split_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vua");
    let sentences = core_fixture("vua/sentences.csv");
    let targets = core_fixture("vua/targets.csv");
    ok(&[
        "ingest",
        "--format",
        "vua_shared_task",
        "--input",
        s(&sentences),
        "--targets",
        s(&targets),
        "--split",
        "test",
        "--out",
        s(&out),
    ]);
    let direct = load_corpus_with(
        &sentences,
        CorpusFormat::VuaSharedTask,
        &LoadOptions {
            split: Split::Test,
            targets: Some(targets),
        },
    )
    .unwrap();
    let written = load_corpus(&out.join("test.jsonl"), CorpusFormat::NormalizedJsonl).unwrap();
    assert_eq!(written.instances(), direct.instances());
    assert_eq!(written.len(), 5);

    let m = check_manifest(&out, "ingest");
    assert_eq!(m["data_fingerprints"]["data.test"], direct.fingerprint());
    assert_eq!(
        m["data_fingerprints"]["input.test"],
        basicmip::fingerprint::file_sha256(&sentences).unwrap()
    );
}

#[test]
fn repeated_ingest_shares_one_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    for split in ["train", "test"] {
        ok(&[
            "ingest",
            "--format",
            "vua_shared_task",
            "--input",
            s(&core_fixture("vua/sentences.csv")),
            "--split",
            split,
            "--out",
            s(&out),
        ]);
    }
    let m = check_manifest(&out, "ingest");
    let artifacts = m["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("train") && artifacts.contains_key("test"));
}

#[test]
fn foreign_index_is_rejected_naming_both_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = prepared(dir.path());
    let adv = dir.path().join("adv");
    ok(&[
        "ingest",
        "--format",
        "normalized_jsonl",
        "--input",
        s(&core_fixture("adversarial.jsonl")),
        "--out",
        s(&adv),
    ]);
    ok(&["build-index", "--data", s(&adv), "--out", s(&dir.path().join("advidx"))]);
    let out = basicmip(&[
        "train",
        "--config",
        s(&toy_config()),
        "--data",
        s(&data),
        "--index",
        s(&dir.path().join("advidx/index.json")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let ours = load_corpus(&data.join("train.jsonl"), CorpusFormat::NormalizedJsonl).unwrap();
    let theirs = load_corpus(&adv.join("train.jsonl"), CorpusFormat::NormalizedJsonl).unwrap();
    assert!(stderr.contains(&ours.fingerprint()), "{stderr}");
    assert!(stderr.contains(&theirs.fingerprint()), "{stderr}");
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (data, index) = prepared(dir.path());
    let run = |extra: &[&str]| {
        let mut args = vec!["train", "--data", s(&data), "--index", s(&index), "--out", "unused"];
        args.extend_from_slice(extra);
        basicmip(&args)
    };
    let out = run(&["--encoder-mode", "toy", "--set", "epochs=0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
    // the built-in default mode needs a model directory
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--encoder-mode", "toy", "--set", "no_such_key=1"]).status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (data, index) = prepared(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        s(&toy_config()),
        "--data",
        s(&data),
        "--index",
        s(&index),
        "--out",
        s(&out),
        "--epochs",
        "2",
        "--seed",
        "7",
        "--set",
        "lr_head=0.05",
    ]);
    let m = check_manifest(&out, "train");
    assert_eq!(m["config"]["epochs"], 2);
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["lr_head"], 0.05);
    // from the file, not the built-in default
    assert_eq!(m["config"]["encoder_mode"], "toy");
    assert_eq!(m["seed"], 7);
    let run: RunRecord = serde_json::from_value(read_json(&out.join("run.json"))).unwrap();
    assert_eq!(run.epochs.len(), 2);
    assert_eq!(Some(run.config_fingerprint), m["config_fingerprint"].as_str().map(String::from));
}

#[test]
fn equal_manifests_give_equal_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (data, index) = prepared(dir.path());
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["train", "--config", s(&toy_config()), "--data", s(&data), "--index", s(&index), "--out", s(&out)]);
        let eval = dir.path().join(format!("{name}-eval"));
        ok(&[
            "eval",
            "--checkpoint",
            s(&out.join("model.safetensors")),
            "--data",
            s(&data),
            "--index",
            s(&index),
            "--out",
            s(&eval),
        ]);
        let run: RunRecord = serde_json::from_value(read_json(&out.join("run.json"))).unwrap();
        reports.push((
            read_json(&out.join("manifest.json")),
            run,
            std::fs::read(eval.join("metrics.json")).unwrap(),
            std::fs::read(eval.join("predictions.jsonl")).unwrap(),
        ));
    }
    let (a, b) = (&reports[0], &reports[1]);
    assert_eq!(a.0, b.0);
    assert!(a.1.same_results(&b.1));
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
}

#[test]
fn every_subcommand_runs_on_the_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (data, index) = prepared(root);
    check_manifest(&root.join("data"), "ingest");
    check_manifest(&root.join("idx"), "build-index");
    let cfg = toy_config();
    let common = |out: &Path| -> Vec<String> {
        ["--config", s(&cfg), "--data", s(&data), "--index", s(&index), "--out", s(out)]
            .iter()
            .map(|a| a.to_string())
            .collect()
    };

    let full = root.join("full");
    let ablated = root.join("ablated");
    let mut args = vec!["train".to_string()];
    args.extend(common(&full));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    args = vec!["train".into(), "--ablate-bmip".into()];
    args.extend(common(&ablated));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    check_manifest(&full, "train");

    for (name, ablate) in [("suite-full", false), ("suite-ablated", true)] {
        let mut args = vec!["seed-suite".to_string(), "--n-seeds".into(), "2".into(), "--epochs".into(), "2".into()];
        if ablate {
            args.push("--ablate-bmip".into());
        }
        args.extend(common(&root.join(name)));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        let runs: Vec<RunRecord> = serde_json::from_value(read_json(&root.join(name).join("runs.json"))).unwrap();
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), [0, 1]);
        assert!(runs.iter().all(|r| r.ablate_bmip == ablate));
        check_manifest(&root.join(name), "seed-suite");
    }
    let tt = root.join("ttest");
    let out = basicmip(&[
        "ttest",
        "--a",
        s(&root.join("suite-full/runs.json")),
        "--b",
        s(&root.join("suite-ablated/runs.json")),
        "--out",
        s(&tt),
    ]);
    // two seeds can tie exactly; the degenerate case is an error, not a crash
    match out.status.code() {
        Some(0) => {
            let p = read_json(&tt.join("ttest.json"))["p"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&p));
            check_manifest(&tt, "ttest");
        }
        Some(1) => assert!(String::from_utf8_lossy(&out.stderr).contains("variance")),
        other => panic!("ttest exited with {other:?}"),
    }

    let ckpt = full.join("model.safetensors");
    let analysis = |cmd: &str, out: &Path, extra: &[&str]| {
        let mut args = vec![cmd, "--checkpoint", s(&ckpt), "--data", s(&data), "--index", s(&index), "--out", s(out)];
        args.extend_from_slice(extra);
        ok(&args)
    };

    analysis("eval", &root.join("eval"), &[]);
    let metrics = read_json(&root.join("eval/metrics.json"));
    let run: RunRecord = serde_json::from_value(read_json(&full.join("run.json"))).unwrap();
    let test = run.test.unwrap();
    assert_eq!(metrics["report"]["f1"].as_f64().unwrap(), test.f1);
    assert_eq!(metrics["report"]["tp"].as_u64().unwrap() as usize, test.tp);
    let preds = std::fs::read_to_string(root.join("eval/predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), test.total());
    check_manifest(&root.join("eval"), "eval");

    let table = analysis("breakdown", &root.join("breakdown"), &["--iaa", "0.8"]);
    assert!(table.contains("has literal"));
    let bd = read_json(&root.join("breakdown/breakdown.json"));
    let total = bd["has_literal"]["samples"].as_u64().unwrap() + bd["no_literal"]["samples"].as_u64().unwrap();
    assert_eq!(total as usize, test.total());
    check_manifest(&root.join("breakdown"), "breakdown");

    // counts without a model
    let counts = root.join("counts");
    ok(&["breakdown", "--data", s(&data), "--index", s(&index), "--out", s(&counts)]);
    let c = read_json(&counts.join("breakdown.json"));
    assert_eq!(c["has_literal"]["samples"], bd["has_literal"]["samples"]);
    assert!(c["has_literal"]["report"].is_null());

    let cache = root.join("cache");
    analysis("contrast", &root.join("contrast"), &["--cache-dir", s(&cache)]);
    analysis("contrast", &root.join("contrast2"), &["--cache-dir", s(&cache)]);
    let c1 = read_json(&root.join("contrast/contrast.json"));
    assert_eq!(c1, read_json(&root.join("contrast2/contrast.json")));
    for pairing in ["contextual_vs_frequent", "contextual_vs_basic"] {
        for group in ["metaphor", "literal"] {
            let v = c1[pairing][group].as_f64().unwrap();
            assert!((-1.0..=1.0).contains(&v));
        }
    }
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);

    let cs = root.join("cases");
    ok(&[
        "casestudy",
        "--full",
        s(&ckpt),
        "--ablated",
        s(&ablated.join("model.safetensors")),
        "--data",
        s(&data),
        "--index",
        s(&index),
        "--out",
        s(&cs),
    ]);
    for case in read_json(&cs.join("cases.json")).as_array().unwrap() {
        assert!(case["basic_examples"].as_array().unwrap().len() <= 3);
    }
    check_manifest(&cs, "casestudy");

    analysis("pca-export", &root.join("pca"), &["--words", "back,hot"]);
    let pca = read_json(&root.join("pca/pca.json"));
    assert_eq!(pca.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(root.join("pca/pca_back.csv")).unwrap();
    assert!(csv.starts_with("label,x,y"));
    assert!(csv.contains("back:basic") && csv.contains("back:frequent"));
    check_manifest(&root.join("pca"), "pca-export");
}

#[test]
fn output_root_places_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = prepared(dir.path());
    let root = dir.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_basicmip"))
        .args(["build-index", "--data", s(&data), "--out", "idx"])
        .env("BASICMIP_OUTPUT_ROOT", &root)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("idx/index.json").is_file());
    // the flag beats the variable
    let flag_root = dir.path().join("flag");
    let out = Command::new(env!("CARGO_BIN_EXE_basicmip"))
        .args(["build-index", "--data", s(&data), "--out", "idx", "--output-root", s(&flag_root)])
        .env("BASICMIP_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_root.join("idx/index.json").is_file());
}

#[test]
fn pretrained_encoder_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let (data, index) = prepared(dir.path());
    let tiny = Path::new(env!("CARGO_MANIFEST_DIR")).join("../transformer/tests/fixtures/tiny-bert");
    let config = BertConfig::load(&tiny.join("config.json")).unwrap();
    let tokenizer = Tokenizer::from_file(tiny.join("tokenizer.json")).unwrap();
    let model_dir = dir.path().join("model");
    TransformerEncoder::random(config, tokenizer, EncoderOptions::default(), 3)
        .unwrap()
        .save(&model_dir)
        .unwrap();
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--index",
        s(&index),
        "--out",
        s(&out),
        "--pretrained-path",
        s(&model_dir),
        "--epochs",
        "1",
        "--set",
        "lr_encoder=1e-3",
    ]);
    let m = check_manifest(&out, "train");
    assert_eq!(m["config"]["encoder_mode"], "pretrained");
    assert!(m["data_fingerprints"]["pretrained"].is_string());
    ok(&[
        "eval",
        "--checkpoint",
        s(&out.join("model.safetensors")),
        "--data",
        s(&data),
        "--index",
        s(&index),
        "--out",
        s(&dir.path().join("eval")),
    ]);
    let run: RunRecord = serde_json::from_value(read_json(&out.join("run.json"))).unwrap();
    let metrics = read_json(&dir.path().join("eval/metrics.json"));
    assert_eq!(metrics["report"]["f1"].as_f64().unwrap(), run.test.unwrap().f1);
}
