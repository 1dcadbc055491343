#![allow(dead_code)]

use std::path::PathBuf;

use basicmip::basic_index::{BasicIndex, KeyPolicy};
use basicmip::config::TrainConfig;
use basicmip::corpus::{Corpus, Split};
use basicmip::encoder::{EncoderMode, ToyEncoder};
use basicmip::training::{train, TrainOutcome};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn toy_config(seed: u64, ablate: bool) -> TrainConfig {
    let mut c = TrainConfig::defaults(EncoderMode::Toy);
    c.seed = seed;
    c.ablate_bmip = ablate;
    c
}

pub fn surface_index(corpus: &Corpus) -> BasicIndex {
    BasicIndex::build(&corpus.split(Split::Train), KeyPolicy::surface()).unwrap()
}

pub fn train_toy(config: &TrainConfig, corpus: &Corpus, index: &BasicIndex) -> TrainOutcome<ToyEncoder> {
    let enc = ToyEncoder::new(config.toy_config()).unwrap();
    train(config, corpus, index, enc).unwrap()
}
