//! Small generated corpora for end-to-end checks.
//!
//! Context words come in ordered "levels". Every target word has a literal
//! level; its literal sentences draw context from that level and its
//! metaphorical sentences from the next one up. Levels overlap across
//! targets, so context alone does not decide the label: a sentence is
//! metaphorical when its context sits one level above the target's literal
//! contexts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedInstance, Corpus, Label, Split};
use crate::error::Result;

pub const LEVEL_WORDS: [[&str; 3]; 5] = [
    ["stone", "bread", "hand"],
    ["chair", "river", "door"],
    ["music", "money", "dinner"],
    ["idea", "hope", "plan"],
    ["theory", "fate", "virtue"],
];

/// Counts of (literal, metaphor) instances per split for one target word.
#[derive(Clone, Copy, Debug)]
pub struct TargetSpec {
    pub word: &'static str,
    pub level: usize,
    pub train: (usize, usize),
    pub dev: (usize, usize),
    pub test: (usize, usize),
}

pub fn generate(name: &str, targets: &[TargetSpec], seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    for t in targets {
        for (split, (lit, met)) in [(Split::Train, t.train), (Split::Dev, t.dev), (Split::Test, t.test)] {
            for (label, n) in [(Label::Literal, lit), (Label::Metaphor, met)] {
                let level = t.level + usize::from(label.is_metaphor());
                for i in 0..n {
                    let words = &LEVEL_WORDS[level];
                    let a = words.choose(&mut rng).expect("non-empty level");
                    let b = words.choose(&mut rng).expect("non-empty level");
                    let c = words.choose(&mut rng).expect("non-empty level");
                    let tokens = ["the", a, t.word, b, c].map(String::from).to_vec();
                    let id = format!(
                        "{name}-{}-{}-{}{i}",
                        split.as_str(),
                        t.word,
                        if label.is_metaphor() { "m" } else { "l" }
                    );
                    instances.push(AnnotatedInstance::new(id, tokens, 2, label, split)?);
                }
            }
        }
    }
    Corpus::new(instances)
}

/// 40 instances, four targets, balanced senses.
pub fn polysemy_corpus() -> Corpus {
    let spec = |word, level| TargetSpec {
        word,
        level,
        train: (3, 3),
        dev: (1, 1),
        test: (1, 1),
    };
    generate(
        "poly",
        &[spec("back", 0), spec("hot", 1), spec("see", 2), spec("get", 3)],
        7,
    )
    .expect("generated instances are valid")
}

const ADVERSARIAL_MIXED: [&str; 32] = [
    "back", "hot", "see", "run", "break", "warm", "look", "walk", "hold", "cut", "deep", "high",
    "open", "close", "carry", "drop", "light", "heavy", "sharp", "bright", "cold", "dark", "push", "pull",
    "rise", "sink", "build", "burn", "catch", "throw", "climb", "shine",
];

const ADVERSARIAL_LITERAL_ONLY: [&str; 16] = [
    "get", "grasp", "head", "fall", "touch", "spill", "weigh", "soft", "clear", "bend", "flow", "crack",
    "shape", "twist", "fold", "glow",
];

/// The metaphorical sense outnumbers the literal one, and a third of the
/// targets have only literal training annotations.
pub fn adversarial_corpus() -> Corpus {
    let mut specs = Vec::new();
    for (i, word) in ADVERSARIAL_MIXED.into_iter().enumerate() {
        specs.push(TargetSpec {
            word,
            level: i % 4,
            train: (2, 3),
            dev: (1, 1),
            test: (1, 1),
        });
    }
    for (i, word) in ADVERSARIAL_LITERAL_ONLY.into_iter().enumerate() {
        specs.push(TargetSpec {
            word,
            level: i % 4,
            train: (3, 0),
            dev: (0, 1),
            test: (2, 3),
        });
    }
    generate("adv", &specs, 11).expect("generated instances are valid")
}
