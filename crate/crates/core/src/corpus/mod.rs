//! Annotated metaphor corpora.
//!
//! Every annotated target word becomes one [`AnnotatedInstance`]: the full
//! pre-tokenized sentence, the target's word position and a binary label.
//! Two on-disk layouts are understood, see [`CorpusFormat`].

mod align;
mod vua;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fingerprint;

pub use align::{align_pieces, align_subwords, Pooling, SubwordAlignment};
pub use vua::read_vua_shared_task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "val" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Binary metaphoricity label. Serialized as the integers 0 and 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Literal = 0,
    Metaphor = 1,
}

impl Label {
    pub fn from_int(v: i64) -> Result<Self> {
        match v {
            0 => Ok(Label::Literal),
            1 => Ok(Label::Metaphor),
            other => Err(Error::Validation(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_metaphor(self) -> bool {
        self == Label::Metaphor
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_int(v).map_err(serde::de::Error::custom)
    }
}

/// One sentence with a designated target word and its label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub label: Label,
    pub split: Split,
    pub pos_tag: Option<String>,
    pub genre: Option<String>,
}

impl AnnotatedInstance {
    pub fn new(
        sentence_id: impl Into<String>,
        tokens: Vec<String>,
        target_index: usize,
        label: Label,
        split: Split,
    ) -> Result<Self> {
        let inst = AnnotatedInstance {
            sentence_id: sentence_id.into(),
            tokens,
            target_index,
            label,
            split,
            pos_tag: None,
            genre: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation(format!(
                "instance {} has no tokens",
                self.sentence_id
            )));
        }
        if let Some(pos) = self.tokens.iter().position(|t| t.is_empty()) {
            return Err(Error::Validation(format!(
                "instance {} has an empty token at position {pos}",
                self.sentence_id
            )));
        }
        if self.target_index >= self.tokens.len() {
            return Err(Error::Validation(format!(
                "instance {}: target index {} out of range for {} tokens",
                self.sentence_id,
                self.target_index,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    pub fn target_word(&self) -> &str {
        &self.tokens[self.target_index]
    }

    pub fn reference(&self) -> InstanceRef {
        InstanceRef {
            sentence_id: self.sentence_id.clone(),
            target_index: self.target_index,
        }
    }
}

/// Identifies an instance within one split.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceRef {
    pub sentence_id: String,
    pub target_index: usize,
}

impl fmt::Display for InstanceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sentence_id, self.target_index)
    }
}

/// A row that could not be turned into an instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    instances: Vec<AnnotatedInstance>,
    issues: Vec<RowIssue>,
}

impl Corpus {
    pub fn new(instances: Vec<AnnotatedInstance>) -> Result<Self> {
        Self::with_issues(instances, Vec::new())
    }

    pub fn with_issues(instances: Vec<AnnotatedInstance>, issues: Vec<RowIssue>) -> Result<Self> {
        let mut seen = HashSet::new();
        for inst in &instances {
            inst.validate()?;
            if !seen.insert((inst.split, inst.sentence_id.as_str(), inst.target_index)) {
                return Err(Error::Validation(format!(
                    "duplicate instance {}#{} in split {}",
                    inst.sentence_id, inst.target_index, inst.split
                )));
            }
        }
        Ok(Corpus { instances, issues })
    }

    /// Concatenates corpora, e.g. separate train/dev/test files.
    pub fn merge(parts: impl IntoIterator<Item = Corpus>) -> Result<Self> {
        let mut instances = Vec::new();
        let mut issues = Vec::new();
        for part in parts {
            instances.extend(part.instances);
            issues.extend(part.issues);
        }
        Self::with_issues(instances, issues)
    }

    pub fn instances(&self) -> &[AnnotatedInstance] {
        &self.instances
    }

    pub fn issues(&self) -> &[RowIssue] {
        &self.issues
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instances {
            *counts.entry(inst.split).or_insert(0) += 1;
        }
        counts
    }

    /// Sub-corpus holding only `split`, in original order.
    pub fn split(&self, split: Split) -> Corpus {
        Corpus {
            instances: self
                .instances
                .iter()
                .filter(|i| i.split == split)
                .cloned()
                .collect(),
            issues: Vec::new(),
        }
    }

    /// Content hash over the instances (order-sensitive).
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for inst in &self.instances {
            // serialization of plain data cannot fail
            serde_json::to_writer(&mut bytes, inst).expect("instance serializes");
            bytes.push(b'\n');
        }
        fingerprint::sha256_hex(&bytes)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// Shared-task layout: a sentence CSV with `M_`-prefixed metaphor tokens
    /// and an optional target-id list.
    VuaSharedTask,
    /// One JSON object per line, fields exactly as [`AnnotatedInstance`].
    NormalizedJsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vua_shared_task" => Ok(CorpusFormat::VuaSharedTask),
            "normalized_jsonl" => Ok(CorpusFormat::NormalizedJsonl),
            other => Err(Error::Config(format!(
                "unknown corpus format `{other}` (expected vua_shared_task or normalized_jsonl)"
            ))),
        }
    }
}

/// Options only the shared-task importer uses.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub split: Split,
    pub targets: Option<PathBuf>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            split: Split::Train,
            targets: None,
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    load_corpus_with(path, format, &LoadOptions::default())
}

pub fn load_corpus_with(path: &Path, format: CorpusFormat, opts: &LoadOptions) -> Result<Corpus> {
    match format {
        CorpusFormat::NormalizedJsonl => read_jsonl(path),
        CorpusFormat::VuaSharedTask => read_vua_shared_task(path, opts.targets.as_deref(), opts.split),
    }
}

fn read_jsonl(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut instances = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: AnnotatedInstance = match serde_json::from_str(&line) {
            Ok(inst) => inst,
            Err(e) => {
                issues.push(RowIssue {
                    line: line_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        inst.validate().map_err(|e| {
            Error::Validation(format!("{}:{line_no}: {e}", path.display()))
        })?;
        instances.push(inst);
    }
    if !issues.is_empty() {
        log::warn!(
            "{}: {} malformed row(s) skipped",
            path.display(),
            issues.len()
        );
    }
    Corpus::with_issues(instances, issues)
}
