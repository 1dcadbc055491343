//! Contextual encoders.
//!
//! An [`Encoder`] maps a pre-tokenized sentence to one hidden state per
//! encoder position, where position 0 is the start-of-input marker. The target
//! word's vector, the sentence vector and the word-in-isolation vector are all
//! read off these hidden states.

mod toy;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{align_pieces, Pooling, SubwordAlignment};
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::optim::AdamW;

pub use toy::{sinusoidal_positions, ToyConfig, ToyEncoder, ToyTape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Pretrained,
    Toy,
}

impl std::str::FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(EncoderMode::Pretrained),
            "toy" => Ok(EncoderMode::Toy),
            other => Err(Error::Config(format!("unknown encoder mode `{other}`"))),
        }
    }
}

static WEIGHTS_VERSIONS: AtomicU64 = AtomicU64::new(1);

/// Draws a fresh weights version. Versions are unique across every encoder
/// in the process, so a version identifies one concrete set of weights.
pub fn next_weights_version() -> u64 {
    WEIGHTS_VERSIONS.fetch_add(1, Ordering::Relaxed)
}

/// Snapshot of the identity of an encoder's weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInfo {
    pub mode: EncoderMode,
    pub hidden_dim: usize,
    pub weights_version: u64,
}

pub trait Encoder: Parameterized {
    /// Whatever the backward pass needs from the forward pass.
    type Tape;

    fn mode(&self) -> EncoderMode;

    fn hidden_dim(&self) -> usize;

    /// Maximum number of encoder positions, markers included.
    fn max_len(&self) -> usize;

    fn pooling(&self) -> Pooling;

    /// Bumped (see [`next_weights_version`]) on every parameter change.
    fn weights_version(&self) -> u64;

    fn bump_version(&mut self);

    /// Number of encoder pieces each word is split into.
    fn piece_counts(&self, tokens: &[String]) -> Result<Vec<usize>>;

    fn forward(&self, tokens: &[String]) -> Result<(EncodedSentence, Self::Tape)>;

    /// Accumulates parameter gradients from `∂L/∂H` for a recorded forward.
    fn backward(&mut self, tape: &Self::Tape, d_hidden: ArrayView2<f64>) -> Result<()>;

    /// Inference-mode encoding. Deterministic for fixed weights.
    fn encode(&self, tokens: &[String]) -> Result<EncodedSentence> {
        Ok(self.forward(tokens)?.0)
    }

    /// Optimizer step over the accumulated gradients; always bumps the
    /// weights version.
    fn apply_update(&mut self, optimizer: &mut AdamW, lr: f64)
    where
        Self: Sized,
    {
        optimizer.step("encoder", self, lr);
        self.bump_version();
    }

    fn info(&self) -> EncoderInfo {
        EncoderInfo {
            mode: self.mode(),
            hidden_dim: self.hidden_dim(),
            weights_version: self.weights_version(),
        }
    }
}

/// Hidden states `(1 + pieces) × d` plus the word-to-piece alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    hidden_states: Array2<f64>,
    alignments: Vec<SubwordAlignment>,
}

impl EncodedSentence {
    pub fn new(hidden_states: Array2<f64>, alignments: Vec<SubwordAlignment>) -> Result<Self> {
        let pieces = alignments.last().map_or(0, |a| a.piece_range.end - 1);
        if hidden_states.nrows() != 1 + pieces {
            return Err(Error::Validation(format!(
                "{} hidden rows for {} pieces plus the start marker",
                hidden_states.nrows(),
                pieces
            )));
        }
        Ok(EncodedSentence {
            hidden_states,
            alignments,
        })
    }

    /// Builds the alignment from piece counts.
    pub fn from_piece_counts(hidden_states: Array2<f64>, counts: &[usize], pooling: Pooling) -> Result<Self> {
        Self::new(hidden_states, align_pieces(counts, pooling)?)
    }

    pub fn hidden_states(&self) -> &Array2<f64> {
        &self.hidden_states
    }

    pub fn dim(&self) -> usize {
        self.hidden_states.ncols()
    }

    pub fn cls_vector(&self) -> ArrayView1<'_, f64> {
        self.hidden_states.row(0)
    }

    pub fn alignments(&self) -> &[SubwordAlignment] {
        &self.alignments
    }

    pub fn alignment(&self, word_index: usize) -> Result<&SubwordAlignment> {
        self.alignments.get(word_index).ok_or_else(|| {
            Error::Validation(format!(
                "word {word_index} out of range for {} aligned words",
                self.alignments.len()
            ))
        })
    }

    pub fn word_count(&self) -> usize {
        self.alignments.len()
    }
}

/// `v_{S,t}`: the pooled hidden state over the target's pieces.
pub fn contextual_target_embedding(enc: &EncodedSentence, alignment: &SubwordAlignment) -> Result<Array1<f64>> {
    let r = &alignment.piece_range;
    if r.start == 0 || r.start >= r.end || r.end > enc.hidden_states.nrows() {
        return Err(Error::Validation(format!(
            "piece range {r:?} outside a {}-row encoding",
            enc.hidden_states.nrows()
        )));
    }
    Ok(match alignment.pooling {
        Pooling::FirstPiece => enc.hidden_states.row(r.start).to_owned(),
        Pooling::MeanPieces => enc
            .hidden_states
            .slice(s![r.start..r.end, ..])
            .mean_axis(Axis(0))
            .expect("non-empty range"),
    })
}

/// `v_S`: the start-marker row.
pub fn sentence_embedding(enc: &EncodedSentence) -> Array1<f64> {
    enc.hidden_states.row(0).to_owned()
}

/// `v_{F,t}`: the word encoded as a one-word input.
pub fn decontextualized_embedding<E: Encoder + ?Sized>(encoder: &E, word: &str) -> Result<Array1<f64>> {
    if word.is_empty() {
        return Err(Error::Validation("cannot encode an empty word".into()));
    }
    let enc = encoder.encode(&[word.to_string()])?;
    contextual_target_embedding(&enc, enc.alignment(0)?)
}

/// Routes `∂L/∂v` of a pooled target vector back onto the hidden-state rows.
pub fn scatter_target_grad(d_hidden: &mut Array2<f64>, alignment: &SubwordAlignment, grad: ArrayView1<f64>) {
    let r = alignment.piece_range.clone();
    match alignment.pooling {
        Pooling::FirstPiece => {
            let mut row = d_hidden.row_mut(r.start);
            row += &grad;
        }
        Pooling::MeanPieces => {
            let share = &grad / (r.end - r.start) as f64;
            for i in r {
                let mut row = d_hidden.row_mut(i);
                row += &share;
            }
        }
    }
}
