use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnnotatedInstance;
use crate::error::{Error, Result};

/// How a multi-piece word is reduced to one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    FirstPiece,
    MeanPieces,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_piece" => Ok(Pooling::FirstPiece),
            "mean_pieces" => Ok(Pooling::MeanPieces),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Maps a word to its half-open range of encoder positions.
///
/// Position 0 is the start-of-input marker, so the first word starts at 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordAlignment {
    pub word_index: usize,
    pub piece_range: Range<usize>,
    pub pooling: Pooling,
}

impl SubwordAlignment {
    pub fn len(&self) -> usize {
        self.piece_range.end - self.piece_range.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cumulative alignment of per-word piece counts, offset by the start marker.
pub fn align_pieces(piece_counts: &[usize], pooling: Pooling) -> Result<Vec<SubwordAlignment>> {
    let mut start = 1;
    piece_counts
        .iter()
        .enumerate()
        .map(|(word_index, &n)| {
            if n == 0 {
                return Err(Error::Validation(format!(
                    "word {word_index} has zero pieces"
                )));
            }
            let range = start..start + n;
            start += n;
            Ok(SubwordAlignment {
                word_index,
                piece_range: range,
                pooling,
            })
        })
        .collect()
}

pub fn align_subwords(
    instance: &AnnotatedInstance,
    piece_counts: &[usize],
    pooling: Pooling,
) -> Result<Vec<SubwordAlignment>> {
    if piece_counts.len() != instance.tokens.len() {
        return Err(Error::Validation(format!(
            "instance {}: {} piece counts for {} tokens",
            instance.sentence_id,
            piece_counts.len(),
            instance.tokens.len()
        )));
    }
    align_pieces(piece_counts, pooling)
}
