//! A small, fully specified encoder whose every output can be evaluated by
//! hand.
//!
//! Words are lowercased and cut into pieces of at most `max_piece_chars`
//! characters. Each piece hashes to a row of a trainable bucket table (bucket 0
//! is the start marker) and gets a fixed sinusoidal position vector added.
//! One single-head self-attention layer with a residual connection mixes the
//! positions:
//!
//! ```text
//! X = E[ids] + P
//! H = X + softmax(X Wq (X Wk)ᵀ / √d) · X Wv
//! ```
//!
//! With `Wq = Wk = 0` and `Wv = I` ("identity mixing") every row becomes
//! `x_i + mean_j x_j`.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{next_weights_version, EncodedSentence, Encoder, EncoderMode};
use crate::corpus::Pooling;
use crate::error::{Error, Result};
use crate::fingerprint::stable_u64;
use crate::nn::{softmax_rows, softmax_rows_backward, uniform, Matrix, ParamMut, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub dim: usize,
    pub buckets: usize,
    pub max_piece_chars: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    pub seed: u64,
    /// 0 trains everything; 1 or more freezes the whole encoder.
    pub freeze_layers: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 16,
            buckets: 1024,
            max_piece_chars: 8,
            max_len: 128,
            pooling: Pooling::FirstPiece,
            seed: 0,
            freeze_layers: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyEncoder {
    config: ToyConfig,
    embeddings: Matrix,
    query: Matrix,
    key: Matrix,
    value: Matrix,
    positions: Array2<f64>,
    version: u64,
}

/// Forward intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ToyTape {
    ids: Vec<usize>,
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
}

/// `P[pos, 2i] = sin(pos / 10000^(2i/d))`, `P[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, j)| {
        let pair = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl ToyEncoder {
    pub fn new(config: ToyConfig) -> Result<Self> {
        if config.dim == 0 || config.buckets < 2 || config.max_piece_chars == 0 || config.max_len < 2 {
            return Err(Error::Config(format!("invalid toy encoder config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        // unit-variance word vectors, attention weights at ±1/√d
        let embeddings = uniform(config.buckets, d, 3f64.sqrt(), &mut rng);
        let bound = 1.0 / (d as f64).sqrt();
        let query = uniform(d, d, bound, &mut rng);
        let key = uniform(d, d, bound, &mut rng);
        let value = uniform(d, d, bound, &mut rng);
        Ok(ToyEncoder {
            positions: sinusoidal_positions(config.max_len, d),
            embeddings: Matrix::new(embeddings),
            query: Matrix::new(query),
            key: Matrix::new(key),
            value: Matrix::new(value),
            config,
            version: next_weights_version(),
        })
    }

    /// Uniform attention with an identity value map.
    pub fn identity_mixing(config: ToyConfig) -> Result<Self> {
        let mut enc = Self::new(config)?;
        let d = enc.config.dim;
        enc.query.value.fill(0.0);
        enc.key.value.fill(0.0);
        enc.value.value = Array2::eye(d);
        Ok(enc)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn embedding_table(&self) -> &Array2<f64> {
        &self.embeddings.value
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    /// Lowercased pieces of a word; continuation pieces carry a `##` prefix.
    pub fn pieces(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        chars
            .chunks(self.config.max_piece_chars)
            .enumerate()
            .map(|(i, c)| {
                let piece: String = c.iter().collect();
                if i == 0 {
                    piece
                } else {
                    format!("##{piece}")
                }
            })
            .collect()
    }

    pub fn bucket(&self, piece: &str) -> usize {
        1 + (stable_u64(piece) % (self.config.buckets as u64 - 1)) as usize
    }

    /// Mutable access to one attention matrix, for tests that flip weights.
    pub fn attention_mut(&mut self, which: &str) -> Option<&mut Array2<f64>> {
        let m = match which {
            "query" => &mut self.query,
            "key" => &mut self.key,
            "value" => &mut self.value,
            _ => return None,
        };
        self.version = next_weights_version();
        Some(&mut m.value)
    }

    fn frozen(&self) -> bool {
        self.config.freeze_layers > 0
    }
}

impl Parameterized for ToyEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.embeddings.visit("embeddings.word", f);
        self.query.visit("attention.query", f);
        self.key.visit("attention.key", f);
        self.value.visit("attention.value", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        let frozen = self.frozen();
        self.embeddings.visit_mut("embeddings.word", frozen, f);
        self.query.visit_mut("attention.query", frozen, f);
        self.key.visit_mut("attention.key", frozen, f);
        self.value.visit_mut("attention.value", frozen, f);
    }
}

impl Encoder for ToyEncoder {
    type Tape = ToyTape;

    fn mode(&self) -> EncoderMode {
        EncoderMode::Toy
    }

    fn hidden_dim(&self) -> usize {
        self.config.dim
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn pooling(&self) -> Pooling {
        self.config.pooling
    }

    fn weights_version(&self) -> u64 {
        self.version
    }

    fn bump_version(&mut self) {
        self.version = next_weights_version();
    }

    fn piece_counts(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                if t.is_empty() {
                    Err(Error::Validation("empty token".into()))
                } else {
                    Ok(self.pieces(t).len())
                }
            })
            .collect()
    }

    fn forward(&self, tokens: &[String]) -> Result<(EncodedSentence, ToyTape)> {
        if tokens.is_empty() {
            return Err(Error::Validation("cannot encode an empty sentence".into()));
        }
        let counts = self.piece_counts(tokens)?;
        let mut ids = vec![0usize];
        for t in tokens {
            ids.extend(self.pieces(t).iter().map(|p| self.bucket(p)));
        }
        let n = ids.len();
        if n > self.config.max_len {
            return Err(Error::Truncation {
                len: n,
                max: self.config.max_len,
            });
        }
        let d = self.config.dim;
        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i)
                .assign(&(&self.embeddings.value.row(id) + &self.positions.row(i)));
        }
        let q = x.dot(&self.query.value);
        let k = x.dot(&self.key.value);
        let v = x.dot(&self.value.value);
        let scores = q.dot(&k.t()) / (d as f64).sqrt();
        let attn = softmax_rows(&scores);
        let hidden = &x + &attn.dot(&v);
        let enc = EncodedSentence::from_piece_counts(hidden, &counts, self.config.pooling)?;
        Ok((
            enc,
            ToyTape {
                ids,
                x,
                q,
                k,
                v,
                attn,
            },
        ))
    }

    fn backward(&mut self, tape: &ToyTape, d_hidden: ArrayView2<f64>) -> Result<()> {
        if d_hidden.dim() != tape.x.dim() {
            return Err(Error::Validation(format!(
                "gradient shape {:?} does not match hidden states {:?}",
                d_hidden.dim(),
                tape.x.dim()
            )));
        }
        if self.frozen() {
            return Ok(());
        }
        let scale = (self.config.dim as f64).sqrt();
        let d_attn = d_hidden.dot(&tape.v.t());
        let d_v = tape.attn.t().dot(&d_hidden);
        let d_scores = softmax_rows_backward(&tape.attn, &d_attn) / scale;
        let d_q = d_scores.dot(&tape.k);
        let d_k = d_scores.t().dot(&tape.q);

        self.query.grad += &tape.x.t().dot(&d_q);
        self.key.grad += &tape.x.t().dot(&d_k);
        self.value.grad += &tape.x.t().dot(&d_v);

        let d_x = &d_hidden
            + &d_q.dot(&self.query.value.t())
            + &d_k.dot(&self.key.value.t())
            + &d_v.dot(&self.value.value.t());
        for (i, &id) in tape.ids.iter().enumerate() {
            let mut row = self.embeddings.grad.row_mut(id);
            row += &d_x.row(i);
        }
        Ok(())
    }
}
