//! BERT/RoBERTa-family encoder for `basicmip`, evaluated and differentiated
//! in `f64` on the CPU.
//!
//! A model directory holds `config.json`, `model.safetensors` and
//! `tokenizer.json` as published on the Hugging Face hub. Only the embedding
//! and encoder stacks are loaded; pooler and task heads are ignored.

mod config;
mod layers;
mod weights;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokenizers::pre_tokenizers::PreTokenizerWrapper;
use tokenizers::Tokenizer;

use basicmip::corpus::Pooling;
use basicmip::encoder::{next_weights_version, EncodedSentence, Encoder, EncoderMode};
use basicmip::nn::{uniform, Linear, Matrix, ParamMut, Parameterized};
use basicmip::{Error, Result};

pub use config::{Activation, BertConfig};
pub use layers::{Block, BlockTape, LayerNorm, NormCache};

/// Runtime settings that are not part of the checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOptions {
    /// Maximum positions including start and end markers; capped by the
    /// model's position table.
    pub max_len: usize,
    pub pooling: Pooling,
    /// 0 fine-tunes everything; `n > 0` freezes the embeddings and the
    /// lowest `n` blocks.
    pub freeze_layers: usize,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        EncoderOptions {
            max_len: 512,
            pooling: Pooling::FirstPiece,
            freeze_layers: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    config: BertConfig,
    options: EncoderOptions,
    tokenizer: Tokenizer,
    word_embeddings: Matrix,
    position_embeddings: Matrix,
    token_type_embeddings: Matrix,
    embed_norm: LayerNorm,
    blocks: Vec<Block>,
    activation: Activation,
    version: u64,
}

#[derive(Clone, Debug)]
pub struct TransformerTape {
    ids: Vec<usize>,
    /// Rows handed out: the start marker plus every word piece.
    kept: usize,
    embed_norm: NormCache,
    blocks: Vec<BlockTape>,
}

fn tokenizer_error(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("tokenizer: {e}"))
}

/// Byte-level BPE tokenizers need a leading space on every pre-split word to
/// produce the same pieces as running text.
fn prepare_tokenizer(mut tokenizer: Tokenizer) -> Result<Tokenizer> {
    tokenizer.with_truncation(None).map_err(tokenizer_error)?;
    tokenizer.with_padding(None);
    if let Some(PreTokenizerWrapper::ByteLevel(bl)) = tokenizer.get_pre_tokenizer() {
        let mut bl = *bl;
        bl.add_prefix_space = true;
        tokenizer.with_pre_tokenizer(Some(PreTokenizerWrapper::ByteLevel(bl)));
    }
    Ok(tokenizer)
}

impl TransformerEncoder {
    /// Loads a model directory.
    pub fn load(dir: &Path, options: EncoderOptions) -> Result<Self> {
        let config = BertConfig::load(&dir.join("config.json"))?;
        let tokenizer = Tokenizer::from_file(dir.join("tokenizer.json")).map_err(tokenizer_error)?;
        let mut enc = Self::random(config, tokenizer, options, 0)?;
        weights::load_into(&mut enc, &dir.join("model.safetensors"))?;
        enc.version = next_weights_version();
        Ok(enc)
    }

    /// Freshly initialized weights: uniform in ±0.02·√3 (standard deviation
    /// 0.02), unit layer-norm gains, zero biases.
    pub fn random(config: BertConfig, tokenizer: Tokenizer, options: EncoderOptions, seed: u64) -> Result<Self> {
        config.validate()?;
        if options.max_len < 3 {
            return Err(Error::Config(format!("max_len {} leaves no room for a word", options.max_len)));
        }
        let activation = config.activation()?;
        let tokenizer = prepare_tokenizer(tokenizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.02 * 3f64.sqrt();
        let d = config.hidden_size;
        let mut linear = |input: usize, output: usize| {
            Linear::from_parts(uniform(output, input, bound, &mut rng), Array1::zeros(output))
        };
        let eps = config.layer_norm_eps;
        let blocks = (0..config.num_hidden_layers)
            .map(|_| Block {
                query: linear(d, d),
                key: linear(d, d),
                value: linear(d, d),
                attn_out: linear(d, d),
                attn_norm: LayerNorm::new(d, eps),
                intermediate: linear(d, config.intermediate_size),
                output: linear(config.intermediate_size, d),
                out_norm: LayerNorm::new(d, eps),
            })
            .collect();
        let word_embeddings = Matrix::new(uniform(config.vocab_size, d, bound, &mut rng));
        let position_embeddings = Matrix::new(uniform(config.max_position_embeddings, d, bound, &mut rng));
        let token_type_embeddings = Matrix::new(uniform(config.type_vocab_size.max(1), d, bound, &mut rng));
        Ok(TransformerEncoder {
            embed_norm: LayerNorm::new(d, eps),
            config,
            options,
            tokenizer,
            word_embeddings,
            position_embeddings,
            token_type_embeddings,
            blocks,
            activation,
            version: next_weights_version(),
        })
    }

    /// Writes `config.json`, `model.safetensors` (float32) and
    /// `tokenizer.json` to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = serde_json::to_string_pretty(&self.config)?;
        let path = dir.join("config.json");
        std::fs::write(&path, config).map_err(|e| Error::io(&path, e))?;
        weights::save_f32(self, &dir.join("model.safetensors"))?;
        self.tokenizer
            .save(dir.join("tokenizer.json"), true)
            .map_err(tokenizer_error)
    }

    pub fn config(&self) -> &BertConfig {
        &self.config
    }

    pub fn options(&self) -> &EncoderOptions {
        &self.options
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn frozen_blocks(&self) -> usize {
        self.options.freeze_layers.min(self.blocks.len())
    }

    fn embeddings_frozen(&self) -> bool {
        self.options.freeze_layers > 0
    }

    /// Token ids with markers and the number of pieces per word.
    fn tokenize(&self, tokens: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
        if tokens.is_empty() {
            return Err(Error::Validation("cannot encode an empty sentence".into()));
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(Error::Validation(format!("token {i} is empty")));
        }
        let encoding = self.tokenizer.encode(tokens, true).map_err(tokenizer_error)?;
        let ids: Vec<usize> = encoding.get_ids().iter().map(|&i| i as usize).collect();
        let special = encoding.get_special_tokens_mask();
        if special.first() != Some(&1) {
            return Err(Error::Config("tokenizer does not add a start-of-input marker".into()));
        }
        let mut counts = vec![0usize; tokens.len()];
        let mut last_word = None;
        for (pos, word) in encoding.get_word_ids().iter().enumerate() {
            let Some(w) = word.map(|w| w as usize) else {
                continue;
            };
            if pos == 0 || last_word.is_some_and(|l| w < l) || (last_word != Some(w) && counts[w] > 0) {
                return Err(Error::Validation(format!("pieces of word {w} are not contiguous")));
            }
            counts[w] += 1;
            last_word = Some(w);
        }
        if let Some(w) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "word {w} (`{}`) produced no pieces",
                tokens[w]
            )));
        }
        if ids.len() > self.max_len() {
            return Err(Error::Truncation {
                len: ids.len(),
                max: self.max_len(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} is outside the model vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok((ids, counts))
    }
}

impl Parameterized for TransformerEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.word_embeddings.visit("embeddings.word_embeddings.weight", f);
        self.position_embeddings.visit("embeddings.position_embeddings.weight", f);
        self.token_type_embeddings.visit("embeddings.token_type_embeddings.weight", f);
        self.embed_norm.visit("embeddings.LayerNorm", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("encoder.layer.{i}"), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        let frozen = self.embeddings_frozen();
        let frozen_blocks = self.frozen_blocks();
        self.word_embeddings.visit_mut("embeddings.word_embeddings.weight", frozen, f);
        self.position_embeddings.visit_mut("embeddings.position_embeddings.weight", frozen, f);
        self.token_type_embeddings.visit_mut("embeddings.token_type_embeddings.weight", frozen, f);
        self.embed_norm.visit_mut("embeddings.LayerNorm", frozen, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("encoder.layer.{i}"), i < frozen_blocks, f);
        }
    }
}

impl Encoder for TransformerEncoder {
    type Tape = TransformerTape;

    fn mode(&self) -> EncoderMode {
        EncoderMode::Pretrained
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_size
    }

    fn max_len(&self) -> usize {
        self.options
            .max_len
            .min(self.config.max_position_embeddings - self.config.position_offset())
    }

    fn pooling(&self) -> Pooling {
        self.options.pooling
    }

    fn weights_version(&self) -> u64 {
        self.version
    }

    fn bump_version(&mut self) {
        self.version = next_weights_version();
    }

    fn piece_counts(&self, tokens: &[String]) -> Result<Vec<usize>> {
        Ok(self.tokenize(tokens)?.1)
    }

    fn forward(&self, tokens: &[String]) -> Result<(EncodedSentence, TransformerTape)> {
        let (ids, counts) = self.tokenize(tokens)?;
        let n = ids.len();
        let d = self.config.hidden_size;
        let offset = self.config.position_offset();
        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &self.word_embeddings.value.row(id);
            row += &self.position_embeddings.value.row(i + offset);
            row += &self.token_type_embeddings.value.row(0);
        }
        let (mut h, embed_norm) = self.embed_norm.forward(&x);
        let mut block_tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, tape) = b.forward(&h, self.config.num_attention_heads, self.activation);
            h = next;
            block_tapes.push(tape);
        }
        let kept = 1 + counts.iter().sum::<usize>();
        let hidden = h.slice(s![0..kept, ..]).to_owned();
        let enc = EncodedSentence::from_piece_counts(hidden, &counts, self.options.pooling)?;
        Ok((
            enc,
            TransformerTape {
                ids,
                kept,
                embed_norm,
                blocks: block_tapes,
            },
        ))
    }

    fn backward(&mut self, tape: &TransformerTape, d_hidden: ArrayView2<f64>) -> Result<()> {
        let d = self.config.hidden_size;
        if d_hidden.dim() != (tape.kept, d) {
            return Err(Error::Validation(format!(
                "gradient shape {:?} does not match hidden states ({}, {d})",
                d_hidden.dim(),
                tape.kept
            )));
        }
        let mut dy = Array2::zeros((tape.ids.len(), d));
        dy.slice_mut(s![0..tape.kept, ..]).assign(&d_hidden);
        let frozen_blocks = self.frozen_blocks();
        for (i, (block, btape)) in self.blocks.iter_mut().zip(&tape.blocks).enumerate().rev() {
            if i < frozen_blocks {
                return Ok(());
            }
            dy = block.backward(btape, &dy, self.activation);
        }
        if self.embeddings_frozen() {
            return Ok(());
        }
        let dx = self.embed_norm.backward(&tape.embed_norm, &dy);
        let offset = self.config.position_offset();
        for (i, &id) in tape.ids.iter().enumerate() {
            let g = dx.row(i);
            let mut row = self.word_embeddings.grad.row_mut(id);
            row += &g;
            let mut row = self.position_embeddings.grad.row_mut(i + offset);
            row += &g;
            let mut row = self.token_type_embeddings.grad.row_mut(0);
            row += &g;
        }
        Ok(())
    }
}
