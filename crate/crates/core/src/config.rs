//! Run configuration.
//!
//! A config file is a flat TOML table whose keys mirror [`TrainConfig`].
//! Missing keys take defaults that depend on `encoder_mode`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basic_index::{KeyKind, KeyPolicy, LemmaTable};
use crate::corpus::Pooling;
use crate::encoder::{EncoderMode, ToyConfig};
use crate::error::{Error, Result};
use crate::fingerprint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Literal pool sample size `k`.
    pub pool_size: usize,
    pub key_policy: KeyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma_table: Option<PathBuf>,
    pub key_pos: bool,
    pub ablate_bmip: bool,
    pub resample_per_epoch: bool,
    pub threshold: f64,
    pub clamp_epsilon: f64,
    pub max_len: usize,
    pub pooling: Pooling,
    /// Contrast layer width; defaults to the encoder hidden size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    pub dropout: f64,
    /// Weight on the metaphor term of the loss; unweighted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_weight: Option<f64>,
    /// Also score the train split after every epoch.
    pub eval_train: bool,
    pub encoder_mode: EncoderMode,
    pub freeze_layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_path: Option<PathBuf>,
    pub toy_dim: usize,
    pub toy_buckets: usize,
    pub toy_max_piece_chars: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::defaults(EncoderMode::Pretrained)
    }
}

impl TrainConfig {
    pub fn defaults(mode: EncoderMode) -> Self {
        let toy = mode == EncoderMode::Toy;
        TrainConfig {
            seed: 0,
            epochs: if toy { 30 } else { 3 },
            batch_size: if toy { 8 } else { 16 },
            lr_encoder: if toy { 1e-2 } else { 3e-5 },
            lr_head: if toy { 3e-2 } else { 1e-3 },
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            pool_size: 5,
            key_policy: KeyKind::Surface,
            lemma_table: None,
            key_pos: false,
            ablate_bmip: false,
            resample_per_epoch: false,
            threshold: 0.5,
            clamp_epsilon: 1e-7,
            max_len: if toy { 128 } else { 512 },
            pooling: Pooling::FirstPiece,
            hidden_dim: None,
            dropout: 0.2,
            pos_weight: None,
            eval_train: false,
            encoder_mode: mode,
            freeze_layers: 0,
            pretrained_path: None,
            toy_dim: 16,
            toy_buckets: 1024,
            toy_max_piece_chars: 8,
        }
    }

    /// Layers `file` then `overrides` over the defaults for the selected mode.
    pub fn resolve(file: Option<&toml::Table>, overrides: &toml::Table) -> Result<Self> {
        let mut merged = file.cloned().unwrap_or_default();
        merged.extend(overrides.clone());
        let mode = match merged.get("encoder_mode") {
            None => EncoderMode::Pretrained,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("encoder_mode must be a string, got {other}"))),
        };
        let mut table = match toml::Value::try_from(Self::defaults(mode)) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        table.extend(merged);
        let config: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::resolve(Some(&table), &toml::Table::new())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("lr_encoder", self.lr_encoder),
            ("lr_head", self.lr_head),
            ("pool_size", self.pool_size as f64),
            ("threshold", self.threshold),
            ("clamp_epsilon", self.clamp_epsilon),
            ("max_len", self.max_len as f64),
            ("toy_dim", self.toy_dim as f64),
            ("toy_max_piece_chars", self.toy_max_piece_chars as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.threshold >= 1.0 {
            return Err(Error::Config(format!("threshold {} must be below 1", self.threshold)));
        }
        if self.clamp_epsilon >= 0.5 {
            return Err(Error::Config("clamp_epsilon must be below 0.5".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("pos_weight must be positive, got {w}")));
            }
        }
        if self.toy_buckets < 2 {
            return Err(Error::Config("toy_buckets must be at least 2".into()));
        }
        if self.key_policy == KeyKind::Lemma && self.lemma_table.is_none() {
            return Err(Error::Config("key_policy = \"lemma\" needs lemma_table".into()));
        }
        Ok(())
    }

    /// Content hash of the resolved config.
    pub fn fingerprint(&self) -> String {
        fingerprint::of_serialized(self).expect("config serializes")
    }

    pub fn key_policy(&self) -> Result<KeyPolicy> {
        let policy = match self.key_policy {
            KeyKind::Surface => KeyPolicy::surface(),
            KeyKind::Lemma => {
                let path = self
                    .lemma_table
                    .as_ref()
                    .ok_or_else(|| Error::Config("lemma key policy needs lemma_table".into()))?;
                KeyPolicy::lemma(LemmaTable::load(path)?)
            }
        };
        Ok(policy.with_pos(self.key_pos))
    }

    /// Toy encoder settings; the encoder is seeded from the run seed.
    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            dim: self.toy_dim,
            buckets: self.toy_buckets,
            max_piece_chars: self.toy_max_piece_chars,
            max_len: self.max_len,
            pooling: self.pooling,
            seed: self.seed,
            freeze_layers: self.freeze_layers,
        }
    }
}
