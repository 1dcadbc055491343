//! Literal-annotation index and basic-meaning embeddings.
//!
//! For every target key seen with a literal label in the training split the
//! index keeps the pool of those literal instances, in corpus order. The basic
//! meaning of a target is the mean target hidden state over a sample of its
//! pool; a key without literal annotations falls back to the word's
//! decontextualized embedding.

mod cache;
mod keys;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, InstanceRef, Label, Split};
use crate::encoder::{contextual_target_embedding, decontextualized_embedding, Encoder};
use crate::error::{Error, Result};
use crate::fingerprint::stable_u64;

pub use cache::{CacheManifest, CacheManifestEntry, EmbeddingCache};
pub use keys::{KeyKind, KeyPolicy, LemmaTable};

pub const INDEX_FORMAT: &str = "basicmip-index";
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// One literal training instance in a pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolEntry {
    pub reference: InstanceRef,
    pub tokens: Arc<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicSource {
    AveragedPool,
    FallbackDecontextualized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicEmbeddingResult {
    pub vector: Array1<f64>,
    pub source: BasicSource,
    pub pool_size_used: usize,
}

/// Pool size and sampling seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub k: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { k: 5, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct BasicIndex {
    policy: KeyPolicy,
    corpus_fingerprint: String,
    pools: BTreeMap<String, Vec<PoolEntry>>,
    cache: Arc<EmbeddingCache>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    format_version: u32,
    key_fn_id: String,
    corpus_fingerprint: String,
    pools: BTreeMap<String, Vec<(String, usize)>>,
}

pub fn build_basic_index(train: &Corpus, policy: KeyPolicy) -> Result<BasicIndex> {
    BasicIndex::build(train, policy)
}

impl BasicIndex {
    pub fn build(train: &Corpus, policy: KeyPolicy) -> Result<Self> {
        let mut pools: BTreeMap<String, Vec<PoolEntry>> = BTreeMap::new();
        for inst in train.instances() {
            if inst.split != Split::Train {
                return Err(Error::Validation(format!(
                    "index must be built from the train split; {} is in {}",
                    inst.reference(),
                    inst.split
                )));
            }
            if inst.label != Label::Literal {
                continue;
            }
            pools.entry(policy.key(inst)).or_default().push(PoolEntry {
                reference: inst.reference(),
                tokens: Arc::new(inst.tokens.clone()),
            });
        }
        Ok(BasicIndex {
            policy,
            corpus_fingerprint: train.fingerprint(),
            pools,
            cache: Arc::new(EmbeddingCache::default()),
        })
    }

    pub fn key_fn_id(&self) -> String {
        self.policy.id()
    }

    pub fn policy(&self) -> &KeyPolicy {
        &self.policy
    }

    /// Fingerprint of the training corpus the index was built from.
    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    pub fn pools(&self) -> &BTreeMap<String, Vec<PoolEntry>> {
        &self.pools
    }

    pub fn pool(&self, key: &str) -> &[PoolEntry] {
        self.pools.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn has_literal(&self, key: &str) -> bool {
        !self.pool(key).is_empty()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    /// Draws up to `k` distinct entries without replacement, returned in pool
    /// order. Deterministic in `(seed, key)`. `exclude` is removed before
    /// drawing.
    pub fn sample_entries(&self, key: &str, k: usize, seed: u64, exclude: Option<&InstanceRef>) -> Result<Vec<&PoolEntry>> {
        if k == 0 {
            return Err(Error::Validation("pool size k must be at least 1".into()));
        }
        let candidates: Vec<&PoolEntry> = self
            .pool(key)
            .iter()
            .filter(|e| Some(&e.reference) != exclude)
            .collect();
        if candidates.len() <= k {
            return Ok(candidates);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_u64(key));
        let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), k).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| candidates[i]).collect())
    }

    pub fn sample_pool(&self, key: &str, k: usize, seed: u64) -> Result<Vec<InstanceRef>> {
        Ok(self
            .sample_entries(key, k, seed, None)?
            .into_iter()
            .map(|e| e.reference.clone())
            .collect())
    }

    /// Target hidden state of one pooled instance under the encoder's
    /// current weights, served from the cache when possible.
    pub fn pooled_target_state<E: Encoder + ?Sized>(&self, key: &str, entry: &PoolEntry, encoder: &E) -> Result<Array1<f64>> {
        let version = encoder.weights_version();
        if let Some(v) = self.cache.get(version, key, &entry.reference) {
            return Ok(v);
        }
        let v = (|| {
            let enc = encoder.encode(&entry.tokens)?;
            contextual_target_embedding(&enc, enc.alignment(entry.reference.target_index)?)
        })()
        .map_err(|e| e.in_sentence(&entry.reference.sentence_id))?;
        self.cache.insert(version, key, &entry.reference, v.clone())?;
        Ok(v)
    }

    /// `v_{B,t}` for `key`: the mean pooled target state, or the
    /// decontextualized embedding of `word` when nothing is left to average.
    pub fn basic_embedding<E: Encoder + ?Sized>(
        &self,
        key: &str,
        word: &str,
        encoder: &E,
        sampling: Sampling,
        exclude: Option<&InstanceRef>,
    ) -> Result<BasicEmbeddingResult> {
        let entries = self.sample_entries(key, sampling.k, sampling.seed, exclude)?;
        if entries.is_empty() {
            return Ok(BasicEmbeddingResult {
                vector: decontextualized_embedding(encoder, word)?,
                source: BasicSource::FallbackDecontextualized,
                pool_size_used: 0,
            });
        }
        let mut sum = Array1::zeros(encoder.hidden_dim());
        for entry in &entries {
            sum += &self.pooled_target_state(key, entry, encoder)?;
        }
        Ok(BasicEmbeddingResult {
            vector: sum / entries.len() as f64,
            source: BasicSource::AveragedPool,
            pool_size_used: entries.len(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            format_version: INDEX_FORMAT_VERSION,
            key_fn_id: self.key_fn_id(),
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            pools: self
                .pools
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        v.iter()
                            .map(|e| (e.reference.sentence_id.clone(), e.reference.target_index))
                            .collect(),
                    )
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    /// Reads a persisted index and re-attaches it to the training corpus it
    /// was built from; both the corpus and the key policy must match.
    pub fn load(path: &Path, train: &Corpus, policy: KeyPolicy) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: IndexFile = serde_json::from_slice(&bytes)?;
        if file.format != INDEX_FORMAT || file.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported index format {} v{}",
                path.display(),
                file.format,
                file.format_version
            )));
        }
        let found = train.fingerprint();
        if file.corpus_fingerprint != found {
            return Err(Error::Fingerprint {
                expected: file.corpus_fingerprint,
                found,
            });
        }
        if file.key_fn_id != policy.id() {
            return Err(Error::Config(format!(
                "index was built with key policy `{}`, requested `{}`",
                file.key_fn_id,
                policy.id()
            )));
        }
        let by_ref: HashMap<InstanceRef, Arc<Vec<String>>> = train
            .instances()
            .iter()
            .map(|i| (i.reference(), Arc::new(i.tokens.clone())))
            .collect();
        let mut pools = BTreeMap::new();
        for (key, refs) in file.pools {
            let mut entries = Vec::with_capacity(refs.len());
            for (sentence_id, target_index) in refs {
                let reference = InstanceRef {
                    sentence_id,
                    target_index,
                };
                let tokens = by_ref
                    .get(&reference)
                    .ok_or_else(|| Error::Validation(format!("index refers to unknown instance {reference}")))?
                    .clone();
                entries.push(PoolEntry { reference, tokens });
            }
            pools.insert(key, entries);
        }
        Ok(BasicIndex {
            policy,
            corpus_fingerprint: file.corpus_fingerprint,
            pools,
            cache: Arc::new(EmbeddingCache::default()),
        })
    }

    /// Replaces the cache, e.g. with one restored from disk.
    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = Arc::new(cache);
        self
    }
}
