//! Target-state cache for pooled literal instances.
//!
//! Entries are valid for exactly one encoder weights version; a lookup or
//! insert under a different version drops everything first.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::corpus::InstanceRef;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BMIPVEC1";

type CacheKey = (String, InstanceRef);

#[derive(Debug, Default)]
struct State {
    version: Option<u64>,
    dim: Option<usize>,
    vectors: HashMap<CacheKey, Array1<f64>>,
}

/// Concurrent-read, single-writer vector cache keyed by `(target key, instance)`.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    state: RwLock<State>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifestEntry {
    pub key: String,
    pub sentence_id: String,
    pub target_index: usize,
    pub weights_version: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format_version: u32,
    pub dim: usize,
    /// Content hash of the encoder parameters the vectors were computed with.
    pub weights_fingerprint: String,
    pub entries: Vec<CacheManifestEntry>,
}

impl Clone for EmbeddingCache {
    fn clone(&self) -> Self {
        let st = self.state.read().expect("cache lock poisoned");
        EmbeddingCache {
            state: RwLock::new(State {
                version: st.version,
                dim: st.dim,
                vectors: st.vectors.clone(),
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }
}

impl EmbeddingCache {
    pub fn get(&self, version: u64, key: &str, reference: &InstanceRef) -> Option<Array1<f64>> {
        let st = self.state.read().expect("cache lock poisoned");
        let found = if st.version == Some(version) {
            st.vectors.get(&(key.to_string(), reference.clone())).cloned()
        } else {
            None
        };
        match found {
            Some(v) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(v)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn insert(&self, version: u64, key: &str, reference: &InstanceRef, vector: Array1<f64>) -> Result<()> {
        let mut st = self.state.write().expect("cache lock poisoned");
        if st.version != Some(version) {
            st.vectors.clear();
            st.version = Some(version);
            st.dim = None;
        }
        match st.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::Validation(format!(
                    "cached vector has dimension {}, cache holds dimension {d}",
                    vector.len()
                )))
            }
            _ => st.dim = Some(vector.len()),
        }
        st.vectors.insert((key.to_string(), reference.clone()), vector);
        Ok(())
    }

    pub fn clear(&self) {
        let mut st = self.state.write().expect("cache lock poisoned");
        *st = State::default();
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("cache lock poisoned").vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn version(&self) -> Option<u64> {
        self.state.read().expect("cache lock poisoned").version
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    /// Writes `vectors.bin` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, weights_fingerprint: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let st = self.state.read().expect("cache lock poisoned");
        let version = st.version.unwrap_or(0);
        let dim = st.dim.unwrap_or(0);
        let mut items: Vec<_> = st.vectors.iter().collect();
        items.sort_by(|a, b| a.0.cmp(b.0));

        let bin = dir.join("vectors.bin");
        let mut out = BufWriter::new(File::create(&bin).map_err(|e| Error::io(&bin, e))?);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(&bin, e));
        write(MAGIC)?;
        write(&(items.len() as u64).to_le_bytes())?;
        write(&(dim as u64).to_le_bytes())?;
        for (_, v) in &items {
            for x in v.iter() {
                write(&x.to_le_bytes())?;
            }
        }
        out.flush().map_err(|e| Error::io(&bin, e))?;

        let manifest = CacheManifest {
            format_version: 1,
            dim,
            weights_fingerprint: weights_fingerprint.to_string(),
            entries: items
                .iter()
                .map(|((key, r), _)| CacheManifestEntry {
                    key: key.clone(),
                    sentence_id: r.sentence_id.clone(),
                    target_index: r.target_index,
                    weights_version: version,
                })
                .collect(),
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads a saved cache, accepting it only for the same encoder weights.
    /// Entries are re-tagged with `current_version`.
    pub fn load(dir: &Path, weights_fingerprint: &str, current_version: u64) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CacheManifest = serde_json::from_slice(&text)?;
        if manifest.weights_fingerprint != weights_fingerprint {
            return Err(Error::Fingerprint {
                expected: weights_fingerprint.to_string(),
                found: manifest.weights_fingerprint,
            });
        }
        let bin = dir.join("vectors.bin");
        let mut input = BufReader::new(File::open(&bin).map_err(|e| Error::io(&bin, e))?);
        let mut read8 = || -> Result<[u8; 8]> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b).map_err(|e| Error::io(&bin, e))?;
            Ok(b)
        };
        if &read8()? != MAGIC {
            return Err(Error::Serde(format!("{} is not a vector table", bin.display())));
        }
        let rows = u64::from_le_bytes(read8()?) as usize;
        let dim = u64::from_le_bytes(read8()?) as usize;
        if rows != manifest.entries.len() || dim != manifest.dim {
            return Err(Error::Serde("vector table does not match its manifest".into()));
        }
        let cache = EmbeddingCache::default();
        for entry in &manifest.entries {
            let mut v = Array1::zeros(dim);
            for x in v.iter_mut() {
                *x = f64::from_le_bytes(read8()?);
            }
            let r = InstanceRef {
                sentence_id: entry.sentence_id.clone(),
                target_index: entry.target_index,
            };
            cache.insert(current_version, &entry.key, &r, v)?;
        }
        Ok(cache)
    }
}
