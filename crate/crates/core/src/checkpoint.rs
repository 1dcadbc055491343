//! Head and encoder parameters in one safetensors file.
//!
//! Tensors are stored as `f64` under `head.<name>` and `encoder.<name>`; the
//! `basicmip` metadata entry holds [`CheckpointMeta`] as JSON.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::encoder::{Encoder, EncoderMode};
use crate::error::{Error, Result};
use crate::model::{HeadConfig, ModelHead};
use crate::nn::Parameterized;

const META_KEY: &str = "basicmip";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub head: HeadConfig,
    pub encoder_mode: EncoderMode,
    /// Weights version of the paired encoder when it was saved.
    pub encoder_weights_version: u64,
    pub config_fingerprint: String,
    pub index_fingerprint: String,
    pub key_fn_id: String,
    pub config: TrainConfig,
}

struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: BTreeMap<String, Tensor>,
}

fn collect(prefix: &str, model: &dyn Parameterized, out: &mut Vec<(String, Vec<usize>, Vec<u8>)>) {
    model.visit_params(&mut |name, shape, values| {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        out.push((format!("{prefix}.{name}"), shape.to_vec(), bytes));
    });
}

pub fn save_checkpoint<E: Encoder>(path: &Path, head: &ModelHead, encoder: &E, meta: &CheckpointMeta) -> Result<()> {
    let mut raw = Vec::new();
    collect("head", head, &mut raw);
    collect("encoder", encoder, &mut raw);
    let views = raw
        .iter()
        .map(|(name, shape, bytes)| Ok((name.clone(), TensorView::new(Dtype::F64, shape.clone(), bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    let metadata = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    let bytes = safetensors::serialize(views, &Some(metadata))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes)?;
        let meta_json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Serde(format!("{} has no checkpoint metadata", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
        if meta.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format version {}",
                path.display(),
                meta.format_version
            )));
        }
        let st = SafeTensors::deserialize(&bytes)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 {
                return Err(Error::Serde(format!("tensor {name} is {:?}, expected F64", view.dtype())));
            }
            let data = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.insert(
                name,
                Tensor {
                    shape: view.shape().to_vec(),
                    data,
                },
            );
        }
        Ok(Checkpoint { meta, tensors })
    }

    fn assign(&self, prefix: &str, model: &mut dyn Parameterized) -> Result<()> {
        let mut problem = None;
        let mut seen = 0;
        model.visit_params_mut(&mut |p| {
            let name = format!("{prefix}.{}", p.name);
            match self.tensors.get(&name) {
                Some(t) if t.data.len() == p.value.len() => {
                    p.value.copy_from_slice(&t.data);
                    seen += 1;
                }
                Some(t) => {
                    problem.get_or_insert(format!(
                        "tensor {name} has shape {:?} ({} values), model expects {}",
                        t.shape,
                        t.data.len(),
                        p.value.len()
                    ));
                }
                None => {
                    problem.get_or_insert(format!("checkpoint lacks tensor {name}"));
                }
            }
        });
        if let Some(msg) = problem {
            return Err(Error::Validation(msg));
        }
        let stored = self.tensors.keys().filter(|k| k.starts_with(&format!("{prefix}."))).count();
        if stored != seen {
            return Err(Error::Validation(format!(
                "checkpoint has {stored} {prefix} tensors, model has {seen}"
            )));
        }
        Ok(())
    }

    pub fn head(&self) -> Result<ModelHead> {
        let mut head = ModelHead::zeros(self.meta.head)?;
        self.assign("head", &mut head)?;
        Ok(head)
    }

    /// Overwrites `encoder`'s parameters; the encoder gets a fresh weights version.
    pub fn load_encoder<E: Encoder>(&self, encoder: &mut E) -> Result<()> {
        if encoder.mode() != self.meta.encoder_mode || encoder.hidden_dim() != self.meta.head.input_dim {
            return Err(Error::Config(format!(
                "checkpoint expects a {:?} encoder of width {}, got {:?} of width {}",
                self.meta.encoder_mode,
                self.meta.head.input_dim,
                encoder.mode(),
                encoder.hidden_dim()
            )));
        }
        self.assign("encoder", encoder)?;
        encoder.bump_version();
        Ok(())
    }
}
