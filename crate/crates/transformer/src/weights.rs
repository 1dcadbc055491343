//! Reading and writing Hugging Face safetensors checkpoints.

use std::path::Path;

use half::{bf16, f16};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use basicmip::nn::Parameterized;
use basicmip::{Error, Result};

use crate::TransformerEncoder;

/// Prefixes under which published checkpoints nest the encoder.
const PREFIXES: [&str; 4] = ["", "bert.", "roberta.", "model."];

fn to_f64(view: &TensorView<'_>, name: &str) -> Result<Vec<f64>> {
    let bytes = view.data();
    let out = match view.dtype() {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect(),
        other => return Err(Error::Serde(format!("tensor {name} has unsupported dtype {other:?}"))),
    };
    Ok(out)
}

/// Older checkpoints call layer-norm parameters `gamma` and `beta`.
fn aliases(name: &str) -> Vec<String> {
    let mut out = vec![name.to_string()];
    if name.contains("LayerNorm") {
        if let Some(stem) = name.strip_suffix(".weight") {
            out.push(format!("{stem}.gamma"));
        } else if let Some(stem) = name.strip_suffix(".bias") {
            out.push(format!("{stem}.beta"));
        }
    }
    out
}

pub fn load_into(encoder: &mut TransformerEncoder, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)?;
    let names = st.names();
    let prefix = PREFIXES
        .iter()
        .find(|p| names.iter().any(|n| **n == format!("{p}embeddings.word_embeddings.weight")))
        .ok_or_else(|| {
            Error::Config(format!(
                "{}: no embeddings.word_embeddings.weight tensor under any known prefix",
                path.display()
            ))
        })?;
    let mut problem = None;
    encoder.visit_params_mut(&mut |p| {
        if problem.is_some() {
            return;
        }
        let found = aliases(p.name)
            .into_iter()
            .map(|n| format!("{prefix}{n}"))
            .find_map(|n| st.tensor(&n).ok().map(|t| (n, t)));
        match found {
            None => problem = Some(format!("checkpoint lacks {prefix}{}", p.name)),
            Some((name, view)) => match to_f64(&view, &name) {
                Ok(values) if values.len() == p.value.len() => p.value.copy_from_slice(&values),
                Ok(values) => {
                    problem = Some(format!(
                        "{name} has shape {:?} ({} values), model expects {}",
                        view.shape(),
                        values.len(),
                        p.value.len()
                    ))
                }
                Err(e) => problem = Some(e.to_string()),
            },
        }
    });
    match problem {
        Some(msg) => Err(Error::Config(format!("{}: {msg}", path.display()))),
        None => Ok(()),
    }
}

pub fn save_f32(encoder: &TransformerEncoder, path: &Path) -> Result<()> {
    let mut raw: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    encoder.visit_params(&mut |name, shape, values| {
        let bytes = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        raw.push((name.to_string(), shape.to_vec(), bytes));
    });
    let views = raw
        .iter()
        .map(|(name, shape, bytes)| Ok((name.clone(), TensorView::new(Dtype::F32, shape.clone(), bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, &None)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
