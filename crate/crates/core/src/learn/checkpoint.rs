//! Model checkpoints: `MSMODEL\0`, u32 LE version, u32 LE JSON length, JSON
//! topology, then little-endian f64 parameters followed by the Adam first and
//! second moments, each in declared tensor order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, LearnError, ModelConfig, ModelState, UNet};

pub const MODEL_MAGIC: &[u8; 8] = b"MSMODEL\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    norm_schema_version: u32,
    provenance: String,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn tensor_table(net: &UNet) -> Vec<TensorEntry> {
    net.tensor_shapes()
        .into_iter()
        .map(|(name, shape)| TensorEntry { name, shape })
        .collect()
}

pub fn model_to_bytes(state: &ModelState, provenance: &str) -> Result<Vec<u8>, LearnError> {
    let net = state.net()?;
    let header = Header {
        config: state.config.clone(),
        tensors: tensor_table(&net),
        step: state.adam.step,
        beta1: state.adam.beta1,
        beta2: state.adam.beta2,
        eps: state.adam.eps,
        norm_schema_version: state.norm_schema_version,
        provenance: provenance.to_string(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 24 * state.params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in [&state.params, &state.adam.m, &state.adam.v] {
        for x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(ModelState, String), LearnError> {
    let bad = |m: &str| LearnError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
    let net = UNet::new(header.config.clone())?;
    if header.tensors != tensor_table(&net) {
        return Err(bad("tensor table does not match the topology"));
    }
    let n = net.n_params();
    let payload = &bytes[16 + len..];
    if payload.len() != 3 * n * 8 {
        return Err(bad(&format!("payload is {} bytes, expected {}", payload.len(), 3 * n * 8)));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = || (&mut values).take(n).collect::<Vec<f64>>();
    let (params, m, v) = (take(), take(), take());
    let state = ModelState {
        config: header.config,
        params,
        adam: AdamState {
            beta1: header.beta1,
            beta2: header.beta2,
            eps: header.eps,
            m,
            v,
            step: header.step,
        },
        norm_schema_version: header.norm_schema_version,
    };
    Ok((state, header.provenance))
}

pub fn save_model(state: &ModelState, provenance: &str, path: impl AsRef<Path>) -> Result<(), LearnError> {
    fs::write(path, model_to_bytes(state, provenance)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelState, String), LearnError> {
    model_from_bytes(&fs::read(path)?)
}
