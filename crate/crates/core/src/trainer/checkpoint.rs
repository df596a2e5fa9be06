//! Binary checkpoints: an 8-byte magic, a format version, a JSON header
//! describing the configuration, vocabulary and tensor layout, then every
//! tensor as little-endian `f64` (parameters, then optimizer moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::Model;

use super::config::TrainConfig;
use super::optim::AdamState;

const MAGIC: &[u8; 8] = b"SCIXCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Option<AdamState>,
    /// Optimization steps taken when the checkpoint was made.
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    config: TrainConfig,
    vocab: Vocab,
    step: usize,
    tensors: Vec<TensorInfo>,
    optimizer_step: Option<usize>,
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = &self.model.params;
        let header = Header {
            fingerprint: self.config.fingerprint(),
            config: self.config.clone(),
            vocab: self.model.vocab.clone(),
            step: self.step,
            tensors: params
                .iter()
                .map(|p| TensorInfo { name: p.name.clone(), rows: p.value.rows, cols: p.value.cols })
                .collect(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 8 * params.num_scalars() * 3 + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params.iter() {
            push_tensor(&mut out, &p.value);
        }
        if let Some(o) = &self.optimizer {
            for t in o.m.iter().chain(&o.v) {
                push_tensor(&mut out, t);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body_start = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body_start]).map_err(|e| bad(format!("corrupt header: {e}")))?;
        if header.fingerprint != header.config.fingerprint() {
            return Err(bad("configuration fingerprint mismatch".into()));
        }
        header.config.validate()?;

        let mut model = Model::new(header.config.model_config(), header.vocab, header.config.seed)?;
        if model.params.len() != header.tensors.len() {
            return Err(bad(format!("expected {} tensors, found {}", model.params.len(), header.tensors.len())));
        }
        let mut floats = bytes[body_start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut read = |rows: usize, cols: usize| -> Result<Tensor> {
            let data: Vec<f64> = floats.by_ref().take(rows * cols).collect();
            if data.len() != rows * cols {
                return Err(bad("truncated tensor data".into()));
            }
            Ok(Tensor::from_vec(rows, cols, data))
        };
        let ids: Vec<_> = model.params.ids().collect();
        for (id, info) in ids.iter().zip(&header.tensors) {
            let current = model.params.get(*id);
            if model.params.name(*id) != info.name || current.shape() != (info.rows, info.cols) {
                return Err(bad(format!("tensor {} does not match the model layout", info.name)));
            }
            *model.params.get_mut(*id) = read(info.rows, info.cols)?;
        }
        let optimizer = match header.optimizer_step {
            None => None,
            Some(step) => {
                let mut m = Vec::with_capacity(ids.len());
                let mut v = Vec::with_capacity(ids.len());
                for info in &header.tensors {
                    m.push(read(info.rows, info.cols)?);
                }
                for info in &header.tensors {
                    v.push(read(info.rows, info.cols)?);
                }
                Some(AdamState { step, m, v })
            }
        };
        if !(bytes.len() - body_start).is_multiple_of(8) || floats.next().is_some() {
            return Err(bad("trailing bytes after tensor data".into()));
        }
        Ok(Checkpoint { config: header.config, model, optimizer, step: header.step })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
