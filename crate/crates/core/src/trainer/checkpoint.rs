//! Binary checkpoint files.
//!
//! Layout: the 8 bytes `MVSSCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header of that many
//! bytes, then every tensor's values as little-endian `f64` in header
//! order.

use std::fs;
use std::path::Path;

use mvss_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::sampler::SamplerState;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"MVSSCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Number of completed optimizer steps.
    pub step: u64,
    pub config: TrainConfig,
    pub best_val_com_f1: Option<f64>,
    pub sampler: SamplerState,
    /// Parameters in model order.
    pub params: Vec<(String, Tensor)>,
    pub adam: Adam,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    config: TrainConfig,
    best_val_com_f1: Option<f64>,
    sampler: SamplerState,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::with_params(
            self.config.model.clone(),
            self.params.iter().map(|(n, t)| (n.as_str(), t.clone())),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let names = self.params.iter().map(|(n, _)| n.clone());
        let tensors: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t))
            .chain(names.clone().zip(&self.adam.m).map(|(n, t)| (format!("adam.m.{n}"), t)))
            .chain(names.zip(&self.adam.v).map(|(n, t)| (format!("adam.v.{n}"), t)))
            .collect();
        let header = Header {
            step: self.step,
            config: self.config.clone(),
            best_val_com_f1: self.best_val_com_f1,
            sampler: self.sampler.clone(),
            adam_t: self.adam.t,
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut payload = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(bad("truncated tensor data"));
            }
            let data = payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload = &payload[n * 8..];
            tensors.push((entry.name.clone(), Tensor::new(&entry.shape, data)));
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        if tensors.len() % 3 != 0 {
            return Err(bad("tensor count is not params + two moment sets"));
        }
        let k = tensors.len() / 3;
        let v: Vec<Tensor> = tensors.drain(2 * k..).map(|(_, t)| t).collect();
        let m: Vec<Tensor> = tensors.drain(k..).map(|(_, t)| t).collect();
        header.config.validate()?;
        Ok(Self {
            step: header.step,
            config: header.config,
            best_val_com_f1: header.best_val_com_f1,
            sampler: header.sampler,
            params: tensors,
            adam: Adam { t: header.adam_t, m, v },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
