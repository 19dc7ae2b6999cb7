//! The FANW container for weights and training checkpoints.
//!
//! ```text
//! b"FANW" | u32 version | u32 header length | JSON header | f32 data | u32 CRC32
//! ```
//!
//! Integers and floats are little-endian. The header holds the network
//! config, a manifest of `{name, dims}` in data order, a `kind` string and an
//! optional `train` object. The CRC covers every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FanConfig, FanModel};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FANW";
pub const VERSION: u32 = 1;

pub const KIND_WEIGHTS: &str = "weights";
pub const KIND_CHECKPOINT: &str = "checkpoint";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dims: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: FanConfig,
    kind: String,
    tensors: Vec<Entry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<serde_json::Value>,
}

/// Decoded contents of a FANW file.
#[derive(Clone, Debug)]
pub struct FanwFile {
    pub config: FanConfig,
    pub kind: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub train: Option<serde_json::Value>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl FanwFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            kind: self.kind.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    dims: t.shape().dims(),
                })
                .collect(),
            train: self.train.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let data_len: usize = self.tensors.iter().map(|(_, t)| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(format_err("file is truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err("bad magic bytes, not a FANW file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(format_err(format!(
                "CRC mismatch (stored {stored:08x}, computed {actual:08x})"
            )));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let json = body
            .get(12..12 + hlen)
            .ok_or_else(|| format_err("header runs past the end of the file"))?;
        let header: Header = serde_json::from_slice(json)?;
        let mut data = &body[12 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let shape = Shape::from_dims(&e.dims).expect("four dims");
            let len = shape.numel() * 4;
            if data.len() < len {
                return Err(format_err(format!("data for {} is truncated", e.name)));
            }
            let (chunk, rest) = data.split_at(len);
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(shape, values)?));
            data = rest;
        }
        if !data.is_empty() {
            return Err(format_err(format!("{} unexpected trailing bytes", data.len())));
        }
        Ok(FanwFile {
            config: header.config,
            kind: header.kind,
            tensors,
            train: header.train,
        })
    }

    /// Writes atomically through a sibling temporary file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("fanw.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Builds the model stored in this file, checking the manifest against
    /// the parameter set the config implies. Tensors under `adam.` are
    /// optimizer state and are ignored here.
    pub fn to_model(&self) -> Result<FanModel<f32>> {
        let mut model = FanModel::<f32>::new(self.config.clone(), 0)?;
        let stored: Vec<&(String, Tensor<f32>)> = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("adam."))
            .collect();
        let params = model.params().len();
        if stored.len() != params {
            return Err(format_err(format!(
                "manifest lists {} parameters but the config implies {params}",
                stored.len()
            )));
        }
        for (id, (name, t)) in model.params().ids().collect::<Vec<_>>().into_iter().zip(stored) {
            let expected = model.params().name(id);
            if name != expected {
                return Err(format_err(format!(
                    "manifest has {name} where the config implies {expected}"
                )));
            }
            model.params_mut().set(id, t.clone()).map_err(|_| {
                format_err(format!("{name} has dims {} inconsistent with the config", t.shape()))
            })?;
        }
        Ok(model)
    }
}

/// Parameters of `model` as stored tensors.
pub fn model_tensors<T: Scalar>(model: &FanModel<T>) -> Vec<(String, Tensor<f32>)> {
    model
        .params()
        .names()
        .iter()
        .zip(model.params().tensors())
        .map(|(n, t)| (n.clone(), t.cast()))
        .collect()
}

pub fn save_model<T: Scalar>(model: &FanModel<T>, path: &Path) -> Result<()> {
    FanwFile {
        config: model.config().clone(),
        kind: KIND_WEIGHTS.into(),
        tensors: model_tensors(model),
        train: None,
    }
    .write(path)
}

pub fn load_model(path: &Path) -> Result<FanModel<f32>> {
    FanwFile::read(path)?.to_model()
}
