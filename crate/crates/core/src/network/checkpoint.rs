//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 8          | magic `SSEGCKPT`                          |
//! | 4          | format version (`u32`, currently 1)       |
//! | 8          | header length `L` (`u64`)                 |
//! | `L`        | UTF-8 JSON [`CheckpointHeader`]           |
//! | rest       | raw array data, element type `dtype`      |
//!
//! Each tensor record gives its layer path, shape and element offset into the
//! data section. Readers match arrays by path, so writers may order them freely.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::params::NetworkParams;
use super::tensor::Real;
use super::unet::ResEncUNet;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub path: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub network: NetworkConfig,
    pub seed: u64,
    /// Training configuration and bookkeeping, opaque to this module.
    #[serde(default)]
    pub train: Option<serde_json::Value>,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub network: NetworkConfig,
    pub seed: u64,
    pub train: Option<serde_json::Value>,
    pub params: NetworkParams<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self
            .params
            .layout()
            .entries()
            .iter()
            .map(|e| TensorRecord {
                path: e.path.clone(),
                shape: e.shape.clone(),
                offset: e.offset,
            })
            .collect();
        let header = CheckpointHeader {
            dtype: T::DTYPE.to_string(),
            network: self.network.clone(),
            seed: self.seed,
            train: self.train.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let elem = std::mem::size_of::<T>();
        let mut out = Vec::with_capacity(20 + json.len() + self.params.len() * elem);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.values() {
            match elem {
                4 => out.extend_from_slice(&(v.to_f32().expect("f32")).to_le_bytes()),
                _ => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; arrays stored in another float width are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fmt("missing magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| fmt(format!("bad header: {e}")))?;
        let elem = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Unsupported(format!("checkpoint dtype {other}"))),
        };
        let data = &bytes[data_start..];
        let read = |i: usize| -> f64 {
            let b = &data[i * elem..(i + 1) * elem];
            if elem == 4 {
                f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")))
            } else {
                f64::from_le_bytes(b.try_into().expect("8 bytes"))
            }
        };
        let net = ResEncUNet::new(header.network.clone())?;
        let mut params = net.zero_params::<T>();
        let mut seen = 0;
        for rec in &header.tensors {
            let Some(entry) = net.layout().find(&rec.path) else {
                return Err(fmt(format!("unknown layer path {}", rec.path)));
            };
            if entry.shape != rec.shape {
                return Err(Error::Shape(format!(
                    "checkpoint array {} has shape {:?}, network expects {:?}",
                    rec.path, rec.shape, entry.shape
                )));
            }
            let len = entry.len();
            if (rec.offset + len) * elem > data.len() {
                return Err(fmt(format!("array {} runs past the end of the file", rec.path)));
            }
            let dst = entry.range();
            for (k, i) in dst.enumerate() {
                let v = read(rec.offset + k);
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite value in {}", rec.path)));
                }
                params.values_mut()[i] = T::from_f64_lossy(v);
            }
            seen += 1;
        }
        if seen != net.layout().entries().len() {
            return Err(fmt(format!("{} of {} arrays present", seen, net.layout().entries().len())));
        }
        Ok(Checkpoint {
            network: header.network,
            seed: header.seed,
            train: header.train,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tensor::Tensor;

    fn toy_checkpoint() -> (ResEncUNet, Checkpoint<f32>) {
        let cfg = NetworkConfig::toy();
        let net = ResEncUNet::new(cfg.clone()).unwrap();
        let params = net.init_params::<f32>(11);
        let ck = Checkpoint {
            network: cfg,
            seed: 11,
            train: Some(serde_json::json!({"epochs": 3})),
            params,
        };
        (net, ck)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (net, ck) = toy_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::<f32>::load(&path).unwrap();
        assert_eq!(back, ck);
        let x = Tensor::from_vec(1, 1, 16, 16, (0..256).map(|i| (i as f32 * 0.37).sin()).collect());
        let a = net.forward(&ck.params, &x).unwrap();
        let b = net.forward(&back.params, &x).unwrap();
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn f32_file_loads_as_f64() {
        let (_, ck) = toy_checkpoint();
        let wide = Checkpoint::<f64>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(wide.params.values()[7], f64::from(ck.params.values()[7]));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (_, ck) = toy_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..10]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bad).is_err());
    }
}
