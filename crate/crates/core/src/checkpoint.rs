//! `GKDC` checkpoint container shared by teachers and students.
//!
//! ```text
//! "GKDC" | version u32 = 1 | metadata_len u64 | metadata (UTF-8 JSON) |
//!   tensors as f64, row-major, in manifest order
//! ```
//!
//! The metadata names the model kind, echoes the training configuration and
//! lists each tensor's name and shape in the order the payload stores them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::ByteReader;
use crate::error::{Error, Result};
use crate::manifest::json_err;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GKDC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format_version: u32,
    model: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            format_version: VERSION,
            model: self.model.clone(),
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let meta = serde_json::to_vec(&meta).map_err(json_err)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + meta.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let len = r.u64("metadata length")?;
        let at = r.offset();
        let len = usize::try_from(len).map_err(|_| Error::format(at, "metadata length overflows"))?;
        let raw = r.bytes(len, "metadata")?;
        let meta: Metadata =
            serde_json::from_slice(raw).map_err(|e| Error::format(at, format!("bad metadata: {e}")))?;
        if meta.format_version != VERSION {
            return Err(Error::format(at, format!("metadata format version {}", meta.format_version)));
        }
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for entry in meta.tensors {
            let start = r.offset();
            let n = entry
                .rows
                .checked_mul(entry.cols)
                .ok_or_else(|| Error::format(start, format!("tensor {} is too large", entry.name)))?;
            let mut data = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                data.push(r.f64(&entry.name)?);
            }
            let t = Tensor::new(entry.rows, entry.cols, data)
                .map_err(|_| Error::format(start, format!("tensor {} holds non-finite values", entry.name)))?;
            tensors.push((entry.name, t));
        }
        r.finish()?;
        Ok(Checkpoint {
            model: meta.model,
            config: meta.config,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            model: "teacher".into(),
            config: serde_json::json!({"hidden": 4, "lr": 0.001}),
            tensors: vec![
                ("w0".into(), Tensor::from_rows(&[[0.1, -0.2], [1.0 / 3.0, 5e-300]]).unwrap()),
                ("b".into(), Tensor::zeros(1, 3)),
            ],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_inputs() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 3];
        match Checkpoint::from_bytes(cut) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset as usize, bytes.len() - 8);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format { .. })));
    }
}
