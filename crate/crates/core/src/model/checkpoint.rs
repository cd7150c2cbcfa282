//! Single-file archive: a header line, a JSON metadata block, and raw
//! little-endian tensor data in the order listed by the metadata.
//!
//! ```text
//! dccycle-ckpt-v1\n
//! <u64 LE: metadata length><metadata JSON>
//! <tensor 0 bytes><tensor 1 bytes>...
//! ```

use std::io::{Read, Write};
use std::path::Path;

use dccycle_autograd::{DType, Real, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "dccycle-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope {
    dtype: DType,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.push((name.into(), tensor));
    }

    /// Tensors whose names start with `prefix`, in stored order.
    pub fn with_prefix(&self, prefix: &str) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let envelope = Envelope {
            dtype: T::DTYPE,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&envelope)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER.len() + 9 + json.len() + payload * T::DTYPE.byte_width());
        out.extend_from_slice(CHECKPOINT_HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = CHECKPOINT_HEADER.len() + 1;
        if bytes.len() < header + 8 || &bytes[..header - 1] != CHECKPOINT_HEADER.as_bytes() || bytes[header - 1] != b'\n' {
            return Err(Error::Checkpoint(format!(
                "missing `{CHECKPOINT_HEADER}` header"
            )));
        }
        let len = u64::from_le_bytes(bytes[header..header + 8].try_into().expect("8 bytes")) as usize;
        let start = header + 8;
        let json = bytes
            .get(start..start + len)
            .ok_or_else(|| Error::Checkpoint("truncated metadata".into()))?;
        let envelope: Envelope = serde_json::from_slice(json)?;
        if envelope.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "stored as {} but loaded as {}",
                envelope.dtype,
                T::DTYPE
            )));
        }
        let width = T::DTYPE.byte_width();
        let mut offset = start + len;
        let mut tensors = Vec::with_capacity(envelope.tensors.len());
        for entry in envelope.tensors {
            let n = entry.shape.numel();
            let raw = bytes
                .get(offset..offset + n * width)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor {}", entry.name)))?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            tensors.push((entry.name, Tensor::from_vec(entry.shape, data)?));
            offset += n * width;
        }
        if offset != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - offset
            )));
        }
        Ok(Checkpoint {
            meta: envelope.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        // write-then-rename so an interrupted save never clobbers the last good file
        let tmp = path.with_extension("partial");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the stored precision of an archive.
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<DType> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = CHECKPOINT_HEADER.len() + 1;
    if bytes.len() < header + 8 || &bytes[..header - 1] != CHECKPOINT_HEADER.as_bytes() {
        return Err(Error::Checkpoint(format!("missing `{CHECKPOINT_HEADER}` header")));
    }
    let len = u64::from_le_bytes(bytes[header..header + 8].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(header + 8..header + 8 + len)
        .ok_or_else(|| Error::Checkpoint("truncated metadata".into()))?;
    let envelope: Envelope = serde_json::from_slice(json)?;
    Ok(envelope.dtype)
}
