//! Versioned binary container for named f32 tensors.
//!
//! Layout: `UVMK`, u32 version, u32 header length, JSON header, tensor data
//! (f32 little-endian, in header order), then a SHA-256 of everything before it.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"UVMK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: a kind tag, free-form metadata and named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn extend(&mut self, named: impl IntoIterator<Item = (String, Tensor<f32>)>) {
        self.tensors.extend(named);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Tensors whose name starts with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.tensors.iter().filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone()))).collect()
    }

    /// Fills `store` from the tensors named `prefix` + parameter name, checking shapes.
    pub fn load_into(&self, store: &mut ParamStore<f32>, prefix: &str) -> Result<()> {
        let named = self.with_prefix(prefix);
        for (name, t) in store.iter() {
            let found = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| CheckpointError::MissingTensor(format!("{prefix}{name}")))?;
            if found.1.shape() != t.shape() {
                return Err(CheckpointError::TensorShape {
                    name: format!("{prefix}{name}"),
                    expected: t.shape().to_vec(),
                    found: found.1.shape().to_vec(),
                }
                .into());
            }
        }
        store.load_named(&named)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::KindMismatch { expected: kind.into(), found: self.kind.clone() })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape(), offset, len: t.numel() });
            offset += t.numel();
        }
        let header = Header { kind: self.kind.clone(), meta: self.meta.clone(), tensors: entries };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset * 4 + 32);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).expect("vec write");
        out.write_u32::<LittleEndian>(header.len() as u32).expect("vec write");
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.write_f32::<LittleEndian>(v).expect("vec write");
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut cur = Cursor::new(&bytes[4..]);
        let version = cur.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)?;
        if version != VERSION {
            return Err(CheckpointError::Version { expected: VERSION, found: version });
        }
        let header_len = cur.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)? as usize;
        let body_start = 12 + header_len;
        if bytes.len() < body_start + 32 {
            return Err(CheckpointError::Truncated);
        }
        let header: Header =
            serde_json::from_slice(&bytes[12..body_start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let total: usize = header.tensors.iter().map(|e| e.len).sum();
        let expected_len = body_start + total * 4 + 32;
        if bytes.len() < expected_len {
            return Err(CheckpointError::Truncated);
        }
        if bytes.len() > expected_len {
            return Err(CheckpointError::Header("trailing bytes after checksum".into()));
        }
        let (payload, digest) = bytes.split_at(expected_len - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let mut data = Cursor::new(&payload[body_start..]);
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut offset = 0;
        for e in header.tensors {
            if e.offset != offset || e.shape.iter().product::<usize>() != e.len {
                return Err(CheckpointError::Header(format!("inconsistent entry for `{}`", e.name)));
            }
            let mut buf = vec![0f32; e.len];
            data.read_f32_into::<LittleEndian>(&mut buf).map_err(|_| CheckpointError::Truncated)?;
            tensors.push((e.name, Tensor::new(e.shape, buf)));
            offset += e.len;
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        // write-then-rename so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|source| Error::Checkpoint { path: Some(path.to_path_buf()), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("color", serde_json::json!({"epoch": 3}));
        c.push("a.weight", Tensor::new([2, 1, 1, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.25]));
        c.push("b", Tensor::scalar(42.0));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Checksum)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..n - 5]), Err(CheckpointError::Truncated)));
        assert!(matches!(Checkpoint::from_bytes(b"PNG...."), Err(CheckpointError::BadMagic)));
        let mut v = sample().to_bytes();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Version { found: 9, .. })));
    }

    #[test]
    fn kind_is_checked() {
        let c = sample();
        assert!(c.expect_kind("color").is_ok());
        assert!(matches!(c.expect_kind("pattern"), Err(CheckpointError::KindMismatch { .. })));
    }
}
