//! Versioned binary container shared by every model checkpoint.
//!
//! Layout: 4-byte magic, u32 format version, u64 header length, JSON header,
//! u64 blob length, little-endian f32 tensor blob, 32-byte SHA-256 of all
//! preceding bytes. Loading verifies the hash before decoding anything.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numcore::{AdamWConfig, AdamWState, ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint hash mismatch: file is corrupted")]
    HashMismatch,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

impl CheckpointError {
    /// Distinct process exit-style code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            CheckpointError::Io { .. } => 10,
            CheckpointError::BadMagic { .. } => 11,
            CheckpointError::VersionMismatch { .. } => 12,
            CheckpointError::Truncated(_) => 13,
            CheckpointError::HashMismatch => 14,
            CheckpointError::Format(_) => 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub entries: Vec<TensorEntry>,
    pub data: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint { meta, entries: Vec::new(), data: Vec::new() }
    }

    pub fn push(&mut self, group: &str, name: &str, t: &Tensor<f32>) {
        self.entries.push(TensorEntry { group: group.into(), name: name.into(), shape: t.shape().to_vec() });
        self.data.push(t.data().to_vec());
    }

    pub fn push_params(&mut self, group: &str, params: &ParamSet<f32>) {
        for (_, p) in params.iter() {
            self.push(group, &p.name, &p.value);
        }
    }

    pub fn group(&self, group: &str) -> impl Iterator<Item = (&TensorEntry, &Vec<f32>)> {
        let g = group.to_string();
        self.entries.iter().zip(&self.data).filter(move |(e, _)| e.group == g)
    }

    /// Overwrites every parameter from `group`, requiring identical names and shapes.
    pub fn load_params(&self, group: &str, params: &mut ParamSet<f32>) -> Result<(), CheckpointError> {
        let stored: Vec<_> = self.group(group).collect();
        if stored.len() != params.len() {
            return Err(CheckpointError::Format(format!(
                "group {group}: {} tensors stored, model has {}",
                stored.len(),
                params.len()
            )));
        }
        for (p, (e, d)) in params.iter_mut().zip(stored) {
            if p.name != e.name || p.value.shape() != e.shape.as_slice() {
                return Err(CheckpointError::Format(format!("tensor {} does not match model tensor {}", e.name, p.name)));
            }
            p.value.data_mut().copy_from_slice(d);
        }
        Ok(())
    }

    pub fn push_adam(&mut self, state: &AdamWState<f32>, params: &ParamSet<f32>) {
        for ((_, p), (m, v)) in params.iter().zip(state.m.iter().zip(&state.v)) {
            self.push("adam_m", &p.name, m);
            self.push("adam_v", &p.name, v);
        }
    }

    pub fn load_adam(&self, params: &ParamSet<f32>, hyper: AdamWConfig, step: u64) -> Result<AdamWState<f32>, CheckpointError> {
        let mut st = AdamWState::new(params, hyper);
        st.step = step;
        for (group, dst) in [("adam_m", &mut st.m), ("adam_v", &mut st.v)] {
            let stored: Vec<_> = self.group(group).collect();
            if stored.len() != dst.len() {
                return Err(CheckpointError::Format(format!("optimizer group {group} has {} tensors", stored.len())));
            }
            for (t, (e, d)) in dst.iter_mut().zip(stored) {
                if t.shape() != e.shape.as_slice() {
                    return Err(CheckpointError::Format(format!("optimizer tensor {} shape", e.name)));
                }
                t.data_mut().copy_from_slice(d);
            }
        }
        Ok(st)
    }

    pub fn to_bytes(&self, magic: &[u8; 4]) -> Vec<u8> {
        let header = Header { dtype: "f32".into(), meta: self.meta.clone(), tensors: self.entries.clone() };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let blob_len: usize = self.data.iter().map(|d| 4 * d.len()).sum();
        let mut out = Vec::with_capacity(24 + hjson.len() + blob_len + 32);
        out.extend_from_slice(magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        out.extend_from_slice(&(blob_len as u64).to_le_bytes());
        for d in &self.data {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Truncated("missing magic".into()));
        }
        if &bytes[..4] != magic {
            return Err(CheckpointError::BadMagic {
                expected: String::from_utf8_lossy(magic).into(),
                found: String::from_utf8_lossy(&bytes[..4]).into(),
            });
        }
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated("missing version".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let read_u64 = |at: usize| -> Result<usize, CheckpointError> {
            bytes
                .get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
                .ok_or_else(|| CheckpointError::Truncated(format!("length field at byte {at}")))
        };
        let hlen = read_u64(8)?;
        let hstart: usize = 16;
        let blob_len_at = hstart.checked_add(hlen).ok_or_else(|| CheckpointError::Format("header length".into()))?;
        let blen = read_u64(blob_len_at)?;
        let bstart = blob_len_at + 8;
        let end = bstart.checked_add(blen).ok_or_else(|| CheckpointError::Format("blob length".into()))?;
        if bytes.len() < end + 32 {
            return Err(CheckpointError::Truncated(format!("expected {} bytes, found {}", end + 32, bytes.len())));
        }
        if bytes.len() > end + 32 {
            return Err(CheckpointError::Format("trailing bytes after hash".into()));
        }
        if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
            return Err(CheckpointError::HashMismatch);
        }
        let header: Header =
            serde_json::from_slice(&bytes[hstart..blob_len_at]).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(CheckpointError::Format(format!("dtype {}", header.dtype)));
        }
        let mut data = Vec::with_capacity(header.tensors.len());
        let mut at = bstart;
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if at + 4 * n > end {
                return Err(CheckpointError::Format(format!("tensor {} overruns blob", e.name)));
            }
            data.push(bytes[at..at + 4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect());
            at += 4 * n;
        }
        if at != end {
            return Err(CheckpointError::Format("blob length disagrees with tensor table".into()));
        }
        Ok(Checkpoint { meta: header.meta, entries: header.tensors, data })
    }

    pub fn save(&self, path: &Path, magic: &[u8; 4]) -> Result<String, CheckpointError> {
        let bytes = self.to_bytes(magic);
        let hash = hex_digest(&bytes[bytes.len() - 32..]);
        std::fs::write(path, bytes).map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })?;
        Ok(hash)
    }

    pub fn load(path: &Path, magic: &[u8; 4]) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })?;
        Checkpoint::from_bytes(&bytes, magic)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 trailer of a checkpoint's bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex_digest(&bytes[bytes.len().saturating_sub(32)..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({"k": 3, "lr": 0.0003}));
        c.push("params", "a", &Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.1]).unwrap());
        c.push("params", "b", &Tensor::from_vec(&[3], vec![7.0, 8.0, 9.0]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes(b"TST1");
        let back = Checkpoint::from_bytes(&bytes, b"TST1").unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(b"TST1"), bytes);
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes(b"TST1");
        assert!(matches!(Checkpoint::from_bytes(&bytes, b"XXX1"), Err(CheckpointError::BadMagic { .. })));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v, b"TST1"), Err(CheckpointError::VersionMismatch { found: 9, .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5], b"TST1"), Err(CheckpointError::Truncated(_))));
        let mut c = bytes.clone();
        let n = c.len();
        c[n - 40] ^= 0x55;
        let err = Checkpoint::from_bytes(&c, b"TST1").unwrap_err();
        assert!(matches!(err, CheckpointError::HashMismatch));
        assert_ne!(err.code(), CheckpointError::Truncated(String::new()).code());
    }
}
