//! `RNR1` container: magic, little-endian u64 metadata length, JSON
//! metadata, then every tensor as little-endian f32 in metadata order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"RNR1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: String,
    pub vocab_hash: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    /// Model hyperparameters and any kind-specific payload.
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Metadata,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        vocab_hash: &str,
        meta: serde_json::Value,
        named: Vec<(String, Tensor<f32>)>,
    ) -> Self {
        let (entries, tensors) = named
            .into_iter()
            .map(|(name, t)| {
                (
                    TensorEntry {
                        name,
                        shape: t.shape().to_vec(),
                    },
                    t,
                )
            })
            .unzip();
        Checkpoint {
            metadata: Metadata {
                kind: kind.to_string(),
                vocab_hash: vocab_hash.to_string(),
                config_hash: None,
                meta,
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.metadata)?;
        let payload: usize = self.tensors.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 4 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint {
            path: origin.to_path_buf(),
            message: m.to_string(),
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing RNR1 magic"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated metadata"))?;
        let metadata: Metadata = serde_json::from_slice(body)?;
        let mut off = 12 + len;
        let mut tensors = Vec::with_capacity(metadata.tensors.len());
        for e in &metadata.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(off..off + 4 * n)
                .ok_or_else(|| bad("truncated tensor payload"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(e.shape.clone(), data)?);
            off += 4 * n;
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }

    pub fn expect_kind(&self, kind: &str, origin: &Path) -> Result<()> {
        if self.metadata.kind != kind {
            return Err(Error::Checkpoint {
                path: origin.to_path_buf(),
                message: format!("expected a {kind} checkpoint, found {}", self.metadata.kind),
            });
        }
        Ok(())
    }

    pub fn verify_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.metadata.vocab_hash != vocab_hash {
            return Err(Error::VocabMismatch {
                expected: vocab_hash.to_string(),
                found: self.metadata.vocab_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.metadata.tensors.iter().map(|e| e.name.clone()).collect()
    }
}
