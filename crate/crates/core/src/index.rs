//! Flat exact cosine-similarity index with a compact binary file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "SSIX" | version u32 | dim u32 | count u64 | metric u8 (1 = cosine)
//! count × { chunk_id_len u16 | chunk_id utf-8 | dim × f32 }
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;

pub const MAGIC: &[u8; 4] = b"SSIX";
pub const FORMAT_VERSION: u32 = 1;
pub const METRIC_COSINE: u8 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("empty index")]
    Empty,
    #[error("duplicate chunk id {0:?}")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("chunk id too long ({0} bytes)")]
    IdTooLong(usize),
    #[error("bad index file: {0}")]
    Format(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub k: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self { k: 3 }
    }
}

/// Orders by score descending, then chunk id ascending.
pub fn rank_order(a: &SearchResult, b: &SearchResult) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

impl VectorIndex {
    pub fn build(entries: Vec<IndexEntry>, dim: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: e.vector.dim(),
                });
            }
            if !seen.insert(e.chunk_id.as_str()) {
                return Err(IndexError::DuplicateId(e.chunk_id.clone()));
            }
            if e.chunk_id.len() > usize::from(u16::MAX) {
                return Err(IndexError::IdTooLong(e.chunk_id.len()));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Scores every entry and returns the best `min(k, len)` by
    /// [`rank_order`].
    pub fn search(&self, query: &EmbeddingVector, cfg: &RetrieverConfig) -> Result<Vec<SearchResult>> {
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        if cfg.k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut scored: Vec<SearchResult> = self
            .entries
            .iter()
            .map(|e| SearchResult {
                chunk_id: e.chunk_id.clone(),
                score: query.cosine(&e.vector),
            })
            .collect();
        let k = cfg.k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        out.write_all(&[METRIC_COSINE])?;
        for e in &self.entries {
            out.write_all(&(e.chunk_id.len() as u16).to_le_bytes())?;
            out.write_all(e.chunk_id.as_bytes())?;
            for v in e.vector.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut input)? as usize;
        let mut count_bytes = [0u8; 8];
        input.read_exact(&mut count_bytes)?;
        let count = u64::from_le_bytes(count_bytes);
        let mut metric = [0u8; 1];
        input.read_exact(&mut metric)?;
        if metric[0] != METRIC_COSINE {
            return Err(IndexError::Format(format!("unsupported metric {}", metric[0])));
        }

        let mut entries = Vec::new();
        let mut vec_bytes = vec![0u8; dim * 4];
        for _ in 0..count {
            let mut len = [0u8; 2];
            input.read_exact(&mut len)?;
            let mut id = vec![0u8; usize::from(u16::from_le_bytes(len))];
            input.read_exact(&mut id)?;
            let chunk_id = String::from_utf8(id).map_err(|e| IndexError::Format(e.to_string()))?;
            input.read_exact(&mut vec_bytes)?;
            let values = vec_bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push(IndexEntry {
                chunk_id,
                vector: EmbeddingVector(values),
            });
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(IndexError::Format("trailing bytes after last record".into()));
        }
        Self::build(entries, dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
