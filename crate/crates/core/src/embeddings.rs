//! Precomputed (frozen) contextual token embeddings, one record per
//! sub-dialog.
//!
//! ```text
//! b"DSTE" | u32 version | u32 dim | u32 n_records
//! n × (u32 key_len | key "dialogid#t" | u32 rows | rows × dim f64)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::checkpoint::{put_bytes, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSTE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `rows` is row-major, `rows.len() / dim` tokens.
    pub fn insert(&mut self, key: impl Into<String>, rows: Vec<f64>) -> Result<()> {
        if rows.len() % self.dim != 0 {
            return Err(Error::EmbeddingDimension {
                expected: self.dim,
                found: rows.len(),
            });
        }
        self.records.insert(key.into(), rows);
        Ok(())
    }

    /// Rows for `key`, checked against the expected token count.
    pub fn rows(&self, key: &str, expected_rows: usize) -> Result<Vec<&[f64]>> {
        let flat = self
            .records
            .get(key)
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))?;
        let found = flat.len() / self.dim;
        if found != expected_rows {
            return Err(Error::EmbeddingRows {
                key: key.to_string(),
                expected: expected_rows,
                found,
            });
        }
        Ok(flat.chunks_exact(self.dim).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (key, rows) in &self.records {
            put_bytes(&mut out, key.as_bytes());
            out.extend_from_slice(&((rows.len() / self.dim) as u32).to_le_bytes());
            for v in rows {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "embedding file");
        if r.take(4)? != MAGIC {
            return Err(Error::format("embedding file", "bad magic (expected DSTE)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("embedding file", format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::format("embedding file", "zero dimension"));
        }
        let count = r.u32()? as usize;
        let mut store = EmbeddingStore::new(dim);
        for _ in 0..count {
            let key = r.string()?;
            let rows = r.u32()? as usize;
            let values = r.f64s(rows * dim)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format("embedding file", format!("non-finite value in `{key}`")));
            }
            store.records.insert(key, values);
        }
        r.finish()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        EmbeddingStore::from_bytes(&bytes)
    }
}
