//! On-disk matrix of precomputed embeddings, keyed by item id.
//!
//! Binary layout (little-endian), checksummed as a whole:
//!
//! ```text
//! magic   "MTDV"             4 bytes
//! version u32 = 1
//! dim     u32
//! rows    u64
//! payload rows * dim * f32   row-major
//! ids     rows * (u16 length + UTF-8 id), in row order
//! crc     u32                CRC32 (IEEE) of all prior bytes
//! ```
//!
//! Payload values are f32 — half the size of the f64 used inside the model
//! math, and the quantization is far below training noise. An empty store is
//! exactly 24 bytes: the 20-byte prelude plus the checksum.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::model::{EmbeddedItem, ItemStore, ModelError};

pub const STORE_MAGIC: [u8; 4] = *b"MTDV";
pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported embedding-store format version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("{0} trailing bytes after the checksum")]
    TrailingBytes(usize),
    #[error("store already contains item `{0}`")]
    DuplicateId(String),
    #[error("item `{id}` has {got} values, store holds {want}-dimensional rows")]
    DimensionMismatch { id: String, got: usize, want: usize },
    #[error("item `{id}` value {index} is not finite")]
    NonFinite { id: String, index: usize },
    #[error("store has no item `{0}`")]
    UnknownItem(String),
    #[error("invalid UTF-8 in item id: {0}")]
    BadId(#[from] std::string::FromUtf8Error),
    #[error("row count {0} is implausibly large for this file")]
    ImplausibleCount(u64),
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable-after-load matrix of f32 embeddings with an id index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    /// Row-major payload, `rows * dim` long.
    matrix: Vec<f32>,
    /// Ids in row order.
    row_ids: Vec<String>,
    /// id -> row.
    index: BTreeMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        Ok(EmbeddingStore {
            dim,
            matrix: Vec::new(),
            row_ids: Vec::new(),
            index: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    /// Ids in row (insertion) order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.row_ids.iter().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn insert(&mut self, id: &str, values: &[f32]) -> Result<(), StoreError> {
        if self.index.contains_key(id) {
            return Err(StoreError::DuplicateId(id.to_string()));
        }
        if values.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                id: id.to_string(),
                got: values.len(),
                want: self.dim,
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                id: id.to_string(),
                index: bad,
            });
        }
        self.index.insert(id.to_string(), self.row_ids.len());
        self.row_ids.push(id.to_string());
        self.matrix.extend_from_slice(values);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        let &row = self.index.get(id)?;
        Some(&self.matrix[row * self.dim..(row + 1) * self.dim])
    }

    pub fn require(&self, id: &str) -> Result<&[f32], StoreError> {
        self.get(id)
            .ok_or_else(|| StoreError::UnknownItem(id.to_string()))
    }

    /// Widen every row to f64 for the model math.
    pub fn to_item_store(&self) -> Result<ItemStore, StoreError> {
        let mut items = ItemStore::new(self.dim)?;
        for (row, id) in self.row_ids.iter().enumerate() {
            let values: Vec<f64> = self.matrix[row * self.dim..(row + 1) * self.dim]
                .iter()
                .map(|&v| v as f64)
                .collect();
            items.insert(EmbeddedItem::new(id.clone(), values)?)?;
        }
        Ok(items)
    }

    /// Narrow an in-memory item store to the on-disk f32 payload. Lossless
    /// whenever the values were f32 to begin with (as synthetic corpora
    /// guarantee); otherwise values round to nearest.
    pub fn from_item_store(items: &ItemStore) -> Result<Self, StoreError> {
        let mut store = EmbeddingStore::new(items.dim())?;
        for id in items.ids() {
            let row: Vec<f32> = items.require(id)?.iter().map(|&v| v as f32).collect();
            store.insert(id, &row)?;
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.bytes.len() {
            return Err(StoreError::Truncated { context });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(
            self.take(2, context)?.try_into().unwrap(),
        ))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }
}

pub fn write_store_bytes(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + store.matrix.len() * 4);
    out.extend_from_slice(&STORE_MAGIC);
    out.extend_from_slice(&STORE_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.row_ids.len() as u64).to_le_bytes());
    for v in &store.matrix {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in &store.row_ids {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn read_store_bytes(bytes: &[u8]) -> Result<EmbeddingStore, StoreError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cursor.take(4, "magic")?.try_into().unwrap();
    if magic != STORE_MAGIC {
        return Err(StoreError::BadMagic {
            expected: STORE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < 4 {
        return Err(StoreError::Truncated {
            context: "checksum",
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(StoreError::ChecksumMismatch { stored, computed });
    }

    let version = cursor.u32("version")?;
    if version != STORE_FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let dim = cursor.u32("dim")? as usize;
    let rows = cursor.u64("row count")?;
    // Each row needs at least dim * 4 payload bytes plus a 2-byte id length.
    let need = rows.saturating_mul(dim as u64 * 4 + 2);
    if need > bytes.len() as u64 {
        return Err(StoreError::ImplausibleCount(rows));
    }
    let rows = rows as usize;

    let mut store = EmbeddingStore::new(dim)?;
    let mut values = vec![0.0f32; dim];
    let payload = cursor.take(rows * dim * 4, "embedding payload")?;
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        let len = cursor.u16("id length")? as usize;
        let raw = cursor.take(len, "id bytes")?;
        ids.push(String::from_utf8(raw.to_vec())?);
    }
    if cursor.pos != body.len() {
        return Err(StoreError::TrailingBytes(body.len() - cursor.pos));
    }
    for (row, id) in ids.into_iter().enumerate() {
        for (k, value) in values.iter_mut().enumerate() {
            let at = (row * dim + k) * 4;
            *value = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
        }
        store.insert(&id, &values)?;
    }
    Ok(store)
}

pub fn write_embedding_store(store: &EmbeddingStore, path: &Path) -> Result<(), StoreError> {
    Ok(std::fs::write(path, write_store_bytes(store))?)
}

pub fn read_embedding_store(path: &Path) -> Result<EmbeddingStore, StoreError> {
    read_store_bytes(&std::fs::read(path)?)
}
