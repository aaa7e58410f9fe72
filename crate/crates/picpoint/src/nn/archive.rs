//! Single-file archive of named tensors plus a JSON metadata document.
//!
//! Layout: 8-byte magic, little-endian u32 header length, JSON header,
//! raw tensor blob. The header carries the metadata document and a
//! tensor index (name, dtype, shape, byte offset/length into the blob).
//! Entries are kept in a `BTreeMap`, so serialization is byte-stable.
//! Writes go through a temp file and an atomic rename.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD};
use serde::{Deserialize, Serialize};

use super::{DType, Elem};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"PPARCH1\0";

/// Guard against absurd allocations when reading untrusted files.
const MAX_TENSOR_BYTES: u64 = 1 << 33;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct TensorEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    pub meta: serde_json::Value,
    entries: BTreeMap<String, TensorEntry>,
}

impl TensorArchive {
    pub fn new(meta: serde_json::Value) -> Self {
        TensorArchive { meta, entries: BTreeMap::new() }
    }

    pub fn insert<T: Elem>(&mut self, name: impl Into<String>, value: ArrayViewD<'_, T>) {
        let mut data = Vec::with_capacity(value.len() * T::DTYPE.size());
        for &x in value.iter() {
            x.write_le(&mut data);
        }
        self.entries.insert(
            name.into(),
            TensorEntry { dtype: T::DTYPE, shape: value.shape().to_vec(), data },
        );
    }

    pub fn get<T: Elem>(&self, name: &str) -> Result<ArrayD<T>> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("archive has no tensor named {name}")))?;
        if entry.dtype != T::DTYPE {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name} has dtype {}, requested {}",
                entry.dtype,
                T::DTYPE
            )));
        }
        let size = T::DTYPE.size();
        let n = entry.data.len() / size;
        let mut values = Vec::with_capacity(n);
        for chunk in entry.data.chunks_exact(size) {
            values.push(T::read_le(chunk));
        }
        ArrayD::from_shape_vec(entry.shape.clone(), values)
            .map_err(|e| Error::ShapeMismatch(format!("tensor {name}: {e}")))
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.get(name)
    }

    /// Copies an entry verbatim (dtype-agnostic).
    pub fn insert_entry(&mut self, name: impl Into<String>, entry: TensorEntry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &TensorEntry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        let mut index = Vec::with_capacity(self.entries.len());
        for (name, entry) in &self.entries {
            index.push(IndexEntry {
                name: name.clone(),
                dtype: entry.dtype,
                shape: entry.shape.clone(),
                offset: blob.len() as u64,
                nbytes: entry.data.len() as u64,
            });
            blob.extend_from_slice(&entry.data);
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), tensors: index })
            .expect("header serialization");
        let mut out = Vec::with_capacity(12 + header.len() + blob.len());
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        out
    }

    /// Parses an archive from untrusted bytes with full bounds checking.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::parse("archive truncated before header"));
        }
        if &bytes[..8] != ARCHIVE_MAGIC {
            return Err(Error::parse("bad archive magic"));
        }
        let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .ok_or_else(|| Error::parse("header length overflow"))?;
        if bytes.len() < header_end {
            return Err(Error::parse("archive truncated inside header"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
        let blob = &bytes[header_end..];
        let mut entries = BTreeMap::new();
        for e in header.tensors {
            if e.nbytes > MAX_TENSOR_BYTES {
                return Err(Error::parse(format!("tensor {} too large", e.name)));
            }
            let start = usize::try_from(e.offset)
                .map_err(|_| Error::parse("tensor offset overflow"))?;
            let len =
                usize::try_from(e.nbytes).map_err(|_| Error::parse("tensor length overflow"))?;
            let end =
                start.checked_add(len).ok_or_else(|| Error::parse("tensor extent overflow"))?;
            if end > blob.len() {
                return Err(Error::parse(format!("tensor {} extends past blob", e.name)));
            }
            let expected = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::parse("shape product overflow"))?
                .checked_mul(e.dtype.size())
                .ok_or_else(|| Error::parse("shape product overflow"))?;
            if expected != len {
                return Err(Error::parse(format!(
                    "tensor {}: shape {:?} wants {expected} bytes, index says {len}",
                    e.name, e.shape
                )));
            }
            entries.insert(
                e.name,
                TensorEntry { dtype: e.dtype, shape: e.shape, data: blob[start..end].to_vec() },
            );
        }
        Ok(TensorArchive { meta: header.meta, entries })
    }

    /// Atomic save: write to `<path>.tmp`, then rename over the target.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let bytes = self.to_bytes();
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
