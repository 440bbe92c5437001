//! Named parameter blobs and the little-endian `ADW1` blob file.
//!
//! File layout: the 4-byte magic `ADW1`, then one record per blob:
//! name length (`u32`), UTF-8 name, rank (`u32`), `rank` dims (`u32` each),
//! and `product(dims)` raw `f32` values. All integers and floats are
//! little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLOB_MAGIC: &[u8; 4] = b"ADW1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    blobs: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a blob; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.blobs.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate blob name `{name}`"
            )));
        }
        self.blobs.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blobs.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.blobs.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.blobs.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Serialises the store; blobs are written in name order so the output is
    /// byte-stable.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != BLOB_MAGIC {
            return Err(Error::Blob {
                offset: 0,
                reason: "missing ADW1 magic".into(),
            });
        }
        let mut store = WeightStore::new();
        while r.pos < bytes.len() {
            let record_start = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Blob {
                    offset: record_start + 4,
                    reason: "blob name is not valid UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32()? as usize;
            if rank == 0 {
                return Err(Error::Blob {
                    offset: record_start,
                    reason: format!("blob `{name}` has rank 0"),
                });
            }
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let payload_at = r.pos;
            let raw = r.take(count * 4).map_err(|_| Error::Blob {
                offset: payload_at,
                reason: format!("blob `{name}` declares {count} values but the file ends early"),
            })?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { name, index });
            }
            let tensor = Tensor::new(dims, data).map_err(|e| Error::Blob {
                offset: record_start,
                reason: format!("blob `{name}`: {e}"),
            })?;
            if store.blobs.insert(name.clone(), tensor).is_some() {
                return Err(Error::Blob {
                    offset: record_start,
                    reason: format!("duplicate blob name `{name}`"),
                });
            }
        }
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Blob {
                offset: self.pos,
                reason: format!("unexpected end of file (wanted {n} bytes)"),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
