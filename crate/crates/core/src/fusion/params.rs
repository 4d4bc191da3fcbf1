//! Named trainable tensors and their binary serialization.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes   "FUSNPRM1"
//! count   u32
//! count × {
//!     name_len u32, name (UTF-8)
//!     rank     u32, extents u64 × rank
//!     values   f64 × product(extents)
//! }
//! ```
//!
//! Values are always written as `f64` and cast to the receiving module's
//! dtype on load.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PARAM_MAGIC: &[u8; 8] = b"FUSNPRM1";

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Ordered name → tensor map. Each set carries an identity and a version
/// counter so that forward caches can detect stale use.
#[derive(Debug)]
pub struct ParamSet {
    id: u64,
    version: u64,
    tensors: IndexMap<String, Tensor>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            tensors: self.tensors.clone(),
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            tensors: IndexMap::new(),
        }
    }

    pub(crate) fn stamp(&self) -> (u64, u64) {
        (self.id, self.version)
    }

    pub(crate) fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
        self.version += 1;
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("no parameter named '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.version += 1;
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("no parameter named '{name}'")))
    }

    /// Replaces a parameter, casting to its dtype. The shape must match.
    pub fn set(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value.cast(slot.dtype());
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.version += 1;
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total element count.
    pub fn numel(&self) -> u64 {
        self.tensors.values().map(|t| t.numel() as u64).sum()
    }

    /// Gradient step `p -= lr · g` for every gradient supplied.
    pub fn descend(&mut self, grads: &IndexMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            self.get_mut(name)?.axpy_in_place(-lr, g)?;
        }
        Ok(())
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stream>".into(),
        cause: e.to_string(),
    }
}

pub fn write_params<'a, W, I>(mut w: W, params: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let items: Vec<(&str, &Tensor)> = params.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAM_MAGIC);
    buf.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for x in t.to_vec() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != PARAM_MAGIC {
        return Err(Error::Parse("not a parameter file (bad magic)".into()));
    }
    let count = cur.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| Error::Parse("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::new(&shape, values)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after parameter records".into()));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse(format!("parameter file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
