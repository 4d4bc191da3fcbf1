//! Minimal dense tensor engine.
//!
//! Storage is contiguous and row-major. Two element types are supported:
//! `f64` (the default, used for all verification) and `f32` (for timing).
//! Binary operations never broadcast; shapes must match exactly and any
//! tiling is an explicit operation such as [`Tensor::tile_rows`].

mod complex;
pub mod fft;
mod ops;

pub use complex::ComplexTensor;
pub use ops::{Activation, ElementwiseOp};

use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::config(format!(
                "unknown dtype '{other}' (valid: f32, f64)"
            ))),
        }
    }
}

/// Element types a tensor can hold.
pub(crate) trait Element: Float + Send + Sync + fmt::Debug + 'static {}

impl Element for f32 {}

impl Element for f64 {}

#[derive(Clone, PartialEq)]
pub(crate) enum Storage {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Storage {
    fn len(&self) -> usize {
        match self {
            Storage::F32(v) => v.len(),
            Storage::F64(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
        }
    }

    fn from_f64(data: Vec<f64>, dtype: DType) -> Storage {
        match dtype {
            DType::F64 => Storage::F64(data),
            DType::F32 => Storage::F32(data.into_iter().map(|x| x as f32).collect()),
        }
    }

    fn zeros(len: usize, dtype: DType) -> Storage {
        match dtype {
            DType::F64 => Storage::F64(vec![0.0; len]),
            DType::F32 => Storage::F32(vec![0.0; len]),
        }
    }
}

/// Applies the same generic expression to either storage variant.
macro_rules! map_storage {
    ($storage:expr, $v:ident => $body:expr) => {
        match $storage {
            $crate::tensor::Storage::F32($v) => $crate::tensor::Storage::F32($body),
            $crate::tensor::Storage::F64($v) => $crate::tensor::Storage::F64($body),
        }
    };
}

/// Like `map_storage!` for two operands of the same dtype.
macro_rules! zip_storage {
    ($a:expr, $b:expr, $x:ident, $y:ident => $body:expr) => {
        match ($a, $b) {
            ($crate::tensor::Storage::F32($x), $crate::tensor::Storage::F32($y)) => {
                Ok($crate::tensor::Storage::F32($body))
            }
            ($crate::tensor::Storage::F64($x), $crate::tensor::Storage::F64($y)) => {
                Ok($crate::tensor::Storage::F64($body))
            }
            (x, y) => Err($crate::error::Error::Dimension(format!(
                "dtype mismatch: {} vs {}",
                x.dtype(),
                y.dtype()
            ))),
        }
    };
}

pub(crate) use map_storage;
pub(crate) use zip_storage;

/// Dense n-dimensional array.
///
/// Extents may be zero (an empty batch), but the rank is always at least one
/// and `shape.iter().product() == data.len()`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub(crate) data: Storage,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.to_vec().into_iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &self.dtype())
            .field("head", &preview)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::dim("tensor rank must be at least 1"));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::dim(format!(
            "shape {shape:?} holds {expected} elements but {len} were supplied"
        )));
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn from_storage(shape: Vec<usize>, data: Storage) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        Ok(Tensor { shape, data })
    }

    /// Builds an `f64` tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::from_storage(shape.to_vec(), Storage::F64(data))
    }

    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Tensor::from_storage(shape.to_vec(), Storage::F32(data))
    }

    /// Builds a tensor of the given dtype from `f64` values.
    pub fn from_f64_as(shape: &[usize], data: Vec<f64>, dtype: DType) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Storage::from_f64(data, dtype),
        })
    }

    /// One-dimensional `f64` tensor.
    pub fn vector(values: &[f64]) -> Tensor {
        Tensor {
            shape: vec![values.len()],
            data: Storage::F64(values.to_vec()),
        }
    }

    /// Two-dimensional `f64` tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Storage::zeros(len, dtype),
        }
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Storage::from_f64(vec![value; len], dtype),
        }
    }

    pub fn identity(n: usize, dtype: DType) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data: Storage::from_f64(data, dtype),
        }
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform(shape: &[usize], bound: f64, dtype: DType, rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Storage::from_f64(data, dtype),
        }
    }

    /// Standard normal entries.
    pub fn randn(shape: &[usize], dtype: DType, rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.standard_normal()).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Storage::from_f64(data, dtype),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Number of rows when viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        self.shape[..self.shape.len() - 1].iter().product()
    }

    /// Copies the elements out as `f64`.
    pub fn to_vec(&self) -> Vec<f64> {
        match &self.data {
            Storage::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Storage::F64(v) => v.clone(),
        }
    }

    /// Borrows the buffer when the dtype is `f64`.
    pub fn as_f64_slice(&self) -> Option<&[f64]> {
        match &self.data {
            Storage::F64(v) => Some(v),
            Storage::F32(_) => None,
        }
    }

    pub fn cast(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype() {
            return self.clone();
        }
        Tensor {
            shape: self.shape.clone(),
            data: Storage::from_f64(self.to_vec(), dtype),
        }
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::dim(format!(
                "index of rank {} into tensor of shape {:?}",
                index.len(),
                self.shape
            )));
        }
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return Err(Error::dim(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off = off * n + i;
        }
        Ok(off)
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.numel() {
            return Err(Error::dim(format!(
                "offset {offset} out of bounds for shape {:?}",
                self.shape
            )));
        }
        let mut index = vec![0; self.shape.len()];
        for (slot, &n) in index.iter_mut().zip(&self.shape).rev() {
            *slot = offset % n;
            offset /= n;
        }
        Ok(index)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        let off = self.offset(index)?;
        Ok(self.at(off))
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.set_at(off, value);
        Ok(())
    }

    /// Element at a flat offset, as `f64`. Panics when out of range.
    pub fn at(&self, offset: usize) -> f64 {
        match &self.data {
            Storage::F32(v) => f64::from(v[offset]),
            Storage::F64(v) => v[offset],
        }
    }

    pub fn set_at(&mut self, offset: usize, value: f64) {
        match &mut self.data {
            Storage::F32(v) => v[offset] = value as f32,
            Storage::F64(v) => v[offset] = value,
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_storage(shape.to_vec(), self.data.clone())
    }

    pub fn has_nan(&self) -> bool {
        match &self.data {
            Storage::F32(v) => v.iter().any(|x| x.is_nan()),
            Storage::F64(v) => v.iter().any(|x| x.is_nan()),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.data {
            Storage::F32(v) => v.iter().all(|x| x.is_finite()),
            Storage::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    pub fn sum(&self) -> f64 {
        match &self.data {
            Storage::F32(v) => v.iter().map(|&x| f64::from(x)).sum(),
            Storage::F64(v) => v.iter().sum(),
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if self.dtype() != other.dtype() {
            return Err(Error::dim(format!(
                "{op}: dtype mismatch {} vs {}",
                self.dtype(),
                other.dtype()
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, rank: usize, op: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::dim(format!(
                "{op}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
