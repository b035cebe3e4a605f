//! Dense containers shared by the kernels: multivariate trajectories and
//! square `k x k` matrices, both stored row-major in a flat `Vec<f64>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `dims x len` real trajectory. Row `c` holds channel `c` over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    dims: usize,
    len: usize,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dims: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if dims == 0 || len == 0 {
            return Err(Error::usage("time series needs at least one dimension and one step"));
        }
        if values.len() != dims * len {
            return Err(Error::ShapeMismatch(format!(
                "expected {dims}x{len}={} values, got {}",
                dims * len,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { dims, len, values })
    }

    /// Univariate series.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub(crate) fn from_raw(dims: usize, len: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims * len);
        Self { dims, len, values }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value of channel `dim` at step `t` (both zero-based).
    #[inline]
    pub fn at(&self, dim: usize, t: usize) -> f64 {
        self.values[dim * self.len + t]
    }

    /// The single channel of a univariate series.
    pub fn channel(&self, dim: usize) -> &[f64] {
        &self.values[dim * self.len..(dim + 1) * self.len]
    }

    pub(crate) fn check_same_shape(&self, other: &TimeSeries) -> Result<()> {
        if self.dims != other.dims || self.len != other.len {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.dims, self.len, other.dims, other.len
            )));
        }
        Ok(())
    }
}

/// Square matrix indexed by zero-based `(row, col)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    size: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                data.push(f(i, j));
            }
        }
        Self { size, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::ShapeMismatch("matrix rows are not square".into()));
        }
        Ok(Self {
            size,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.size + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &SquareMatrix) -> f64 {
        debug_assert_eq!(self.size, other.size);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.size).map(<[f64]>::to_vec).collect()
    }
}
