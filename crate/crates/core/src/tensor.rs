//! Dense row-major tensors of `f64`.
//!
//! Every tensor owns its data and keeps two invariants: the element count
//! equals the product of the extents, and every element is finite. All
//! constructors enforce both; operations that could produce a non-finite
//! value return [`Error::NonFinite`] instead.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DataLength { len: data.len(), shape });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Applies `f` elementwise; fails if any result is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|v| c * v)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(alloc::format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.shape.clone(), data)
    }

    /// Largest absolute element (0 for an empty tensor).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// ‖x‖∞ of the flattened tensor.
    pub fn norm_inf(&self) -> f64 {
        self.max_abs()
    }

    /// `max |a_i − b_i|` over tensors of identical shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(alloc::format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension { expected: 2, shape: self.shape.clone() }),
        }
    }

    pub fn rows(&self) -> Result<usize> {
        Ok(self.matrix_dims()?.0)
    }

    pub fn cols(&self) -> Result<usize> {
        Ok(self.matrix_dims()?.1)
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (r, c) = self.matrix_dims()?;
        if i >= r {
            return Err(Error::ShapeMismatch(alloc::format!("row {i} of {r}")));
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    /// Exact ∞-operator norm: the largest absolute row sum.
    ///
    /// This is the supremum of `‖Mx‖∞` over `‖x‖∞ = 1`; the supremum is
    /// attained at the sign vector of a maximizing row.
    pub fn opnorm_inf(&self) -> Result<f64> {
        let (_, c) = self.matrix_dims()?;
        if c == 0 {
            return Ok(0.0);
        }
        Ok(self.data.chunks_exact(c).map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max))
    }

    /// Index of a row attaining [`Tensor::opnorm_inf`] (the first one on ties).
    pub fn argmax_row_sum(&self) -> Result<Option<usize>> {
        let (r, c) = self.matrix_dims()?;
        if r == 0 {
            return Ok(None);
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..r {
            let s: f64 = self.data[i * c..(i + 1) * c].iter().map(|v| v.abs()).sum();
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(Some(best.0))
    }

    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = self.matrix_dims()?;
        if x.len() != c || x.shape.len() != 1 {
            return Err(Error::ShapeMismatch(alloc::format!("matrix {:?} times vector {:?}", self.shape, x.shape)));
        }
        let mut out = vec![0.0; r];
        matvec_into(&self.data, c, &x.data, &mut out);
        Tensor::vector(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, data)
    }
}

/// `out = M x` for a row-major `M` with `cols` columns.
pub(crate) fn matvec_into(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols.max(1))) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}
