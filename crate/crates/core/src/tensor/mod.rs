//! Dense tensors, matrices, and the multilinear kernels built on them.
//!
//! Storage is first-index-fastest throughout: element `(i_0, .., i_{N-1})`
//! (0-based) of a tensor with dims `I_0..I_{N-1}` lives at
//! `i_0 + I_0 (i_1 + I_1 (i_2 + ..))`. Matrices are column-major, so a matrix
//! is the order-2 case of the same rule. Modes are 0-based in this API.

mod kernels;
mod matrix;

pub(crate) use kernels::hadamard_all;
pub use kernels::{
    hadamard_cross_gram, hadamard_gram, khatri_rao, kr_inner, mttkrp, spectral_norm,
    SPECTRAL_MAX_SWEEPS, SPECTRAL_TOL,
};
pub(crate) use matrix::dot;
pub use matrix::Matrix;

use crate::error::{Error, Result};

/// Highest tensor order accepted.
pub const MAX_ORDER: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(i < d);
            off += i * stride;
            stride *= d;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `vec(𝓜)` in storage order.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Mode-`n` unfolding: an `I_n × ∏_{m≠n} I_m` matrix whose column index
    /// runs over the remaining modes first-index-fastest.
    pub fn matricize(&self, n: usize) -> Result<Matrix> {
        self.check_mode(n)?;
        let (left, inner, right) = split_dims(&self.dims, n);
        let mut out = Matrix::zeros(inner, left * right);
        for r in 0..right {
            for i in 0..inner {
                let src = &self.data[(i + inner * r) * left..][..left];
                for (l, &v) in src.iter().enumerate() {
                    out.set(i, l + left * r, v);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn fold(m: &Matrix, n: usize, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        if n >= dims.len() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: dims.len(),
            });
        }
        let (left, inner, right) = split_dims(&dims, n);
        if m.rows() != inner || m.cols() != left * right {
            return Err(Error::Shape(format!(
                "{}x{} matrix cannot fold into mode {n} of {dims:?}",
                m.rows(),
                m.cols()
            )));
        }
        let mut data = vec![0.0; left * inner * right];
        for r in 0..right {
            for i in 0..inner {
                let dst = &mut data[(i + inner * r) * left..][..left];
                for (l, d) in dst.iter_mut().enumerate() {
                    *d = m.get(i, l + left * r);
                }
            }
        }
        Ok(Self { dims, data })
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `‖self − other‖_F²`.
    pub fn distance_sq(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn scaled(&self, s: f64) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_dims(&self, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n >= self.dims.len() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: self.dims.len(),
            });
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_ORDER {
        return Err(Error::Shape(format!(
            "tensor order must be in 1..={MAX_ORDER}, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero-length mode in {dims:?}")));
    }
    Ok(())
}

/// `(∏_{m<n} I_m, I_n, ∏_{m>n} I_m)`.
pub(crate) fn split_dims(dims: &[usize], n: usize) -> (usize, usize, usize) {
    let left = dims[..n].iter().product();
    let right = dims[n + 1..].iter().product();
    (left, dims[n], right)
}

pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}
