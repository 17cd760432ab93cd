//! Objective, block-partial gradients and Lipschitz constants.
//!
//! Every quantity is expressed through per-mode grams so that nothing of
//! size `∏ I_n` is formed except the data contraction `M_(n) U^{⊙₋ₙ}`; in
//! compressed mode even that becomes a product of small matrices.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kruskal::{CoupledFactorSet, KruskalTensor};
use crate::tensor::{
    dot, hadamard_all, hadamard_cross_gram, kr_inner, mttkrp, spectral_norm, DenseTensor, Matrix,
    SPECTRAL_TOL,
};

/// The target a block is fitted against: the tensor itself, or its
/// unconstrained low-rank approximation `⟦λ̃; Ũ..⟧`.
#[derive(Clone, Copy, Debug)]
pub enum DataTerm<'a> {
    Full(&'a DenseTensor),
    Compressed(&'a KruskalTensor),
}

impl DataTerm<'_> {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            DataTerm::Full(t) => t.dims().to_vec(),
            DataTerm::Compressed(k) => k.dims(),
        }
    }

    /// `‖M‖_F²`.
    pub fn norm_sq(&self) -> f64 {
        match self {
            DataTerm::Full(t) => t.norm_sq(),
            DataTerm::Compressed(k) => k.norm_sq(),
        }
    }

    /// `(U^⊙)ᵀ vec(M)`; compressed: `(UᵀŨ)^⊛ λ̃`.
    pub fn kr_inner(&self, factors: &[Matrix], exec: Execution) -> Result<Vec<f64>> {
        match self {
            DataTerm::Full(t) => kr_inner(t, factors, exec),
            DataTerm::Compressed(k) => {
                let cross = hadamard_cross_gram(factors, k.factors(), None)?;
                Ok(cross.mat_vec(k.weights()))
            }
        }
    }

    /// `M_(n) U^{⊙₋ₙ}`; compressed: `Ũ^(n) diag(λ̃) (ŨᵀU)^{⊛₋ₙ}`.
    pub fn mttkrp(&self, factors: &[Matrix], n: usize, exec: Execution) -> Result<Matrix> {
        match self {
            DataTerm::Full(t) => mttkrp(t, factors, n, exec),
            DataTerm::Compressed(k) => {
                if n >= k.order() {
                    return Err(Error::ModeOutOfRange {
                        mode: n,
                        order: k.order(),
                    });
                }
                let cross = hadamard_cross_gram(k.factors(), factors, Some(n))?;
                let mut left = k.factor(n).clone();
                left.scale_columns(k.weights());
                Ok(left.matmul(&cross))
            }
        }
    }
}

fn check_block(data: &DataTerm, factors: &[Matrix], weights: &[f64]) -> Result<()> {
    let dims = data.dims();
    if factors.len() != dims.len() {
        return Err(Error::Shape(format!(
            "{} factors for an order-{} block",
            factors.len(),
            dims.len()
        )));
    }
    for (n, (f, &d)) in factors.iter().zip(&dims).enumerate() {
        if f.rows() != d || f.cols() != weights.len() {
            return Err(Error::Shape(format!(
                "mode {n} factor is {}x{}, expected {d}x{}",
                f.rows(),
                f.cols(),
                weights.len()
            )));
        }
    }
    Ok(())
}

/// `λᵀ H λ`.
pub(crate) fn quad(h: &Matrix, w: &[f64]) -> f64 {
    dot(w, &h.mat_vec(w))
}

/// `½ (‖M‖² − 2 λᵀ inner + λᵀ H λ)` from precomputed pieces.
pub(crate) fn half_residual_sq(norm_sq: f64, inner: &[f64], h: &Matrix, w: &[f64]) -> f64 {
    0.5 * (norm_sq - 2.0 * dot(w, inner) + quad(h, w))
}

/// `½ ‖M − ⟦λ; U..⟧‖_F²` for one block, via the gram expansion.
pub fn block_objective(
    data: &DataTerm,
    factors: &[Matrix],
    weights: &[f64],
    exec: Execution,
) -> Result<f64> {
    check_block(data, factors, weights)?;
    let grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    let h = hadamard_all(&grams, None, weights.len());
    let inner = data.kr_inner(factors, exec)?;
    Ok(half_residual_sq(data.norm_sq(), &inner, &h, weights))
}

/// Coupled objective `½ Σ_s ‖M^(s) − ⟦λ^(s); U^(·,s)⟧‖_F²`.
pub fn objective(data: &[DataTerm], set: &CoupledFactorSet, exec: Execution) -> Result<f64> {
    if data.len() != set.num_blocks() {
        return Err(Error::Shape(format!(
            "{} data blocks for {} factor blocks",
            data.len(),
            set.num_blocks()
        )));
    }
    let parts = exec.try_map(data.len(), |s| {
        block_objective(&data[s], &set.block_factors(s), set.weights(s), exec)
    })?;
    Ok(parts.iter().sum())
}

/// Core gradient from precomputed pieces: `H λ̂ − inner`.
pub(crate) fn core_gradient(h: &Matrix, weights_hat: &[f64], inner: &[f64]) -> Vec<f64> {
    h.mat_vec(weights_hat)
        .into_iter()
        .zip(inner)
        .map(|(a, b)| a - b)
        .collect()
}

/// Block-partial gradient in the core weights at `λ̂`:
/// `(UᵀU)^⊛ λ̂ − (U^⊙)ᵀ vec(M)`.
pub fn grad_core(
    data: &DataTerm,
    factors: &[Matrix],
    weights_hat: &[f64],
    exec: Execution,
) -> Result<Vec<f64>> {
    check_block(data, factors, weights_hat)?;
    let h = crate::tensor::hadamard_gram(factors, None)?;
    let inner = data.kr_inner(factors, exec)?;
    Ok(core_gradient(&h, weights_hat, &inner))
}

/// `D H D` for `D = diag(λ)`.
pub(crate) fn scaled_gram(h: &Matrix, weights: &[f64]) -> Matrix {
    let mut out = h.clone();
    out.scale_rows(weights);
    out.scale_columns(weights);
    out
}

/// Factor gradient from precomputed pieces: `Û (D H₋ₙ D) − M_(n) U^{⊙₋ₙ} D`.
pub(crate) fn factor_gradient(
    u_hat: &Matrix,
    dhd: &Matrix,
    mttkrp: &Matrix,
    weights: &[f64],
) -> Matrix {
    let mut g = u_hat.matmul(dhd);
    for (j, &w) in weights.iter().enumerate() {
        for (gv, mv) in g.col_mut(j).iter_mut().zip(mttkrp.col(j)) {
            *gv -= mv * w;
        }
    }
    g
}

/// Block-partial gradient in the mode-`n` factor at `Û`, with the other
/// modes taken from `factors` (`factors[n]` is ignored).
pub fn grad_factor(
    data: &DataTerm,
    factors: &[Matrix],
    weights: &[f64],
    n: usize,
    u_hat: &Matrix,
    exec: Execution,
) -> Result<Matrix> {
    check_block(data, factors, weights)?;
    if u_hat.rows() != factors[n].rows() || u_hat.cols() != weights.len() {
        return Err(Error::Shape(format!(
            "extrapolated factor is {}x{}, expected {}x{}",
            u_hat.rows(),
            u_hat.cols(),
            factors[n].rows(),
            weights.len()
        )));
    }
    let h = crate::tensor::hadamard_gram(factors, Some(n))?;
    let m = data.mttkrp(factors, n, exec)?;
    Ok(factor_gradient(
        u_hat,
        &scaled_gram(&h, weights),
        &m,
        weights,
    ))
}

/// `‖(UᵀU)^⊛‖₂`.
pub fn lipschitz_core(factors: &[Matrix]) -> Result<f64> {
    spectral_norm(&crate::tensor::hadamard_gram(factors, None)?, SPECTRAL_TOL)
}

/// `‖D (UᵀU)^{⊛₋ₙ} D‖₂`.
pub fn lipschitz_factor(factors: &[Matrix], weights: &[f64], n: usize) -> Result<f64> {
    if n >= factors.len() {
        return Err(Error::ModeOutOfRange {
            mode: n,
            order: factors.len(),
        });
    }
    let h = crate::tensor::hadamard_gram(factors, Some(n))?;
    if h.rows() != weights.len() {
        return Err(Error::Shape(format!(
            "{} weights for rank {}",
            weights.len(),
            h.rows()
        )));
    }
    spectral_norm(&scaled_gram(&h, weights), SPECTRAL_TOL)
}
