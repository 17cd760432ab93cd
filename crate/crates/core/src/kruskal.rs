//! Kruskal (CP) models and coupled factor sets.

use crate::error::{Error, Result};
use crate::tensor::{hadamard_gram, khatri_rao, DenseTensor, Matrix};

/// Factor matrices `U^(1..N)` (mode `n` is `I_n × R`) plus the super-diagonal
/// core weights `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalTensor {
    factors: Vec<Matrix>,
    weights: Vec<f64>,
}

impl KruskalTensor {
    pub fn new(factors: Vec<Matrix>, weights: Vec<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Shape(
                "Kruskal model needs at least one factor".into(),
            ));
        }
        let r = factors[0].cols();
        for f in &factors[1..] {
            if f.cols() != r {
                return Err(Error::ColumnMismatch {
                    expected: r,
                    found: f.cols(),
                });
            }
        }
        if weights.len() != r {
            return Err(Error::Shape(format!(
                "{} weights for rank {r}",
                weights.len()
            )));
        }
        Ok(Self { factors, weights })
    }

    /// Model with unit weights.
    pub fn from_factors(factors: Vec<Matrix>) -> Result<Self> {
        let r = factors.first().map_or(0, Matrix::cols);
        Self::new(factors, vec![1.0; r])
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_parts(self) -> (Vec<Matrix>, Vec<f64>) {
        (self.factors, self.weights)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && self.factors.iter().all(Matrix::is_nonnegative)
    }

    /// `Σ_r λ_r u_r^(1) ∘ … ∘ u_r^(N)`, computed as `vec = U^⊙ λ`.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let ms: Vec<&Matrix> = self.factors.iter().rev().collect();
        let kr = khatri_rao(&ms)?;
        DenseTensor::new(self.dims(), kr.mat_vec(&self.weights))
    }

    /// `‖⟦λ; U..⟧‖_F²` from the grams alone.
    pub fn norm_sq(&self) -> f64 {
        let g = hadamard_gram(&self.factors, None).expect("factors share rank");
        let gl = g.mat_vec(&self.weights);
        crate::tensor::dot(&self.weights, &gl).max(0.0)
    }

    /// Rescales every factor column to unit Euclidean norm, moving the
    /// product of the norms into `λ`.
    pub fn normalize_columns(&self) -> Result<KruskalTensor> {
        let mut factors = self.factors.clone();
        let mut weights = self.weights.clone();
        for (n, f) in factors.iter_mut().enumerate() {
            for (j, w) in weights.iter_mut().enumerate() {
                let col = f.col_mut(j);
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroColumn { mode: n, column: j });
                }
                col.iter_mut().for_each(|v| *v /= norm);
                *w *= norm;
            }
        }
        Ok(KruskalTensor { factors, weights })
    }
}

/// `R × … × R` (order `n`) tensor carrying `v` on its super-diagonal.
pub fn ddiag_to_tensor(v: &[f64], order: usize) -> Result<DenseTensor> {
    let r = v.len();
    let mut t = DenseTensor::zeros(vec![r; order])?;
    let step: usize = (0..order).map(|k| r.pow(k as u32)).sum();
    for (i, &x) in v.iter().enumerate() {
        t.as_mut_slice()[i * step] = x;
    }
    Ok(t)
}

/// Super-diagonal of a tensor with all modes of equal length.
pub fn tensor_to_ddiag(t: &DenseTensor) -> Result<Vec<f64>> {
    let r = t.dims()[0];
    if t.dims().iter().any(|&d| d != r) {
        return Err(Error::Shape(format!(
            "super-diagonal needs a cubical tensor, got {:?}",
            t.dims()
        )));
    }
    let step: usize = (0..t.order()).map(|k| r.pow(k as u32)).sum();
    Ok((0..r).map(|i| t.as_slice()[i * step]).collect())
}

/// Per-block part of a [`CoupledFactorSet`]: core weights and the individual
/// (non-shared) factor columns for every mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFactors {
    pub weights: Vec<f64>,
    pub individual: Vec<Matrix>,
}

/// `S` Kruskal blocks whose mode-`n` factors share their leading `L_n`
/// columns. The shared prefix is stored once, so the coupling holds by
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledFactorSet {
    common: Vec<Matrix>,
    blocks: Vec<BlockFactors>,
}

impl CoupledFactorSet {
    /// Uncoupled modes carry an empty (`0 × 0`) common part.
    pub fn new(common: Vec<Matrix>, blocks: Vec<BlockFactors>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Shape("coupled set needs at least one block".into()));
        }
        for (s, b) in blocks.iter().enumerate() {
            if b.individual.len() != common.len() {
                return Err(Error::Shape(format!(
                    "block {s} has {} modes, expected {}",
                    b.individual.len(),
                    common.len()
                )));
            }
        }
        Self::new_unchecked(common, blocks)
    }

    /// Splits full Kruskal blocks into shared and individual parts, checking
    /// that the leading `coupled[n]` columns agree exactly across blocks.
    pub fn from_blocks(blocks: &[KruskalTensor], coupled: &[usize]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Shape("coupled set needs at least one block".into()))?;
        let order = first.order();
        if coupled.len() != order {
            return Err(Error::Shape(format!(
                "{} coupled counts for order {order}",
                coupled.len()
            )));
        }
        let min_rank = blocks.iter().map(KruskalTensor::rank).min().unwrap_or(0);
        for (n, &l) in coupled.iter().enumerate() {
            if l > min_rank {
                return Err(Error::Coupling(format!(
                    "mode {n}: {l} coupled columns exceed the smallest rank {min_rank}"
                )));
            }
        }
        for (s, b) in blocks.iter().enumerate() {
            if b.order() != order {
                return Err(Error::Shape(format!(
                    "block {s} has order {}, expected {order}",
                    b.order()
                )));
            }
        }
        let common: Vec<Matrix> = (0..order)
            .map(|n| first.factor(n).columns(0, coupled[n]))
            .collect();
        for (s, b) in blocks.iter().enumerate().skip(1) {
            for (n, c) in common.iter().enumerate() {
                let prefix = b.factor(n);
                if prefix.rows() != c.rows() && coupled[n] > 0 {
                    return Err(Error::Coupling(format!(
                        "mode {n}, block {s}: {} rows but the shared factor has {}",
                        prefix.rows(),
                        c.rows()
                    )));
                }
                if coupled[n] > 0 && prefix.columns(0, coupled[n]) != *c {
                    return Err(Error::Coupling(format!(
                        "mode {n}, block {s}: leading {} columns differ from block 0",
                        coupled[n]
                    )));
                }
            }
        }
        let parts = blocks
            .iter()
            .map(|b| BlockFactors {
                weights: b.weights().to_vec(),
                individual: (0..order)
                    .map(|n| b.factor(n).columns(coupled[n], b.rank()))
                    .collect(),
            })
            .collect();
        // blocks may legitimately differ in uncoupled row counts; the shared
        // part of an uncoupled mode is an empty matrix sized to block 0
        let common = common
            .into_iter()
            .enumerate()
            .map(|(n, c)| {
                if coupled[n] == 0 {
                    Matrix::zeros(0, 0)
                } else {
                    c
                }
            })
            .collect();
        Self::new_unchecked(common, parts)
    }

    fn new_unchecked(common: Vec<Matrix>, blocks: Vec<BlockFactors>) -> Result<Self> {
        let set = Self { common, blocks };
        set.check_shapes()?;
        Ok(set)
    }

    fn check_shapes(&self) -> Result<()> {
        for (s, b) in self.blocks.iter().enumerate() {
            for (n, (c, ind)) in self.common.iter().zip(&b.individual).enumerate() {
                if c.cols() > 0 && c.rows() != ind.rows() {
                    return Err(Error::Shape(format!(
                        "block {s}, mode {n}: common part has {} rows, individual part {}",
                        c.rows(),
                        ind.rows()
                    )));
                }
                if c.cols() + ind.cols() != b.weights.len() {
                    return Err(Error::Shape(format!(
                        "block {s}, mode {n}: column count does not match rank {}",
                        b.weights.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn order(&self) -> usize {
        self.common.len()
    }

    pub fn coupled_counts(&self) -> Vec<usize> {
        self.common.iter().map(Matrix::cols).collect()
    }

    pub fn rank(&self, s: usize) -> usize {
        self.blocks[s].weights.len()
    }

    pub fn weights(&self, s: usize) -> &[f64] {
        &self.blocks[s].weights
    }

    pub fn common(&self, n: usize) -> &Matrix {
        &self.common[n]
    }

    pub fn individual(&self, s: usize, n: usize) -> &Matrix {
        &self.blocks[s].individual[n]
    }

    pub fn block(&self, s: usize) -> &BlockFactors {
        &self.blocks[s]
    }

    /// Full mode-`n` factor of block `s`: `[U_C^(n) | U_I^(n,s)]`.
    pub fn factor(&self, s: usize, n: usize) -> Matrix {
        let ind = &self.blocks[s].individual[n];
        if self.common[n].cols() == 0 {
            ind.clone()
        } else {
            Matrix::hstack(&self.common[n], ind)
        }
    }

    pub fn block_factors(&self, s: usize) -> Vec<Matrix> {
        (0..self.order()).map(|n| self.factor(s, n)).collect()
    }

    pub fn kruskal(&self, s: usize) -> KruskalTensor {
        KruskalTensor {
            factors: self.block_factors(s),
            weights: self.blocks[s].weights.clone(),
        }
    }

    pub fn to_kruskal_blocks(&self) -> Vec<KruskalTensor> {
        (0..self.num_blocks()).map(|s| self.kruskal(s)).collect()
    }

    pub fn reconstruct_all(&self) -> Result<Vec<DenseTensor>> {
        (0..self.num_blocks())
            .map(|s| self.kruskal(s).reconstruct())
            .collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.common.iter().all(Matrix::is_nonnegative)
            && self.blocks.iter().all(|b| {
                b.weights.iter().all(|&w| w >= 0.0)
                    && b.individual.iter().all(Matrix::is_nonnegative)
            })
    }

    pub(crate) fn set_weights(&mut self, s: usize, w: Vec<f64>) {
        debug_assert_eq!(w.len(), self.blocks[s].weights.len());
        self.blocks[s].weights = w;
    }

    pub(crate) fn set_common(&mut self, n: usize, m: Matrix) {
        debug_assert_eq!(
            (m.rows(), m.cols()),
            (self.common[n].rows(), self.common[n].cols())
        );
        self.common[n] = m;
    }

    pub(crate) fn set_individual(&mut self, s: usize, n: usize, m: Matrix) {
        let old = &self.blocks[s].individual[n];
        debug_assert_eq!((m.rows(), m.cols()), (old.rows(), old.cols()));
        self.blocks[s].individual[n] = m;
    }
}
