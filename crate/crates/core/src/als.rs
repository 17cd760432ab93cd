//! Unconstrained CP decomposition by alternating least squares. Used only to
//! build the low-rank compression consumed by the accelerated solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kruskal::KruskalTensor;
use crate::tensor::{dot, hadamard_all, mttkrp, DenseTensor, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct AlsOptions {
    pub rank: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl AlsOptions {
    pub fn new(rank: usize, seed: u64) -> Self {
        Self {
            rank,
            tol: 1e-4,
            max_iter: 200,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidOption("ALS rank must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidOption(format!(
                "ALS tolerance {} must be positive",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlsResult {
    /// Sign-indefinite factors with unit weights.
    pub model: KruskalTensor,
    pub rel_err: f64,
    pub iterations: usize,
    /// Relative error after each full sweep.
    pub history: Vec<f64>,
}

/// Relative ridge added to the normal-equation gram before solving.
const RIDGE: f64 = 1e-12;

pub fn cpd_als(t: &DenseTensor, opts: &AlsOptions, exec: Execution) -> Result<AlsResult> {
    opts.validate()?;
    let order = t.order();
    let dims = t.dims();
    let total: usize = dims.iter().product();
    let r = opts.rank;
    for n in 0..order {
        let others = total / dims[n];
        if r > others {
            return Err(Error::RankInfeasible {
                rank: r,
                reason: format!("mode {n} unfolding has only {others} columns"),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut factors: Vec<Matrix> = dims
        .iter()
        .map(|&d| Matrix::from_fn(d, r, |_, _| rng.random::<f64>()))
        .collect();
    let mut grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    let norm_sq = t.norm_sq();
    let norm = norm_sq.sqrt();

    let mut history = Vec::new();
    let mut rel_err = if norm == 0.0 { 0.0 } else { 1.0 };
    let mut iterations = 0;
    for iter in 0..opts.max_iter {
        let mut last = Matrix::zeros(0, 0);
        for n in 0..order {
            let m = mttkrp(t, &factors, n, exec)?;
            let h = hadamard_all(&grams, Some(n), r);
            factors[n] = solve_normal(&m, &h)?;
            grams[n] = factors[n].gram();
            last = m;
        }
        iterations = iter + 1;

        let inner: f64 = (0..r)
            .map(|j| dot(last.col(j), factors[order - 1].col(j)))
            .sum();
        let model_sq: f64 = hadamard_all(&grams, None, r).as_slice().iter().sum();
        let resid_sq = (norm_sq - 2.0 * inner + model_sq).max(0.0);
        let new_err = if norm == 0.0 {
            0.0
        } else {
            resid_sq.sqrt() / norm
        };
        if !new_err.is_finite() || factors.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite {
                iteration: iterations,
                block: 0,
            });
        }
        history.push(new_err);
        let change = (new_err - rel_err).abs();
        rel_err = new_err;
        if iter > 0 && change < opts.tol {
            break;
        }
    }

    Ok(AlsResult {
        model: KruskalTensor::from_factors(factors)?,
        rel_err,
        iterations,
        history,
    })
}

/// Least-squares update `U = M · H⁻¹` for symmetric PSD `H`, with a small
/// ridge; an all-zero `H` yields a zero factor.
fn solve_normal(m: &Matrix, h: &Matrix) -> Result<Matrix> {
    let r = h.rows();
    if h.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(m.rows(), r));
    }
    let mut reg = h.to_nalgebra();
    let ridge = RIDGE * h.trace() / r as f64;
    for i in 0..r {
        reg[(i, i)] += ridge;
    }
    let rhs = m.transpose().to_nalgebra();
    let sol = match reg.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => reg
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::RankDeficient(format!("ALS normal equations: {e}")))?,
    };
    Ok(Matrix::from_nalgebra(&sol).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(dims: &[usize], r: usize, seed: u64) -> KruskalTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = dims
            .iter()
            .map(|&d| Matrix::from_fn(d, r, |_, _| rng.random::<f64>()))
            .collect();
        KruskalTensor::from_factors(f).unwrap()
    }

    #[test]
    fn exact_rank_one() {
        let t = random_model(&[5, 4, 6], 1, 1).reconstruct().unwrap();
        let res = cpd_als(&t, &AlsOptions::new(1, 2), Execution::Sequential).unwrap();
        assert!(res.rel_err < 1e-6, "{}", res.rel_err);
        assert!(res.iterations <= 200);
    }

    #[test]
    fn zero_tensor() {
        let t = DenseTensor::zeros(vec![3, 4, 2]).unwrap();
        let res = cpd_als(&t, &AlsOptions::new(2, 3), Execution::Sequential).unwrap();
        assert_eq!(res.rel_err, 0.0);
        assert!(res.model.factors().iter().all(Matrix::is_finite));
        assert!(res
            .model
            .reconstruct()
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn true_rank_fit() {
        // the default 1e-4 change rule stops in the linear-convergence tail near
        // fit 0.996 on this instance; the tighter rule lets it finish
        let t = random_model(&[16, 18, 20], 9, 4).reconstruct().unwrap();
        let opts = AlsOptions {
            tol: 1e-8,
            ..AlsOptions::new(9, 5)
        };
        let res = cpd_als(&t, &opts, Execution::Parallel).unwrap();
        assert!(1.0 - res.rel_err >= 0.999, "fit {}", 1.0 - res.rel_err);
        assert!(res
            .model
            .factors()
            .iter()
            .zip([16, 18, 20])
            .all(|(f, d)| f.rows() == d && f.cols() == 9));
    }

    #[test]
    fn sweeps_never_increase_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = DenseTensor::from_fn(vec![6, 5, 7], |_| rng.random()).unwrap();
        let mut opts = AlsOptions::new(4, 7);
        opts.tol = 1e-12;
        opts.max_iter = 60;
        let res = cpd_als(&t, &opts, Execution::Sequential).unwrap();
        for w in res.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn infeasible_rank() {
        let t = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(matches!(
            cpd_als(&t, &AlsOptions::new(5, 0), Execution::Sequential),
            Err(Error::RankInfeasible { .. })
        ));
        assert!(cpd_als(&t, &AlsOptions::new(0, 0), Execution::Sequential).is_err());
    }
}
