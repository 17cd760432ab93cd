//! Coupled nonnegative CP decomposition by alternating proximal gradient.
//!
//! Each iteration updates the core weights of every block, then every mode's
//! factors block by block, each time taking a projected gradient step from an
//! extrapolated point. If the objective fails to decrease, the iteration is
//! redone from the previous iterate without extrapolation.
//!
//! In [`SolveMode::Lra`] every tensor is first replaced by an unconstrained
//! CP approximation, and the data contractions in the gradients become
//! products of small cross grams.

mod gradient;
mod step;

pub use gradient::{
    block_objective, grad_core, grad_factor, lipschitz_core, lipschitz_factor, objective, DataTerm,
};
pub use step::{
    extrapolate, extrapolate_matrix, extrapolation_weight, update_core, update_factors, FactorStep,
    Momentum,
};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::als::{cpd_als, AlsOptions};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kruskal::{BlockFactors, CoupledFactorSet, KruskalTensor};
use crate::tensor::{dot, hadamard_all, spectral_norm, DenseTensor, Matrix, SPECTRAL_TOL};
use gradient::{core_gradient, factor_gradient, half_residual_sq, quad, scaled_gram};

/// Settings of the compression stage.
#[derive(Clone, Debug, PartialEq)]
pub struct LraOptions {
    /// Compression rank; `None` uses each block's own rank.
    pub rank: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LraOptions {
    fn default() -> Self {
        Self {
            rank: None,
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum SolveMode {
    #[default]
    Full,
    Lra(LraOptions),
}

/// Nonnegative tensors to decompose jointly, with per-block ranks and
/// per-mode coupled column counts.
#[derive(Clone, Debug)]
pub struct CoupledProblem {
    tensors: Vec<DenseTensor>,
    ranks: Vec<usize>,
    coupled: Vec<usize>,
    pub mode: SolveMode,
    /// `false` freezes the core weights at one.
    pub update_core: bool,
}

impl CoupledProblem {
    pub fn new(tensors: Vec<DenseTensor>, ranks: Vec<usize>, coupled: Vec<usize>) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Shape("problem needs at least one tensor".into()))?;
        let order = first.order();
        if ranks.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "{} ranks for {} tensors",
                ranks.len(),
                tensors.len()
            )));
        }
        if coupled.len() != order {
            return Err(Error::Shape(format!(
                "{} coupled counts for order {order}",
                coupled.len()
            )));
        }
        if let Some(s) = ranks.iter().position(|&r| r == 0) {
            return Err(Error::InvalidOption(format!("block {s} has rank 0")));
        }
        let min_rank = *ranks.iter().min().unwrap_or(&0);
        for (s, t) in tensors.iter().enumerate() {
            if t.order() != order {
                return Err(Error::Shape(format!(
                    "tensor {s} has order {}, expected {order}",
                    t.order()
                )));
            }
            if !t.is_finite() || !t.is_nonnegative() {
                return Err(Error::InvalidInput(format!("tensor {s}")));
            }
        }
        for (n, &l) in coupled.iter().enumerate() {
            if l > min_rank {
                return Err(Error::Coupling(format!(
                    "mode {n}: {l} coupled columns exceed the smallest rank {min_rank}"
                )));
            }
            if l > 0 {
                let rows = first.dims()[n];
                if let Some(s) = tensors.iter().position(|t| t.dims()[n] != rows) {
                    return Err(Error::Coupling(format!(
                        "mode {n}, block {s}: size {} differs from {rows} but the mode is coupled",
                        tensors[s].dims()[n]
                    )));
                }
            }
        }
        Ok(Self {
            tensors,
            ranks,
            coupled,
            mode: SolveMode::Full,
            update_core: true,
        })
    }

    pub fn with_mode(mut self, mode: SolveMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_core_updates(mut self, update_core: bool) -> Self {
        self.update_core = update_core;
        self
    }

    pub fn tensors(&self) -> &[DenseTensor] {
        &self.tensors
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn coupled_counts(&self) -> &[usize] {
        &self.coupled
    }

    pub fn num_blocks(&self) -> usize {
        self.tensors.len()
    }

    pub fn order(&self) -> usize {
        self.tensors[0].order()
    }

    /// Data terms against the original tensors.
    pub fn full_data(&self) -> Vec<DataTerm<'_>> {
        self.tensors.iter().map(DataTerm::Full).collect()
    }

    /// Uniform `[0, 1)` starting point; the shared columns are drawn once.
    /// Core weights are drawn too unless core updates are disabled, in which
    /// case they are fixed at one.
    pub fn initial_factors(&self, seed: u64) -> CoupledFactorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims0 = self.tensors[0].dims();
        let common: Vec<Matrix> = self
            .coupled
            .iter()
            .enumerate()
            .map(|(n, &l)| {
                if l == 0 {
                    Matrix::zeros(0, 0)
                } else {
                    uniform_matrix(dims0[n], l, &mut rng)
                }
            })
            .collect();
        let mut blocks: Vec<BlockFactors> = self
            .tensors
            .iter()
            .zip(&self.ranks)
            .map(|(t, &r)| BlockFactors {
                weights: vec![1.0; r],
                individual: t
                    .dims()
                    .iter()
                    .zip(&self.coupled)
                    .map(|(&d, &l)| uniform_matrix(d, r - l, &mut rng))
                    .collect(),
            })
            .collect();
        if self.update_core {
            for b in &mut blocks {
                b.weights.iter_mut().for_each(|w| *w = rng.random());
            }
        }
        CoupledFactorSet::new(common, blocks).expect("shapes follow the problem")
    }

    fn check_factors(&self, set: &CoupledFactorSet) -> Result<()> {
        if set.num_blocks() != self.num_blocks() || set.coupled_counts() != self.coupled {
            return Err(Error::Shape(
                "factor set does not match the problem's blocks or coupling".into(),
            ));
        }
        for s in 0..self.num_blocks() {
            let k = set.kruskal(s);
            if k.dims() != self.tensors[s].dims() || k.rank() != self.ranks[s] {
                return Err(Error::Shape(format!(
                    "block {s} factors do not match its tensor"
                )));
            }
        }
        Ok(())
    }

    /// Objective against the original tensors.
    pub fn objective(&self, set: &CoupledFactorSet, exec: Execution) -> Result<f64> {
        self.check_factors(set)?;
        objective(&self.full_data(), set, exec)
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once the averaged relative error changes by less than this.
    pub tol: f64,
    /// Cap `δ_w < 1` on the extrapolation weight ratio.
    pub delta_w: f64,
    pub seed: u64,
    /// Iterations between trace rows (iteration 0 and the last are always kept).
    pub trace_every: usize,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-8,
            delta_w: 0.9999,
            seed: 0,
            trace_every: 1,
            execution: Execution::default(),
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.delta_w > 0.0 && self.delta_w < 1.0) {
            return Err(Error::InvalidOption(format!(
                "delta_w must lie in (0, 1), got {}",
                self.delta_w
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidOption(format!(
                "tol must be >= 0, got {}",
                self.tol
            )));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidOption(
                "trace_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Objective against the original tensors.
    pub objfun: f64,
    pub relerr: f64,
    /// Seconds since the solve started, compression included.
    pub elapsed_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminationReason {
    ToleranceMet,
    MaxIterations,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TerminationReason::ToleranceMet => "ToleranceMet",
            TerminationReason::MaxIterations => "MaxIterations",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub factors: CoupledFactorSet,
    pub trace: Vec<TraceRow>,
    pub termination: TerminationReason,
    pub iterations: usize,
    /// Objective actually minimized (the compressed one in low-rank mode),
    /// one entry per iteration starting with the initialization.
    pub objective_history: Vec<f64>,
    /// Iterations that fell back to the non-extrapolated update.
    pub restarts: usize,
    /// Restarts whose re-update still did not decrease the objective (only
    /// at rounding level); the previous iterate is kept for those.
    pub rejected: usize,
    pub compression_seconds: f64,
    pub elapsed_seconds: f64,
    pub relerr: f64,
    pub objfun: f64,
    /// Low-rank approximations used in [`SolveMode::Lra`].
    pub compressed: Option<Vec<KruskalTensor>>,
}

/// Lipschitz constants remembered from the previous accepted iteration.
#[derive(Clone, Debug)]
struct LipschitzHistory {
    core: Vec<Option<f64>>,
    factor: Vec<Vec<Option<f64>>>,
    common: Vec<Option<f64>>,
}

impl LipschitzHistory {
    fn empty(blocks: usize, order: usize) -> Self {
        Self {
            core: vec![None; blocks],
            factor: vec![vec![None; order]; blocks],
            common: vec![None; order],
        }
    }
}

struct Sweep {
    next: CoupledFactorSet,
    /// `(U^⊙)ᵀ vec(M)` of the working data at `next`.
    inner: Vec<Vec<f64>>,
    lipschitz: LipschitzHistory,
}

struct Solver<'a> {
    problem: &'a CoupledProblem,
    data: Vec<DataTerm<'a>>,
    data_norm_sq: Vec<f64>,
    opts: &'a SolverOptions,
    exec: Execution,
}

impl Solver<'_> {
    /// One pass over all blocks: cores, then modes `0..N` with every block
    /// inside each mode, extrapolating from `x` along `x − prev` with base
    /// weight `w_hat`.
    fn sweep(
        &self,
        x: &CoupledFactorSet,
        prev: &CoupledFactorSet,
        x_inner: &[Vec<f64>],
        w_hat: f64,
        hist: &LipschitzHistory,
    ) -> Result<Sweep> {
        let exec = self.exec;
        let nblocks = x.num_blocks();
        let order = x.order();
        let delta = self.opts.delta_w;
        let mut next = x.clone();
        let mut lips = LipschitzHistory::empty(nblocks, order);
        let mut grams: Vec<Vec<Matrix>> = exec.map(nblocks, |s| {
            (0..order).map(|n| x.factor(s, n).gram()).collect()
        });

        if self.problem.update_core {
            let updates = exec.try_map(nblocks, |s| -> Result<(Vec<f64>, f64)> {
                let h = hadamard_all(&grams[s], None, x.rank(s));
                let lip = spectral_norm(&h, SPECTRAL_TOL)?;
                let w = extrapolation_weight(w_hat, delta, hist.core[s], lip);
                let lam_hat = extrapolate(x.weights(s), prev.weights(s), w);
                let g = core_gradient(&h, &lam_hat, &x_inner[s]);
                let lam = update_core(&lam_hat, &g, lip).map_err(|e| match e {
                    Error::DegenerateLipschitz(_) => {
                        Error::DegenerateLipschitz(format!("core weights of block {s}"))
                    }
                    other => other,
                })?;
                Ok((lam, lip))
            })?;
            for (s, (lam, lip)) in updates.into_iter().enumerate() {
                next.set_weights(s, lam);
                lips.core[s] = Some(lip);
            }
        }

        let mut last_mttkrp: Vec<Matrix> = Vec::new();
        for n in 0..order {
            let coupled = next.coupled_counts()[n];
            let prepared = exec.try_map(nblocks, |s| -> Result<(Matrix, f64)> {
                let h = hadamard_all(&grams[s], Some(n), next.rank(s));
                let dhd = scaled_gram(&h, next.weights(s));
                let lip = spectral_norm(&dhd, SPECTRAL_TOL)?;
                Ok((dhd, lip))
            })?;
            let common_hat = if coupled > 0 {
                let lip_sum: f64 = prepared.iter().map(|p| p.1).sum();
                let w = extrapolation_weight(w_hat, delta, hist.common[n], lip_sum);
                lips.common[n] = Some(lip_sum);
                Some(extrapolate_matrix(x.common(n), prev.common(n), w))
            } else {
                None
            };
            let blocks = exec.try_map(nblocks, |s| -> Result<(Matrix, Matrix, Matrix)> {
                let (dhd, lip) = &prepared[s];
                let w = extrapolation_weight(w_hat, delta, hist.factor[s][n], *lip);
                let ind_hat = extrapolate_matrix(x.individual(s, n), prev.individual(s, n), w);
                let u_hat = match &common_hat {
                    Some(c) => Matrix::hstack(c, &ind_hat),
                    None => ind_hat,
                };
                let factors = next.block_factors(s);
                let m = self.data[s].mttkrp(&factors, n, exec)?;
                let g = factor_gradient(&u_hat, dhd, &m, next.weights(s));
                Ok((u_hat, g, m))
            })?;
            let steps: Vec<FactorStep> = blocks
                .iter()
                .zip(&prepared)
                .map(|((u_hat, g, _), (_, lip))| FactorStep {
                    u_hat,
                    grad: g,
                    lipschitz: *lip,
                })
                .collect();
            let (common, individual) = update_factors(&steps, coupled).map_err(|e| match e {
                Error::DegenerateLipschitz(what) => {
                    Error::DegenerateLipschitz(format!("mode {n}, {what}"))
                }
                other => other,
            })?;
            if coupled > 0 {
                next.set_common(n, common);
            }
            for (s, ind) in individual.into_iter().enumerate() {
                next.set_individual(s, n, ind);
                lips.factor[s][n] = Some(prepared[s].1);
            }
            let new_grams = exec.map(nblocks, |s| next.factor(s, n).gram());
            for (s, g) in new_grams.into_iter().enumerate() {
                grams[s][n] = g;
            }
            if n + 1 == order {
                last_mttkrp = blocks.into_iter().map(|(_, _, m)| m).collect();
            }
        }

        // the last mode's contraction already used every other final factor
        let inner = (0..nblocks)
            .map(|s| {
                let u = next.factor(s, order - 1);
                (0..u.cols())
                    .map(|j| dot(u.col(j), last_mttkrp[s].col(j)))
                    .collect()
            })
            .collect();
        Ok(Sweep {
            next,
            inner,
            lipschitz: lips,
        })
    }

    /// Per-block working objective at `set` given its data inner products.
    fn working_objective(&self, set: &CoupledFactorSet, inner: &[Vec<f64>]) -> Vec<f64> {
        self.exec.map(set.num_blocks(), |s| {
            let grams: Vec<Matrix> = set.block_factors(s).iter().map(Matrix::gram).collect();
            let h = hadamard_all(&grams, None, set.rank(s));
            half_residual_sq(self.data_norm_sq[s], &inner[s], &h, set.weights(s))
        })
    }

    fn working_inner(&self, set: &CoupledFactorSet) -> Result<Vec<Vec<f64>>> {
        self.exec.try_map(set.num_blocks(), |s| {
            self.data[s].kr_inner(&set.block_factors(s), self.exec)
        })
    }

    /// `(objfun, relerr)` against the original tensors. In full mode the
    /// working inner products are reused.
    fn original_metrics(
        &self,
        set: &CoupledFactorSet,
        working_inner: &[Vec<f64>],
    ) -> Result<(f64, f64, Vec<f64>)> {
        let tensors = self.problem.tensors();
        let resid = self.exec.try_map(set.num_blocks(), |s| -> Result<f64> {
            let factors = set.block_factors(s);
            let inner = match self.problem.mode {
                SolveMode::Full => working_inner[s].clone(),
                SolveMode::Lra(_) => crate::tensor::kr_inner(&tensors[s], &factors, self.exec)?,
            };
            let grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
            let h = hadamard_all(&grams, None, set.rank(s));
            let w = set.weights(s);
            Ok(tensors[s].norm_sq() - 2.0 * dot(w, &inner) + quad(&h, w))
        })?;
        let objfun = 0.5 * resid.iter().sum::<f64>();
        let relerr = resid
            .iter()
            .zip(tensors)
            .map(|(&r, t)| {
                let norm = t.frobenius_norm();
                if norm == 0.0 {
                    0.0
                } else {
                    r.max(0.0).sqrt() / norm
                }
            })
            .sum::<f64>()
            / tensors.len() as f64;
        Ok((objfun, relerr, resid))
    }
}

fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

/// Runs the coupled solver from [`CoupledProblem::initial_factors`],
/// compressing first in [`SolveMode::Lra`].
pub fn solve(problem: &CoupledProblem, opts: &SolverOptions) -> Result<SolveResult> {
    solve_from(problem, opts, problem.initial_factors(opts.seed))
}

/// Like [`solve`] but starting from `initial`. With core updates disabled
/// the weights in `initial` stay fixed.
pub fn solve_from(
    problem: &CoupledProblem,
    opts: &SolverOptions,
    initial: CoupledFactorSet,
) -> Result<SolveResult> {
    opts.validate()?;
    problem.check_factors(&initial)?;
    if !initial.is_nonnegative() {
        return Err(Error::InvalidInput(
            "initial factors must be nonnegative".into(),
        ));
    }
    let start = Instant::now();
    let exec = opts.execution;
    let nblocks = problem.num_blocks();

    let compressed = match &problem.mode {
        SolveMode::Full => None,
        SolveMode::Lra(lra) => {
            let models = exec.try_map(nblocks, |s| {
                let als = AlsOptions {
                    rank: lra.rank.unwrap_or(problem.ranks[s]),
                    tol: lra.tol,
                    max_iter: lra.max_iter,
                    seed: opts.seed.wrapping_add(s as u64),
                };
                compress_block(&problem.tensors[s], als, exec).map_err(|e| match e {
                    Error::NonFinite { iteration, .. } => Error::NonFinite {
                        iteration,
                        block: s,
                    },
                    other => other,
                })
            })?;
            Some(models)
        }
    };
    let compression_seconds = start.elapsed().as_secs_f64();

    let data: Vec<DataTerm> = match &compressed {
        None => problem.full_data(),
        Some(models) => models.iter().map(DataTerm::Compressed).collect(),
    };
    let data_norm_sq = data.iter().map(DataTerm::norm_sq).collect();
    let solver = Solver {
        problem,
        data,
        data_norm_sq,
        opts,
        exec,
    };

    let mut x = initial;
    let mut prev = x.clone();
    let mut x_inner = solver.working_inner(&x)?;
    let per_block = solver.working_objective(&x, &x_inner);
    if let Some(s) = first_non_finite(&per_block) {
        return Err(Error::NonFinite {
            iteration: 0,
            block: s,
        });
    }
    let mut f_prev: f64 = per_block.iter().sum();
    let (mut objfun, mut relerr, _) = solver.original_metrics(&x, &x_inner)?;

    let mut trace = vec![TraceRow {
        iter: 0,
        objfun,
        relerr,
        elapsed_s: start.elapsed().as_secs_f64(),
    }];
    let mut history = vec![f_prev];
    let mut hist = LipschitzHistory::empty(nblocks, problem.order());
    let mut momentum = Momentum::default();
    let mut restarts = 0;
    let mut rejected = 0;
    let mut termination = TerminationReason::MaxIterations;
    let mut iterations = 0;
    let mut stale = false;

    for k in 1..=opts.max_iter {
        let w_hat = momentum.advance();
        let mut sweep = solver.sweep(&x, &prev, &x_inner, w_hat, &hist)?;
        let mut per_block = solver.working_objective(&sweep.next, &sweep.inner);
        let mut f_new: f64 = per_block.iter().sum();
        if !(f_new < f_prev) {
            restarts += 1;
            sweep = solver.sweep(&x, &x, &x_inner, 0.0, &hist)?;
            per_block = solver.working_objective(&sweep.next, &sweep.inner);
            f_new = per_block.iter().sum();
        }
        if let Some(s) = first_non_finite(&per_block) {
            return Err(Error::NonFinite {
                iteration: k,
                block: s,
            });
        }
        iterations = k;
        let accepted = f_new <= f_prev;
        if accepted {
            prev = std::mem::replace(&mut x, sweep.next);
            x_inner = sweep.inner;
            f_prev = f_new;
        } else {
            rejected += 1;
            prev = x.clone();
        }
        hist = sweep.lipschitz;
        history.push(f_prev);

        // with tol = 0 the stopping rule never fires, so the original-tensor
        // metrics are only needed for trace rows
        let traced = k % opts.trace_every == 0 || k == opts.max_iter;
        stale |= accepted;
        let relerr_old = relerr;
        if stale && (opts.tol > 0.0 || traced) {
            let (o, r, resid) = solver.original_metrics(&x, &x_inner)?;
            if let Some(s) = first_non_finite(&resid) {
                return Err(Error::NonFinite {
                    iteration: k,
                    block: s,
                });
            }
            objfun = o;
            relerr = r;
            stale = false;
        }
        let done = (relerr - relerr_old).abs() < opts.tol;
        if traced || done {
            trace.push(TraceRow {
                iter: k,
                objfun,
                relerr,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
        }
        if done {
            termination = TerminationReason::ToleranceMet;
            break;
        }
    }

    Ok(SolveResult {
        factors: x,
        trace,
        termination,
        iterations,
        objective_history: history,
        restarts,
        rejected,
        compression_seconds,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        relerr,
        objfun,
        compressed,
    })
}

/// ALS compression, retrying with shifted seeds if an attempt diverges.
fn compress_block(t: &DenseTensor, mut opts: AlsOptions, exec: Execution) -> Result<KruskalTensor> {
    const ATTEMPTS: u64 = 3;
    let mut last = None;
    for _ in 0..ATTEMPTS {
        match cpd_als(t, &opts, exec) {
            Ok(res) => return Ok(res.model),
            Err(e @ Error::NonFinite { .. }) => {
                last = Some(e);
                opts.seed = opts.seed.wrapping_add(1_000_003);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests;
