//! Synthetic coupled problems with known nonnegative ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kruskal::{BlockFactors, CoupledFactorSet};
use crate::metrics::{add_noise, NoiseKind};
use crate::solver::CoupledProblem;
use crate::tensor::{DenseTensor, Matrix};

/// Generator settings. With only `n` set, dims are `(8n, 9n, 10n)`, the rank
/// is `round(9n/2)` and every mode shares `round(9n/4)` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub blocks: usize,
    pub n: usize,
    /// `f64::INFINITY` leaves the tensors clean.
    pub snr_db: f64,
    pub seed: u64,
    pub dims: Option<Vec<usize>>,
    pub rank: Option<usize>,
    pub coupled: Option<Vec<usize>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            blocks: 10,
            n: 1,
            snr_db: 20.0,
            seed: 0,
            dims: None,
            rank: None,
            coupled: None,
        }
    }
}

impl SynthSpec {
    pub fn new(n: usize, blocks: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            blocks,
            n,
            snr_db,
            seed,
            ..Default::default()
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.dims
            .clone()
            .unwrap_or_else(|| vec![8 * self.n, 9 * self.n, 10 * self.n])
    }

    pub fn rank(&self) -> usize {
        self.rank
            .unwrap_or_else(|| ((9 * self.n) as f64 / 2.0).round() as usize)
    }

    pub fn coupled(&self) -> Vec<usize> {
        self.coupled.clone().unwrap_or_else(|| {
            let l = ((9 * self.n) as f64 / 4.0).round() as usize;
            vec![l; self.dims().len()]
        })
    }

    fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidOption(
                "at least one block is required".into(),
            ));
        }
        if self.dims.is_none() && self.n == 0 {
            return Err(Error::InvalidOption(
                "size factor n must be at least 1".into(),
            ));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidOption("SNR is NaN".into()));
        }
        let (r, dims, l) = (self.rank(), self.dims(), self.coupled());
        if r == 0 {
            return Err(Error::InvalidOption("rank must be at least 1".into()));
        }
        if l.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} coupled counts for order {}",
                l.len(),
                dims.len()
            )));
        }
        if let Some(&bad) = l.iter().find(|&&c| c > r) {
            return Err(Error::Coupling(format!(
                "{bad} coupled columns exceed rank {r}"
            )));
        }
        Ok(())
    }
}

/// A generated problem together with the model that produced it.
#[derive(Clone, Debug)]
pub struct SynthProblem {
    pub problem: CoupledProblem,
    pub truth: CoupledFactorSet,
    /// Noise-free reconstructions of `truth`.
    pub clean: Vec<DenseTensor>,
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Truth factors in `[0, 1)`, weights in `[0.5, 1.5)`, then reconstruction
/// and clipped gaussian noise at the requested SNR.
pub fn generate(spec: &SynthSpec) -> Result<SynthProblem> {
    spec.validate()?;
    let dims = spec.dims();
    let rank = spec.rank();
    let coupled = spec.coupled();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let common: Vec<Matrix> = dims
        .iter()
        .zip(&coupled)
        .map(|(&d, &l)| {
            if l == 0 {
                Matrix::zeros(0, 0)
            } else {
                uniform(d, l, 0.0, 1.0, &mut rng)
            }
        })
        .collect();
    let blocks: Vec<BlockFactors> = (0..spec.blocks)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(s as u64 + 1);
            let individual = dims
                .iter()
                .zip(&coupled)
                .map(|(&d, &l)| uniform(d, rank - l, 0.0, 1.0, &mut rng))
                .collect();
            let weights = (0..rank).map(|_| rng.random_range(0.5..1.5)).collect();
            BlockFactors {
                weights,
                individual,
            }
        })
        .collect();
    let truth = CoupledFactorSet::new(common, blocks)?;

    let exec = Execution::default();
    let clean = exec.try_map(spec.blocks, |s| truth.kruskal(s).reconstruct())?;
    let noisy = exec.try_map(spec.blocks, |s| {
        let noise_seed = spec
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(s as u64);
        add_noise(&clean[s], spec.snr_db, NoiseKind::Gaussian, noise_seed)
    })?;
    let problem = CoupledProblem::new(noisy, vec![rank; spec.blocks], coupled)?;
    Ok(SynthProblem {
        problem,
        truth,
        clean,
    })
}
