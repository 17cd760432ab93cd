//! Evaluation metrics, model-order helpers and noise injection.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kruskal::CoupledFactorSet;
use crate::tensor::{DenseTensor, Matrix};

/// PSNR reported for a zero mean squared error.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_pairs(originals: &[DenseTensor], recovered: &[DenseTensor]) -> Result<()> {
    if originals.len() != recovered.len() {
        return Err(Error::Shape(format!(
            "{} originals against {} recovered tensors",
            originals.len(),
            recovered.len()
        )));
    }
    if originals.is_empty() {
        return Err(Error::Shape("no tensors to compare".into()));
    }
    for (a, b) in originals.iter().zip(recovered) {
        a.check_same_dims(b)?;
    }
    Ok(())
}

fn error_ratios(originals: &[DenseTensor], recovered: &[DenseTensor]) -> Result<Vec<f64>> {
    check_pairs(originals, recovered)?;
    originals
        .iter()
        .zip(recovered)
        .map(|(a, b)| {
            let norm = a.frobenius_norm();
            if norm == 0.0 {
                Ok(0.0)
            } else {
                Ok(a.distance_sq(b)?.sqrt() / norm)
            }
        })
        .collect()
}

/// `(1/S) Σ_s ‖M − M̂‖_F / ‖M‖_F`; an all-zero original contributes 0.
pub fn rel_err(originals: &[DenseTensor], recovered: &[DenseTensor]) -> Result<f64> {
    let r = error_ratios(originals, recovered)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// `(1/S) Σ_s (1 − ‖M − M̂‖_F / ‖M‖_F)`.
pub fn ten_fit(originals: &[DenseTensor], recovered: &[DenseTensor]) -> Result<f64> {
    Ok(1.0 - rel_err(originals, recovered)?)
}

fn rank_tolerance(m: &Matrix, smax: f64) -> f64 {
    m.rows().max(m.cols()) as f64 * f64::EPSILON * smax
}

fn check_column_rank(m: &Matrix, singular: &[f64], what: &str) -> Result<()> {
    let smax = singular.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(m, smax);
    let rank = singular.iter().filter(|&&s| s > tol).count();
    if rank < m.cols() {
        return Err(Error::RankDeficient(format!(
            "{what} is {}x{} with numerical rank {rank}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Moore-Penrose inverse; errors if `m` loses column rank.
fn pinv_full_column_rank(m: &Matrix) -> Result<Matrix> {
    let svd = m.to_nalgebra().svd(true, true);
    check_column_rank(m, svd.singular_values.as_slice(), "estimate")?;
    let tol = rank_tolerance(m, svd.singular_values.max());
    let p = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(Matrix::from_nalgebra(&p))
}

/// Amari-type index of `G = pinv(estimated) · truth`:
///
/// `1/(2R(R−1)) [Σ_i (Σ_j |g_ij| / max_k |g_ik| − 1) + Σ_j (Σ_i |g_ij| / max_k |g_kj| − 1)]`
///
/// Zero exactly when `G` is a scaled permutation.
pub fn performance_index(estimated: &Matrix, truth: &Matrix) -> Result<f64> {
    if estimated.rows() != truth.rows() || estimated.cols() != truth.cols() {
        return Err(Error::Shape(format!(
            "estimate is {}x{}, truth is {}x{}",
            estimated.rows(),
            estimated.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    let r = truth.cols();
    if r < 2 {
        return Err(Error::Undefined(format!(
            "performance index needs rank >= 2, got {r}"
        )));
    }
    let sv = truth.to_nalgebra().singular_values();
    check_column_rank(truth, sv.as_slice(), "truth")?;
    let g = pinv_full_column_rank(estimated)?
        .matmul(truth)
        .map(f64::abs);
    amari(&g)
}

/// The double sum above for a matrix of absolute values.
fn amari(g: &Matrix) -> Result<f64> {
    let r = g.rows();
    let mut total = 0.0;
    for i in 0..r {
        let row = g.row(i);
        total +=
            line_term(&row).ok_or_else(|| Error::RankDeficient(format!("row {i} of G is zero")))?;
    }
    for j in 0..r {
        total += line_term(g.col(j))
            .ok_or_else(|| Error::RankDeficient(format!("column {j} of G is zero")))?;
    }
    Ok(total / (2.0 * r as f64 * (r as f64 - 1.0)))
}

fn line_term(v: &[f64]) -> Option<f64> {
    let max = v.iter().cloned().fold(0.0, f64::max);
    (max > 0.0).then(|| v.iter().sum::<f64>() / max - 1.0)
}

/// Performance index per mode, averaged over blocks.
pub fn performance_index_per_mode(
    estimated: &CoupledFactorSet,
    truth: &CoupledFactorSet,
) -> Result<Vec<f64>> {
    if estimated.num_blocks() != truth.num_blocks() || estimated.order() != truth.order() {
        return Err(Error::Shape(
            "estimate and truth differ in block count or order".into(),
        ));
    }
    let s = estimated.num_blocks();
    (0..estimated.order())
        .map(|n| {
            let mut sum = 0.0;
            for b in 0..s {
                sum += performance_index(&estimated.factor(b, n), &truth.factor(b, n))?;
            }
            Ok(sum / s as f64)
        })
        .collect()
}

/// `10 log10(peak² / MSE)` over every entry of every pair; a zero MSE
/// reports [`PSNR_CAP_DB`].
pub fn psnr(originals: &[DenseTensor], recovered: &[DenseTensor], peak: f64) -> Result<f64> {
    check_pairs(originals, recovered)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidOption(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for (a, b) in originals.iter().zip(recovered) {
        sq += a.distance_sq(b)?;
        count += a.len();
    }
    let mse = sq / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Pearson correlation; 0 if either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Maximum over components `r` of `Π_d corr(templates[d], candidates[d][:, r])`.
pub fn mcc(templates: &[Vec<f64>], candidates: &[Matrix]) -> Result<f64> {
    if templates.len() != candidates.len() || templates.is_empty() {
        return Err(Error::Shape(format!(
            "{} templates for {} candidate matrices",
            templates.len(),
            candidates.len()
        )));
    }
    let r = candidates[0].cols();
    if r == 0 {
        return Err(Error::Shape("candidate matrices have no columns".into()));
    }
    for (d, (t, c)) in templates.iter().zip(candidates).enumerate() {
        if c.cols() != r || c.rows() != t.len() {
            return Err(Error::Shape(format!(
                "domain {d}: template length {} against a {}x{} candidate",
                t.len(),
                c.rows(),
                c.cols()
            )));
        }
    }
    Ok((0..r)
        .map(|j| {
            templates
                .iter()
                .zip(candidates)
                .map(|(t, c)| pearson(t, c.col(j)))
                .product::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Additive white noise at the requested SNR, clipped at zero.
    Gaussian,
    /// A `density` fraction of entries set to 0 or `peak` with equal odds.
    SaltPepper { density: f64, peak: f64 },
}

/// Standard deviation giving `snr_db` against a signal of mean square `power`.
pub fn noise_std(power: f64, snr_db: f64) -> f64 {
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Corrupts `t`. For [`NoiseKind::Gaussian`] an infinite `snr_db` means no
/// noise; `snr_db` is ignored for salt-and-pepper.
pub fn add_noise(t: &DenseTensor, snr_db: f64, kind: NoiseKind, seed: u64) -> Result<DenseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = t.as_slice().to_vec();
    match kind {
        NoiseKind::Gaussian => {
            if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
                return Err(Error::InvalidOption(format!("invalid SNR {snr_db} dB")));
            }
            if snr_db == f64::INFINITY || data.is_empty() {
                return Ok(t.clone());
            }
            let power = t.norm_sq() / data.len() as f64;
            let sd = noise_std(power, snr_db);
            if sd > 0.0 {
                let normal =
                    Normal::new(0.0, sd).map_err(|e| Error::InvalidOption(e.to_string()))?;
                for v in &mut data {
                    *v = (*v + normal.sample(&mut rng)).max(0.0);
                }
            }
        }
        NoiseKind::SaltPepper { density, peak } => {
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::InvalidOption(format!(
                    "density {density} outside [0, 1]"
                )));
            }
            for v in &mut data {
                if rng.random::<f64>() < density {
                    *v = if rng.random::<bool>() { peak } else { 0.0 };
                }
            }
        }
    }
    DenseTensor::new(t.dims().to_vec(), data)
}

/// Smallest `r` whose top-`r` squared singular values reach `threshold` of
/// the total. Uses the eigenvalues of the smaller gram.
pub fn estimate_rank_evr(m: &Matrix, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidOption(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    let gram = if m.rows() < m.cols() {
        m.transpose().gram()
    } else {
        m.gram()
    };
    let mut eig: Vec<f64> = gram
        .to_nalgebra()
        .symmetric_eigenvalues()
        .iter()
        .map(|&e| e.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total == 0.0 {
        return Ok(0);
    }
    let target = threshold * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for (i, e) in eig.iter().enumerate() {
        acc += e;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(eig.len())
}

/// Greedy one-to-one matching of columns with `|corr| >= rho`, strongest
/// pairs first. Zero-variance columns never match.
pub fn estimate_coupled_count(a: &Matrix, b: &Matrix, rho: f64) -> Result<usize> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "factor matrices have {} and {} rows",
            a.rows(),
            b.rows()
        )));
    }
    let mut pairs = Vec::new();
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            let c = pearson(a.col(i), b.col(j)).abs();
            if c >= rho && c > 0.0 {
                pairs.push((c, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut used_a = vec![false; a.cols()];
    let mut used_b = vec![false; b.cols()];
    let mut count = 0;
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            count += 1;
        }
    }
    Ok(count)
}

/// Summary of one solve, serializable as `key: value` lines or a CSV row.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub rel_err: f64,
    pub ten_fit: f64,
    pub obj_fun: f64,
    /// Empty when no ground truth is available.
    pub pi_per_mode: Vec<f64>,
    pub elapsed_seconds: f64,
    pub psnr: Option<f64>,
    pub mcc: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.10e}"))
}

impl MetricReport {
    /// Mean of the per-mode indices; NaN without ground truth.
    pub fn pi_mean(&self) -> f64 {
        if self.pi_per_mode.is_empty() {
            f64::NAN
        } else {
            self.pi_per_mode.iter().sum::<f64>() / self.pi_per_mode.len() as f64
        }
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "relerr: {:.10e}", self.rel_err);
        let _ = writeln!(out, "tenfit: {:.10e}", self.ten_fit);
        let _ = writeln!(out, "objfun: {:.10e}", self.obj_fun);
        let pis: Vec<String> = self
            .pi_per_mode
            .iter()
            .map(|p| format!("{p:.10e}"))
            .collect();
        let _ = writeln!(out, "pi_per_mode: {}", pis.join(" "));
        let _ = writeln!(out, "pi_mean: {:.10e}", self.pi_mean());
        let _ = writeln!(out, "elapsed_s: {:.6}", self.elapsed_seconds);
        let _ = writeln!(out, "psnr: {}", fmt_opt(self.psnr));
        let _ = writeln!(out, "mcc: {}", fmt_opt(self.mcc));
        out
    }

    /// Parses the output of [`MetricReport::to_kv`].
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = MetricReport::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected `key: value`, got {line:?}"),
            })?;
            let value = value.trim();
            let num = |v: &str| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("{key}: {e}"),
                })
            };
            let opt = |v: &str| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    num(v).map(Some)
                }
            };
            match key.trim() {
                "relerr" => r.rel_err = num(value)?,
                "tenfit" => r.ten_fit = num(value)?,
                "objfun" => r.obj_fun = num(value)?,
                "pi_per_mode" => {
                    r.pi_per_mode = value.split_whitespace().map(num).collect::<Result<_>>()?
                }
                "elapsed_s" => r.elapsed_seconds = num(value)?,
                "psnr" => r.psnr = opt(value)?,
                "mcc" => r.mcc = opt(value)?,
                _ => {}
            }
        }
        Ok(r)
    }

    pub fn csv_header(order: usize) -> String {
        let mut cols = vec!["relerr".to_string(), "tenfit".into(), "objfun".into()];
        cols.extend((0..order).map(|n| format!("pi_mode{n}")));
        cols.extend(["pi_mean", "elapsed_s", "psnr", "mcc"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            format!("{:.10e}", self.rel_err),
            format!("{:.10e}", self.ten_fit),
            format!("{:.10e}", self.obj_fun),
        ];
        cols.extend(self.pi_per_mode.iter().map(|p| format!("{p:.10e}")));
        cols.push(format!("{:.10e}", self.pi_mean()));
        cols.push(format!("{:.6}", self.elapsed_seconds));
        cols.push(fmt_opt(self.psnr));
        cols.push(fmt_opt(self.mcc));
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(dims: Vec<usize>, seed: u64) -> DenseTensor {
        let mut r = rng(seed);
        DenseTensor::from_fn(dims, |_| r.random()).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        Matrix::from_fn(rows, cols, |_, _| r.random::<f64>() - 0.5)
    }

    #[test]
    fn rel_err_and_ten_fit() {
        let a = vec![
            random_tensor(vec![3, 4, 2], 1),
            random_tensor(vec![2, 2, 2], 2),
        ];
        let zeros: Vec<DenseTensor> = a
            .iter()
            .map(|t| DenseTensor::zeros(t.dims().to_vec()).unwrap())
            .collect();
        assert_eq!(rel_err(&a, &a).unwrap(), 0.0);
        assert!((rel_err(&a, &zeros).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ten_fit(&a, &a).unwrap(), 1.0);
        assert!(ten_fit(&a, &zeros).unwrap().abs() < 1e-15);

        let b = vec![
            random_tensor(vec![3, 4, 2], 3),
            random_tensor(vec![2, 2, 2], 4),
        ];
        let direct: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let d: f64 = x
                    .as_slice()
                    .iter()
                    .zip(y.as_slice())
                    .map(|(p, q)| (p - q).powi(2))
                    .sum();
                let n: f64 = x.as_slice().iter().map(|p| p * p).sum();
                (d / n).sqrt()
            })
            .sum::<f64>()
            / 2.0;
        let e = rel_err(&a, &b).unwrap();
        assert!((e - direct).abs() < 1e-12);
        assert!((ten_fit(&a, &b).unwrap() + e - 1.0).abs() < 1e-14);
        assert!(rel_err(&a, &b[..1]).is_err());
        assert!(rel_err(&a[..1], &b[1..]).is_err());
    }

    #[test]
    fn zero_original_contributes_zero() {
        let z = vec![DenseTensor::zeros(vec![2, 2]).unwrap()];
        let r = vec![random_tensor(vec![2, 2], 5)];
        assert_eq!(rel_err(&z, &r).unwrap(), 0.0);
    }

    #[test]
    fn pi_identity_and_permutation() {
        let truth = random_matrix(8, 4, 6);
        assert!(performance_index(&truth, &truth).unwrap().abs() < 1e-10);
        let perm = [2, 0, 3, 1];
        let scale = [2.0, -0.5, 3.0, 0.1];
        let est = Matrix::from_fn(8, 4, |i, j| truth.get(i, perm[j]) * scale[j]);
        assert!(performance_index(&est, &truth).unwrap().abs() < 1e-10);
    }

    #[test]
    fn pi_matches_direct_double_sum() {
        // estimated = truth · G⁻¹, so pinv(estimated) · truth = G
        let g =
            Matrix::from_row_major(3, 3, &[1.0, 0.2, 0.0, 0.1, 2.0, 0.3, 0.0, 0.5, 1.0]).unwrap();
        let truth = random_matrix(6, 3, 7);
        let ginv = Matrix::from_nalgebra(&g.to_nalgebra().try_inverse().unwrap());
        let est = truth.matmul(&ginv);
        let rows = (1.2 / 1.0 - 1.0) + (2.4 / 2.0 - 1.0) + (1.5 / 1.0 - 1.0);
        let cols = (1.1 / 1.0 - 1.0) + (2.7 / 2.0 - 1.0) + (1.3 / 1.0 - 1.0);
        let want = (rows + cols) / 12.0;
        assert!((performance_index(&est, &truth).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn pi_errors() {
        let m = random_matrix(5, 1, 8);
        assert!(matches!(
            performance_index(&m, &m),
            Err(Error::Undefined(_))
        ));
        let mut d = random_matrix(5, 3, 9);
        d.col_mut(1).iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            performance_index(&d, &random_matrix(5, 3, 10)),
            Err(Error::RankDeficient(_))
        ));
        assert!(performance_index(&random_matrix(5, 3, 1), &random_matrix(4, 3, 1)).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = vec![random_tensor(vec![4, 4], 11)];
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), PSNR_CAP_DB);
        let z = vec![DenseTensor::zeros(vec![3, 3]).unwrap()];
        let f = vec![DenseTensor::new(vec![3, 3], vec![255.0; 9]).unwrap()];
        assert!(psnr(&z, &f, 255.0).unwrap().abs() < 1e-12);
        let b = vec![random_tensor(vec![4, 4], 12)];
        let mse: f64 = a[0]
            .as_slice()
            .iter()
            .zip(b[0].as_slice())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / 16.0;
        assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-10);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_power() {
        let clean = vec![DenseTensor::new(vec![20, 20, 5], vec![0.5; 2000]).unwrap()];
        let values: Vec<f64> = [40.0, 30.0, 20.0, 10.0, 5.0]
            .iter()
            .map(|&snr| {
                let noisy = add_noise(&clean[0], snr, NoiseKind::Gaussian, 3).unwrap();
                psnr(&clean, &[noisy], 1.0).unwrap()
            })
            .collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    }

    #[test]
    fn mcc_cases() {
        let t: Vec<Vec<f64>> = (0..4)
            .map(|d| (0..6).map(|i| ((i * (d + 2)) % 7) as f64).collect())
            .collect();
        let cands: Vec<Matrix> = t
            .iter()
            .enumerate()
            .map(|(d, tv)| {
                Matrix::from_fn(6, 3, |i, j| {
                    if j == 1 {
                        2.0 * tv[i] + 1.0
                    } else {
                        ((i + j + d) % 3) as f64
                    }
                })
            })
            .collect();
        assert!((mcc(&t, &cands).unwrap() - 1.0).abs() < 1e-12);

        // brute force over components
        let rand_c: Vec<Matrix> = (0..4).map(|d| random_matrix(6, 5, 20 + d)).collect();
        let mut best = f64::NEG_INFINITY;
        for j in 0..5 {
            let mut p = 1.0;
            for d in 0..4 {
                p *= pearson(&t[d], rand_c[d].col(j));
            }
            best = best.max(p);
        }
        let got = mcc(&t, &rand_c).unwrap();
        assert_eq!(got, best);
        assert!((-1.0..=1.0).contains(&got));
        assert!(mcc(&t[..3], &rand_c).is_err());
    }

    #[test]
    fn mcc_uncorrelated_is_not_positive() {
        let t: Vec<Vec<f64>> = vec![vec![1.0, -1.0, 1.0, -1.0]; 4];
        let c: Vec<Matrix> = (0..4)
            .map(|d| {
                let cols = if d == 0 {
                    vec![vec![1.0, 1.0, -1.0, -1.0], vec![1.0, -1.0, -1.0, 1.0]]
                } else {
                    vec![vec![1.0, -1.0, 1.0, -1.0]; 2]
                };
                Matrix::from_columns(4, &cols).unwrap()
            })
            .collect();
        assert!(mcc(&t, &c).unwrap() <= 0.0);
    }

    #[test]
    fn zero_variance_correlation_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn noise_formula_and_empirical_snr() {
        assert!((noise_std(1.0, 20.0).powi(2) - 0.01).abs() < 1e-15);
        // large offset keeps clipping inactive
        let t = DenseTensor::new(vec![1000, 1000], vec![10.0; 1_000_000]).unwrap();
        let noisy = add_noise(&t, 20.0, NoiseKind::Gaussian, 1).unwrap();
        let noise_power: f64 = noisy
            .as_slice()
            .iter()
            .map(|v| (v - 10.0).powi(2))
            .sum::<f64>()
            / 1e6;
        let snr = 10.0 * (100.0 / noise_power).log10();
        assert!((snr - 20.0).abs() < 0.5, "{snr}");
        assert!(noisy.is_nonnegative());
    }

    #[test]
    fn noise_edge_cases() {
        let t = random_tensor(vec![5, 5, 5], 2);
        assert_eq!(
            add_noise(&t, f64::INFINITY, NoiseKind::Gaussian, 0).unwrap(),
            t
        );
        let sp = NoiseKind::SaltPepper {
            density: 0.0,
            peak: 1.0,
        };
        assert_eq!(add_noise(&t, 0.0, sp, 0).unwrap(), t);
        let sp = NoiseKind::SaltPepper {
            density: 0.5,
            peak: 7.0,
        };
        let n = add_noise(&t, 0.0, sp, 4).unwrap();
        let changed = n
            .as_slice()
            .iter()
            .filter(|&&v| v == 0.0 || v == 7.0)
            .count();
        assert!(changed > 30 && changed < 95, "{changed}");
        assert!(add_noise(
            &t,
            0.0,
            NoiseKind::SaltPepper {
                density: 1.5,
                peak: 1.0
            },
            0
        )
        .is_err());
        let a = add_noise(&t, 10.0, NoiseKind::Gaussian, 9).unwrap();
        let b = add_noise(&t, 10.0, NoiseKind::Gaussian, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evr_rank() {
        let m = Matrix::from_fn(6, 4, |i, j| if i == j && i < 3 { 2.0 } else { 0.0 });
        assert_eq!(estimate_rank_evr(&m, 0.99).unwrap(), 3);
        assert_eq!(estimate_rank_evr(&Matrix::identity(5), 0.2).unwrap(), 1);
        assert_eq!(estimate_rank_evr(&Matrix::zeros(3, 3), 0.5).unwrap(), 0);
        assert!(estimate_rank_evr(&m, 0.0).is_err());
        assert!(estimate_rank_evr(&m, 1.5).is_err());
    }

    #[test]
    fn evr_matches_svd_oracle() {
        let a = random_matrix(12, 3, 30);
        let b = random_matrix(3, 9, 31);
        let noise = random_matrix(12, 9, 32).scaled(0.01);
        let m = a.matmul(&b).add(&noise);
        let sv = m.to_nalgebra().singular_values();
        let mut s2: Vec<f64> = sv.iter().map(|s| s * s).collect();
        s2.sort_by(|x, y| y.total_cmp(x));
        let total: f64 = s2.iter().sum();
        for threshold in [0.5, 0.9, 0.99, 0.9999] {
            let mut acc = 0.0;
            let mut want = 0;
            for (i, v) in s2.iter().enumerate() {
                acc += v;
                if acc >= threshold * total {
                    want = i + 1;
                    break;
                }
            }
            assert_eq!(
                estimate_rank_evr(&m, threshold).unwrap(),
                want,
                "{threshold}"
            );
            assert_eq!(estimate_rank_evr(&m.transpose(), threshold).unwrap(), want);
        }
    }

    #[test]
    fn coupled_count() {
        let a = random_matrix(50, 5, 40);
        assert_eq!(estimate_coupled_count(&a, &a, 0.8).unwrap(), 5);
        let b = random_matrix(50, 5, 41);
        let mixed = Matrix::hstack(&a.columns(0, 3), &b.columns(0, 2));
        assert_eq!(estimate_coupled_count(&a, &mixed, 0.8).unwrap(), 3);
        let mut hits = 0;
        for seed in 0..20 {
            let x = random_matrix(200, 4, 100 + seed);
            let y = random_matrix(200, 4, 200 + seed);
            hits += estimate_coupled_count(&x, &y, 0.8).unwrap();
        }
        assert_eq!(hits, 0);
        assert!(estimate_coupled_count(&a, &random_matrix(3, 2, 0), 0.8).is_err());
    }

    #[test]
    fn report_roundtrip() {
        let r = MetricReport {
            rel_err: 0.125,
            ten_fit: 0.875,
            obj_fun: 3.5,
            pi_per_mode: vec![0.01, 0.02, 0.03],
            elapsed_seconds: 1.5,
            psnr: Some(21.0),
            mcc: None,
        };
        let back = MetricReport::from_kv(&r.to_kv()).unwrap();
        assert_eq!(back, r);
        assert!((r.pi_mean() - 0.02).abs() < 1e-15);
        let header = MetricReport::csv_header(3);
        assert_eq!(header.split(',').count(), r.to_csv_row().split(',').count());
        assert!(MetricReport::from_kv("relerr 1").is_err());
    }
}
