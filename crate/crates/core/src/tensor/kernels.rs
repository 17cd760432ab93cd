use super::{dot, split_dims, DenseTensor, Matrix};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-9;
/// Power-iteration sweep cap for [`spectral_norm`].
pub const SPECTRAL_MAX_SWEEPS: usize = 1000;

fn shared_cols<'a>(ms: impl IntoIterator<Item = &'a Matrix>) -> Result<Option<usize>> {
    let mut r = None;
    for m in ms {
        match r {
            None => r = Some(m.cols()),
            Some(expected) if expected != m.cols() => {
                return Err(Error::ColumnMismatch {
                    expected,
                    found: m.cols(),
                })
            }
            _ => {}
        }
    }
    Ok(r)
}

/// Column-wise Kronecker product of `ms` in the order given: the first
/// matrix's row index varies slowest. Pass factors in mode order `N..1` to get
/// `U^⊙`, whose row index then matches the tensor linearization.
pub fn khatri_rao(ms: &[&Matrix]) -> Result<Matrix> {
    let r = shared_cols(ms.iter().copied())?
        .ok_or_else(|| Error::Shape("khatri_rao of an empty list".into()))?;
    let rows: usize = ms.iter().map(|m| m.rows()).product();
    let mut out = Matrix::zeros(rows, r);
    let mut acc = Vec::with_capacity(rows);
    let mut next = Vec::with_capacity(rows);
    for j in 0..r {
        acc.clear();
        acc.extend_from_slice(ms[0].col(j));
        for m in &ms[1..] {
            next.clear();
            let c = m.col(j);
            for &a in &acc {
                next.extend(c.iter().map(|&b| a * b));
            }
            std::mem::swap(&mut acc, &mut next);
        }
        out.col_mut(j).copy_from_slice(&acc);
    }
    Ok(out)
}

/// Element-wise product of the grams `UᵀU` over `ms`, skipping index `skip`.
/// Equals `(U^⊙)ᵀU^⊙` without forming the Khatri-Rao product.
pub fn hadamard_gram(ms: &[Matrix], skip: Option<usize>) -> Result<Matrix> {
    let r = shared_cols(ms)?.unwrap_or(0);
    let mut out = Matrix::filled(r, r, 1.0);
    for (n, m) in ms.iter().enumerate() {
        if Some(n) != skip {
            out.hadamard_assign(&m.gram());
        }
    }
    Ok(out)
}

/// Element-wise product of the cross grams `left[n]ᵀ right[n]`, skipping
/// index `skip`. With `left == right` this reduces to [`hadamard_gram`].
pub fn hadamard_cross_gram(
    left: &[Matrix],
    right: &[Matrix],
    skip: Option<usize>,
) -> Result<Matrix> {
    if left.len() != right.len() {
        return Err(Error::Shape(format!(
            "cross gram over {} vs {} matrices",
            left.len(),
            right.len()
        )));
    }
    let rl = shared_cols(left)?.unwrap_or(0);
    let rr = shared_cols(right)?.unwrap_or(0);
    let mut out = Matrix::filled(rl, rr, 1.0);
    for (n, (a, b)) in left.iter().zip(right).enumerate() {
        if Some(n) == skip {
            continue;
        }
        if a.rows() != b.rows() {
            return Err(Error::Shape(format!(
                "cross gram at index {n}: {} vs {} rows",
                a.rows(),
                b.rows()
            )));
        }
        out.hadamard_assign(&a.t_matmul(b));
    }
    Ok(out)
}

/// Element-wise product of precomputed grams, skipping `skip`.
pub(crate) fn hadamard_all(grams: &[Matrix], skip: Option<usize>, r: usize) -> Matrix {
    let mut out = Matrix::filled(r, r, 1.0);
    for (n, g) in grams.iter().enumerate() {
        if Some(n) != skip {
            out.hadamard_assign(g);
        }
    }
    out
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from the normalized all-ones vector. Stops once the estimate
/// changes by at most `tol` relative, or after [`SPECTRAL_MAX_SWEEPS`].
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if n == 0 || m.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut restarted = false;
    let mut estimate = 0.0;
    for sweep in 0..SPECTRAL_MAX_SWEEPS {
        let w = m.mat_vec(&v);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            // start vector fell in the null space; retry from the heaviest diagonal axis
            if restarted {
                return Ok(0.0);
            }
            restarted = true;
            let k = (0..n)
                .max_by(|&a, &b| m.get(a, a).total_cmp(&m.get(b, b)))
                .unwrap_or(0);
            v = vec![0.0; n];
            v[k] = 1.0;
            continue;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if sweep > 0 && (norm - estimate).abs() <= tol * norm {
            return Ok(norm);
        }
        estimate = norm;
    }
    Ok(estimate)
}

fn check_factors(t: &DenseTensor, factors: &[Matrix], skip: Option<usize>) -> Result<usize> {
    if factors.len() != t.order() {
        return Err(Error::Shape(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            t.order()
        )));
    }
    let r = shared_cols(
        factors
            .iter()
            .enumerate()
            .filter(|(m, _)| Some(*m) != skip)
            .map(|(_, f)| f),
    )?;
    for (m, f) in factors.iter().enumerate() {
        if Some(m) != skip && f.rows() != t.dims()[m] {
            return Err(Error::Shape(format!(
                "factor {m} has {} rows, mode size is {}",
                f.rows(),
                t.dims()[m]
            )));
        }
    }
    Ok(r.unwrap_or_else(|| factors[0].cols()))
}

/// Matricized tensor times Khatri-Rao product: `M_(n) · U^{⊙₋ₙ}` (an
/// `I_n × R` matrix) computed straight from the linear storage, without
/// unfolding the tensor. `factors[n]` is ignored. Columns are independent
/// and are distributed according to `exec`.
pub fn mttkrp(t: &DenseTensor, factors: &[Matrix], n: usize, exec: Execution) -> Result<Matrix> {
    if n >= t.order() {
        return Err(Error::ModeOutOfRange {
            mode: n,
            order: t.order(),
        });
    }
    let r = check_factors(t, factors, Some(n))?;
    let (left, inner, _) = split_dims(t.dims(), n);
    let left_kr = if n > 0 {
        let ms: Vec<&Matrix> = factors[..n].iter().rev().collect();
        khatri_rao(&ms)?
    } else {
        Matrix::filled(1, r, 1.0)
    };
    let right_kr = if n + 1 < t.order() {
        let ms: Vec<&Matrix> = factors[n + 1..].iter().rev().collect();
        khatri_rao(&ms)?
    } else {
        Matrix::filled(1, r, 1.0)
    };
    let data = t.as_slice();
    let cols = exec.map(r, |j| {
        let lk = left_kr.col(j);
        let rk = right_kr.col(j);
        let mut out = vec![0.0; inner];
        for (ri, &w) in rk.iter().enumerate() {
            let slab = &data[ri * inner * left..(ri + 1) * inner * left];
            if left == 1 {
                let s = w * lk[0];
                for (o, &x) in out.iter_mut().zip(slab) {
                    *o += s * x;
                }
            } else {
                for (o, seg) in out.iter_mut().zip(slab.chunks_exact(left)) {
                    *o += w * dot(seg, lk);
                }
            }
        }
        out
    });
    Matrix::from_columns(inner, &cols)
}

/// `(U^⊙)ᵀ vec(t)`: one entry per rank-one component.
pub fn kr_inner(t: &DenseTensor, factors: &[Matrix], exec: Execution) -> Result<Vec<f64>> {
    let r = check_factors(t, factors, None)?;
    let m = mttkrp(t, factors, 0, exec)?;
    Ok((0..r).map(|j| dot(m.col(j), factors[0].col(j))).collect())
}
