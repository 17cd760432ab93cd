//! Extrapolation schedule and projected proximal steps.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Nesterov sequence `t_0 = 1`, `t_k = ½(1 + √(1 + 4 t²_{k−1}))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Momentum {
    t: f64,
}

impl Default for Momentum {
    fn default() -> Self {
        Self { t: 1.0 }
    }
}

impl Momentum {
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Moves from `t_{k−1}` to `t_k` and returns `ŵ_{k−1} = (t_{k−1} − 1)/t_k`.
    pub fn advance(&mut self) -> f64 {
        let prev = self.t;
        self.t = 0.5 * (1.0 + (1.0 + 4.0 * prev * prev).sqrt());
        (prev - 1.0) / self.t
    }
}

/// `min(ŵ, δ_w √(L_{k−2}/L_{k−1}))`; zero when the current constant vanishes
/// or there is no previous constant yet.
pub fn extrapolation_weight(w_hat: f64, delta_w: f64, lip_prev: Option<f64>, lip: f64) -> f64 {
    match lip_prev {
        Some(prev) if lip > 0.0 && prev >= 0.0 => w_hat.min(delta_w * (prev / lip).sqrt()),
        _ => 0.0,
    }
}

/// `x + w (x − x_prev)`.
pub fn extrapolate(x: &[f64], x_prev: &[f64], w: f64) -> Vec<f64> {
    if w == 0.0 {
        return x.to_vec();
    }
    x.iter().zip(x_prev).map(|(a, b)| a + w * (a - b)).collect()
}

pub fn extrapolate_matrix(x: &Matrix, x_prev: &Matrix, w: f64) -> Matrix {
    if w == 0.0 {
        return x.clone();
    }
    x.zip_with(x_prev, |a, b| a + w * (a - b))
}

/// Projected step `max(0, λ̂ − g/L)`. A zero constant is only accepted with
/// a zero gradient, in which case the point is returned (projected).
pub fn update_core(weights_hat: &[f64], grad: &[f64], lipschitz: f64) -> Result<Vec<f64>> {
    if lipschitz > 0.0 {
        return Ok(weights_hat
            .iter()
            .zip(grad)
            .map(|(w, g)| (w - g / lipschitz).max(0.0))
            .collect());
    }
    if grad.iter().any(|&g| g != 0.0) {
        return Err(Error::DegenerateLipschitz("core weights".into()));
    }
    Ok(weights_hat.iter().map(|w| w.max(0.0)).collect())
}

fn project_step(u_hat: &[f64], grad: &[f64], lipschitz: f64, what: &str) -> Result<Vec<f64>> {
    if lipschitz > 0.0 {
        return Ok(u_hat
            .iter()
            .zip(grad)
            .map(|(u, g)| (u - g / lipschitz).max(0.0))
            .collect());
    }
    if grad.iter().any(|&g| g != 0.0) {
        return Err(Error::DegenerateLipschitz(what.into()));
    }
    Ok(u_hat.iter().map(|u| u.max(0.0)).collect())
}

/// One block's ingredients for a mode-`n` factor update.
#[derive(Clone, Copy, Debug)]
pub struct FactorStep<'a> {
    /// Extrapolated full factor `[Û_C | Û_I]`.
    pub u_hat: &'a Matrix,
    pub grad: &'a Matrix,
    pub lipschitz: f64,
}

/// Projected update of one mode across all blocks.
///
/// The leading `coupled` columns are shared: they step along the summed
/// gradient slice with the summed Lipschitz constant. The remaining columns of
/// each block step on their own. Returns the new shared part and the new
/// individual part of every block.
pub fn update_factors(steps: &[FactorStep], coupled: usize) -> Result<(Matrix, Vec<Matrix>)> {
    let first = steps
        .first()
        .ok_or_else(|| Error::Shape("factor update over zero blocks".into()))?;
    let rows = first.u_hat.rows();
    let common = if coupled == 0 {
        Matrix::zeros(0, 0)
    } else {
        let mut grad_sum = first.grad.columns(0, coupled);
        let mut lip_sum = first.lipschitz;
        for st in &steps[1..] {
            if st.u_hat.rows() != rows {
                return Err(Error::Coupling(format!(
                    "shared factor needs equal row counts, got {rows} and {}",
                    st.u_hat.rows()
                )));
            }
            grad_sum = grad_sum.add(&st.grad.columns(0, coupled));
            lip_sum += st.lipschitz;
        }
        let u_c = first.u_hat.columns(0, coupled);
        let data = project_step(
            u_c.as_slice(),
            grad_sum.as_slice(),
            lip_sum,
            "shared factor columns",
        )?;
        Matrix::from_col_major(rows, coupled, data)?
    };
    let individual = steps
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let r = st.u_hat.cols();
            let u_i = st.u_hat.columns(coupled, r);
            let g_i = st.grad.columns(coupled, r);
            let data = project_step(
                u_i.as_slice(),
                g_i.as_slice(),
                st.lipschitz,
                &format!("individual columns of block {s}"),
            )?;
            Matrix::from_col_major(st.u_hat.rows(), r - coupled, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((common, individual))
}
