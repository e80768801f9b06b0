//! Density power divergence objective, its Kullback-Leibler limit at
//! `λ = 0`, and the analytic estimating function.
//!
//! For grouped rows (`n_i > 1`) two conventions exist. With
//! `grouped_scaling = true` the row kernel is evaluated on expected counts,
//! `Σ_j {(n π_j)^{1+λ} - (1 + 1/λ) y_j (n π_j)^λ}`. With
//! `grouped_scaling = false` each row counts as `n_i` independent trials,
//! `Σ_j {n π_j^{1+λ} - (1 + 1/λ) y_j π_j^λ}`, which matches the exploded data
//! exactly. The two agree for `n_i = 1` and share the argmin at `λ = 0`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;
use crate::model::{probabilities_unchecked, Dataset, ParameterVector, ProbabilityVector, ResponseVector};

pub const MAX_LAMBDA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpdConfig {
    pub lambda: f64,
    pub grouped_scaling: bool,
}

impl DpdConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            lambda,
            grouped_scaling: true,
        })
    }

    pub fn with_grouped_scaling(mut self, grouped_scaling: bool) -> Self {
        self.grouped_scaling = grouped_scaling;
        self
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=MAX_LAMBDA).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "tuning parameter must lie in [0, {MAX_LAMBDA}], got {lambda}"
        )));
    }
    Ok(())
}

fn check_lengths(y: &ResponseVector, pi: &ProbabilityVector) -> Result<()> {
    if y.len() != pi.len() {
        return Err(Error::mismatch("response", pi.len(), y.len()));
    }
    Ok(())
}

/// Per-row DPD kernel for `λ > 0`.
pub fn dpd_row(y: &ResponseVector, pi: &ProbabilityVector, cfg: &DpdConfig) -> Result<f64> {
    check_lengths(y, pi)?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::InvalidArgument(
            "dpd_row needs lambda > 0; use kl_row at lambda = 0".into(),
        ));
    }
    Ok(dpd_row_raw(y.as_slice(), pi.as_slice(), cfg.lambda, cfg.grouped_scaling))
}

fn dpd_row_raw(y: &[f64], pi: &[f64], lambda: f64, grouped_scaling: bool) -> f64 {
    let n: f64 = y.iter().sum();
    let c = 1.0 + 1.0 / lambda;
    if grouped_scaling {
        y.iter()
            .zip(pi)
            .map(|(&yj, &pj)| {
                let m = n * pj;
                m.powf(1.0 + lambda) - c * yj * m.powf(lambda)
            })
            .sum()
    } else {
        y.iter()
            .zip(pi)
            .map(|(&yj, &pj)| {
                let pl = pj.powf(lambda);
                n * pj * pl - c * yj * pl
            })
            .sum()
    }
}

/// Per-row Kullback-Leibler term `Σ_{y_j > 0} y_j log(y_j / (n π_j))`.
pub fn kl_row(y: &ResponseVector, pi: &ProbabilityVector) -> Result<f64> {
    check_lengths(y, pi)?;
    Ok(kl_row_raw(y.as_slice(), pi.as_slice()))
}

fn kl_row_raw(y: &[f64], pi: &[f64]) -> f64 {
    let n: f64 = y.iter().sum();
    y.iter()
        .zip(pi)
        .filter(|(&yj, _)| yj > 0.0)
        .map(|(&yj, &pj)| yj * (yj / (n * pj)).ln())
        .sum()
}

fn check_data(data: &Dataset, beta: &ParameterVector) -> Result<()> {
    if data.dims() != beta.dims() {
        return Err(Error::mismatch(
            "parameter vector vs dataset",
            data.dims().nu(),
            beta.dims().nu(),
        ));
    }
    Ok(())
}

/// Unnormalized objective `Σ_i d_λ(y_i, π_i(β))` (KL terms at `λ = 0`).
pub fn dpd_objective(data: &Dataset, beta: &ParameterVector, cfg: &DpdConfig) -> Result<f64> {
    check_data(data, beta)?;
    check_lambda(cfg.lambda)?;
    Ok(objective_unchecked(data, beta, cfg))
}

pub(crate) fn objective_unchecked(data: &Dataset, beta: &ParameterVector, cfg: &DpdConfig) -> f64 {
    data.rows()
        .iter()
        .map(|row| {
            let pi = probabilities_unchecked(row.x.as_slice(), beta);
            if cfg.lambda == 0.0 {
                kl_row_raw(row.y.as_slice(), &pi)
            } else {
                dpd_row_raw(row.y.as_slice(), &pi, cfg.lambda, cfg.grouped_scaling)
            }
        })
        .collect::<CompensatedSum>()
        .value()
}

/// The objective with the `1/N^{λ+1}` normalizer applied, for reporting.
pub fn reported_divergence(data: &Dataset, beta: &ParameterVector, cfg: &DpdConfig) -> Result<f64> {
    let raw = dpd_objective(data, beta, cfg)?;
    Ok(raw / (data.len() as f64).powf(cfg.lambda + 1.0))
}

/// Reduced residual kernel `(I_d, 0_d) Δ(π) diag^{λ-1}(π) (y - n π)` (times
/// `n^λ` under grouped scaling), computed without dividing by `π`.
pub fn residual_kernel(pi: &[f64], y: &[f64], lambda: f64, grouped_scaling: bool) -> Vec<f64> {
    let n: f64 = y.iter().sum();
    let scale = if grouped_scaling && lambda != 0.0 {
        n.powf(lambda)
    } else {
        1.0
    };
    let w: Vec<f64> = pi
        .iter()
        .zip(y)
        .map(|(&pj, &yj)| {
            let pl = if lambda == 0.0 { 1.0 } else { pj.powf(lambda) };
            pl * (yj - n * pj)
        })
        .collect();
    let total: f64 = w.iter().sum();
    let d = pi.len() - 1;
    (0..d).map(|j| scale * (w[j] - pi[j] * total)).collect()
}

/// `u_λ(β) = Σ_i [(I_d, 0_d) Δ(π_i) diag^{λ-1}(π_i) (y_i - π_i)] ⊗ x_i`.
///
/// The gradient of [`dpd_objective`] equals `-(λ + 1) u_λ(β)`.
pub fn estimating_function(data: &Dataset, beta: &ParameterVector, cfg: &DpdConfig) -> Result<DVector<f64>> {
    check_data(data, beta)?;
    check_lambda(cfg.lambda)?;
    Ok(estimating_unchecked(data, beta, cfg))
}

pub(crate) fn estimating_unchecked(data: &Dataset, beta: &ParameterVector, cfg: &DpdConfig) -> DVector<f64> {
    let dims = data.dims();
    let p = dims.row_len();
    let mut u = DVector::zeros(dims.nu());
    for row in data.rows() {
        let x = row.x.as_slice();
        let pi = probabilities_unchecked(x, beta);
        let r = residual_kernel(&pi, row.y.as_slice(), cfg.lambda, cfg.grouped_scaling);
        for (j, &rj) in r.iter().enumerate() {
            for (v, &xv) in x.iter().enumerate() {
                u[j * p + v] += rj * xv;
            }
        }
    }
    u
}
