//! Data-driven choice of the tuning parameter by minimizing an estimated
//! asymptotic MSE around a pilot estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::check_lambda;
use crate::error::{Error, Result};
use crate::estimator::{fit_mdpde, minimize_dpd, omega_matrix, FitOptions, Minimum};
use crate::linalg::{add_kron_outer, symmetric_inverse, symmetrize};
use crate::model::{probabilities_unchecked, Dataset, ParameterVector};

#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    pub pilot_lambda: f64,
    pub grid: Vec<f64>,
    pub fit: FitOptions,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            pilot_lambda: 0.3,
            grid: lambda_grid(0.0, 0.01, 1.0).expect("valid default grid"),
            fit: FitOptions::default(),
        }
    }
}

impl TuningConfig {
    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.grid = grid;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if self.grid.iter().any(|l| !(0.0..=1.0).contains(l)) || !(0.0..=1.0).contains(&self.pilot_lambda) {
            return Err(Error::InvalidArgument(
                "lambda grid and pilot must lie in [0, 1]".into(),
            ));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// `start, start + step, ..., end` with the endpoints included and the
/// values rounded to ten decimals.
pub fn lambda_grid(start: f64, step: f64, end: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid grid {start}:{step}:{end}"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub lambda: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub lambda: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningTrace {
    pub pilot_lambda: f64,
    pub pilot: ParameterVector,
    pub pilot_converged: bool,
    pub records: Vec<TuningRecord>,
    pub skipped: Vec<SkippedPoint>,
    pub lambda_opt: f64,
    pub beta_opt: ParameterVector,
}

/// `V̂_{N,λ} = Ω_{N,λ}(β̂_λ)`.
pub fn model_robust_v_hat(data: &Dataset, beta_hat: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    omega_matrix(data, beta_hat, lambda)
}

/// Observed-information estimate `Ĵ = -(1/N) ∂u_λ/∂βᵀ` at `β̂`:
/// `(λ+1)Ψ - (1/N)Σ Δ(π*)(Σ_j π_j^{λ+1}) ⊗ xxᵀ + (1/N)Σ {Δ(π*) ⊗ xxᵀ - λ u uᵀ} f^λ`
/// with `u = (y* - π*) ⊗ x` and `f` the probability of the observed
/// category. Grouped rows contribute once per trial.
pub fn model_robust_j_hat(data: &Dataset, beta_hat: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    if data.dims() != beta_hat.dims() {
        return Err(Error::mismatch("parameter vector vs dataset", data.dims().nu(), beta_hat.dims().nu()));
    }
    let dims = data.dims();
    let d = dims.d();
    let total = data.total_trials();
    let mut j_hat = DMatrix::zeros(dims.nu(), dims.nu());
    for row in data.rows() {
        let x = row.x.as_slice();
        let pi = probabilities_unchecked(x, beta_hat);
        let n = row.y.trials();
        let s: f64 = pi.iter().map(|p| p.powf(lambda + 1.0)).sum();
        let a: Vec<f64> = pi.iter().map(|p| p.powf(lambda + 1.0)).collect();
        let star = DVector::from_column_slice(&pi[..d]);
        let delta_star = DMatrix::from_diagonal(&star) - &star * star.transpose();
        // (λ+1) Ψ_i, from the projected full-vector form.
        let psi_i = DMatrix::from_fn(d, d, |j, l| {
            (if j == l { a[j] } else { 0.0 }) - a[j] * pi[l] - pi[j] * a[l] + s * pi[j] * pi[l]
        });
        add_kron_outer(&mut j_hat, &psi_i, x, (lambda + 1.0) * n / total);
        add_kron_outer(&mut j_hat, &delta_star, x, -s * n / total);
        for (m, &count) in row.y.as_slice().iter().enumerate() {
            if count == 0.0 {
                continue;
            }
            let f_l = if lambda == 0.0 { 1.0 } else { pi[m].powf(lambda) };
            let w = count * f_l / total;
            add_kron_outer(&mut j_hat, &delta_star, x, w);
            if lambda != 0.0 {
                let r = DMatrix::from_fn(d, d, |j, l| {
                    let uj = if j == m { 1.0 } else { 0.0 } - pi[j];
                    let ul = if l == m { 1.0 } else { 0.0 } - pi[l];
                    uj * ul
                });
                add_kron_outer(&mut j_hat, &r, x, -lambda * w);
            }
        }
    }
    Ok(symmetrize(&j_hat))
}

/// `(1/N) trace(Ĵ⁻¹ V̂ Ĵ⁻¹)` at `β̂_λ`.
pub fn estimated_variance(data: &Dataset, beta_hat: &ParameterVector, lambda: f64) -> Result<f64> {
    let j = model_robust_j_hat(data, beta_hat, lambda)?;
    let v = model_robust_v_hat(data, beta_hat, lambda)?;
    let inv = symmetric_inverse(&j).map_err(|rcond| Error::SingularInformation { rcond })?;
    Ok((&inv * v * &inv).trace() / data.total_trials())
}

/// Estimated MSE at `λ` relative to a pilot estimate, fitting `β̂_λ` first.
pub fn estimated_mse(data: &Dataset, lambda: f64, pilot: &ParameterVector, opts: &FitOptions) -> Result<TuningRecord> {
    let fit = fit_mdpde(data, lambda, opts)?;
    record_for(data, lambda, &fit.beta_hat, pilot)
}

fn record_for(data: &Dataset, lambda: f64, beta_hat: &ParameterVector, pilot: &ParameterVector) -> Result<TuningRecord> {
    let bias_sq = beta_hat.distance_sq(pilot);
    let variance = estimated_variance(data, beta_hat, lambda)?;
    Ok(TuningRecord {
        lambda,
        bias_sq,
        variance,
        mse: bias_sq + variance,
    })
}

/// Sweeps the grid in ascending order with warm starts, scores each point
/// against the pilot, and returns the minimizer (smallest λ on ties).
pub fn select_lambda(data: &Dataset, cfg: &TuningConfig) -> Result<TuningTrace> {
    cfg.validate()?;
    let mut fits: Vec<Minimum> = Vec::with_capacity(cfg.grid.len());
    let mut opts = cfg.fit.clone();
    for &lambda in &cfg.grid {
        let min = minimize_dpd(data, lambda, &opts)?;
        if min.converged {
            opts.init = Some(min.beta_hat.clone());
        }
        fits.push(min);
    }

    let pilot_fit = match cfg.grid.iter().position(|&l| l == cfg.pilot_lambda) {
        Some(i) => fits[i].clone(),
        None => {
            let nearest = cfg
                .grid
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - cfg.pilot_lambda).abs().total_cmp(&(b.1 - cfg.pilot_lambda).abs()))
                .map(|(i, _)| i)
                .expect("nonempty grid");
            let mut pilot_opts = cfg.fit.clone();
            if fits[nearest].converged {
                pilot_opts.init = Some(fits[nearest].beta_hat.clone());
            }
            minimize_dpd(data, cfg.pilot_lambda, &pilot_opts)?
        }
    };

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for (&lambda, fit) in cfg.grid.iter().zip(&fits) {
        if !fit.converged {
            skipped.push(SkippedPoint {
                lambda,
                reason: "fit did not converge".into(),
            });
            continue;
        }
        match record_for(data, lambda, &fit.beta_hat, &pilot_fit.beta_hat) {
            Ok(rec) if rec.mse.is_finite() => {
                if best.is_none_or(|(m, _)| rec.mse < m) {
                    best = Some((rec.mse, records.len()));
                }
                records.push(rec);
            }
            Ok(_) => skipped.push(SkippedPoint {
                lambda,
                reason: "non-finite estimated MSE".into(),
            }),
            Err(e) => skipped.push(SkippedPoint {
                lambda,
                reason: e.to_string(),
            }),
        }
    }
    let (_, idx) = best.ok_or(Error::TuningFailed)?;
    let lambda_opt = records[idx].lambda;
    let grid_idx = cfg.grid.iter().position(|&l| l == lambda_opt).expect("record from grid");
    Ok(TuningTrace {
        pilot_lambda: cfg.pilot_lambda,
        pilot: pilot_fit.beta_hat,
        pilot_converged: pilot_fit.converged,
        records,
        skipped,
        lambda_opt,
        beta_opt: fits[grid_idx].beta_hat.clone(),
    })
}
