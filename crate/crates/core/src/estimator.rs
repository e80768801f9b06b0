//! Fitting the MDPDE and the finite-sample matrices of its asymptotic
//! distribution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{check_lambda, estimating_unchecked, objective_unchecked, DpdConfig};
use crate::error::{Error, Result};
use crate::linalg::{add_kron_outer, symmetric_inverse, symmetrize};
use crate::model::{probabilities_unchecked, Dataset, ParameterVector};
use crate::optimize::{minimize, BfgsOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Starting point; zero when absent.
    pub init: Option<ParameterVector>,
    pub max_iter: usize,
    /// Convergence threshold on `‖u_λ(β) / N‖∞`.
    pub grad_tol: f64,
    pub step_tol: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    pub grouped_scaling: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            armijo_c1: 1e-4,
            shrink: 0.5,
            grouped_scaling: true,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.step_tol, self.armijo_c1, self.shrink];
        if positive.iter().any(|v| !(*v > 0.0)) || self.shrink >= 1.0 || self.armijo_c1 >= 1.0 {
            return Err(Error::InvalidArgument(
                "fit tolerances must be positive, with c1 and shrink in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn with_init(mut self, init: ParameterVector) -> Self {
        self.init = Some(init);
        self
    }
}

/// Point estimate without the covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub beta_hat: ParameterVector,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: ParameterVector,
    pub lambda: f64,
    /// Unnormalized objective at the estimate.
    pub objective: f64,
    /// Objective divided by `N^{λ+1}`.
    pub divergence: f64,
    pub converged: bool,
    pub iterations: usize,
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
    pub se: Vec<f64>,
    pub n_obs: usize,
    pub total_trials: f64,
    pub grouped_scaling: bool,
}

impl FitResult {
    /// `β̂ / se` per coefficient.
    pub fn z_values(&self) -> Vec<f64> {
        self.beta_hat
            .as_slice()
            .iter()
            .zip(&self.se)
            .map(|(b, s)| b / s)
            .collect()
    }

    /// Estimated covariance of `β̂`, `M / N`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sandwich / self.total_trials
    }
}

fn check_fit_inputs(data: &Dataset, lambda: f64, opts: &FitOptions) -> Result<()> {
    check_lambda(lambda)?;
    opts.validate()?;
    if let Some(init) = &opts.init {
        if init.dims() != data.dims() {
            return Err(Error::mismatch("initial parameter", data.dims().nu(), init.dims().nu()));
        }
    }
    let collinear = data.collinear_columns();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }
    Ok(())
}

/// Minimizes the DPD objective without building the covariance matrices.
pub fn minimize_dpd(data: &Dataset, lambda: f64, opts: &FitOptions) -> Result<Minimum> {
    check_fit_inputs(data, lambda, opts)?;
    Ok(minimize_checked(data, lambda, opts))
}

fn minimize_checked(data: &Dataset, lambda: f64, opts: &FitOptions) -> Minimum {
    let dims = data.dims();
    let cfg = DpdConfig {
        lambda,
        grouped_scaling: opts.grouped_scaling,
    };
    let total = data.total_trials();
    let init = opts.init.clone().unwrap_or_else(|| ParameterVector::zeros(dims));
    let h0 = psi_unchecked(data, &init, lambda, false)
        .ok()
        .and_then(|psi| symmetric_inverse(&(psi * (lambda + 1.0))).ok());

    let eval = |b: &DVector<f64>| {
        let beta = ParameterVector::from_dvector(dims, b.clone());
        let f = objective_unchecked(data, &beta, &cfg) / total;
        let g = estimating_unchecked(data, &beta, &cfg) * (-(lambda + 1.0) / total);
        (f, g)
    };
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        step_tol: opts.step_tol,
        armijo_c1: opts.armijo_c1,
        shrink: opts.shrink,
        gradient_scale: 1.0 / (lambda + 1.0),
        ..BfgsOptions::default()
    };
    let out = minimize(eval, init.values().clone(), h0, &bfgs);
    let converged = out.converged();
    Minimum {
        beta_hat: ParameterVector::from_dvector(dims, out.x),
        objective: out.value * total,
        converged,
        iterations: out.iterations,
    }
}

/// Fits the MDPDE with tuning parameter `lambda` and evaluates `Ψ`, `Ω` and
/// the sandwich covariance at the estimate.
///
/// Non-convergence is reported through `converged = false`; a singular `Ψ`
/// at the estimate is an error.
pub fn fit_mdpde(data: &Dataset, lambda: f64, opts: &FitOptions) -> Result<FitResult> {
    check_fit_inputs(data, lambda, opts)?;
    let min = minimize_checked(data, lambda, opts);
    assemble(data, lambda, opts.grouped_scaling, min)
}

fn assemble(data: &Dataset, lambda: f64, grouped_scaling: bool, min: Minimum) -> Result<FitResult> {
    let (psi, omega) = information_matrices(data, &min.beta_hat, lambda)?;
    let sandwich = sandwich_covariance(&psi, &omega)?;
    let total = data.total_trials();
    let se = (0..sandwich.nrows())
        .map(|i| (sandwich[(i, i)].max(0.0) / total).sqrt())
        .collect();
    Ok(FitResult {
        divergence: min.objective / (data.len() as f64).powf(lambda + 1.0),
        objective: min.objective,
        beta_hat: min.beta_hat,
        lambda,
        converged: min.converged,
        iterations: min.iterations,
        psi,
        omega,
        sandwich,
        se,
        n_obs: data.len(),
        total_trials: total,
        grouped_scaling,
    })
}

/// Fits an ascending λ path, warm-starting each fit at the previous
/// estimate. Entries are returned in the order of `lambdas`.
pub fn fit_path(data: &Dataset, lambdas: &[f64], opts: &FitOptions) -> Result<Vec<Result<FitResult>>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    check_fit_inputs(data, lambdas.first().copied().unwrap_or(0.0), opts)?;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
    let mut results: Vec<Option<Result<FitResult>>> = (0..lambdas.len()).map(|_| None).collect();
    let mut current = opts.clone();
    for idx in order {
        let min = minimize_checked(data, lambdas[idx], &current);
        if min.converged {
            current.init = Some(min.beta_hat.clone());
        }
        results[idx] = Some(assemble(data, lambdas[idx], opts.grouped_scaling, min));
    }
    Ok(results.into_iter().map(|r| r.expect("every index visited")).collect())
}

fn check_beta(data: &Dataset, beta: &ParameterVector) -> Result<()> {
    if data.dims() != beta.dims() {
        return Err(Error::mismatch("parameter vector vs dataset", data.dims().nu(), beta.dims().nu()));
    }
    Ok(())
}

/// `Δ(π) diag^{λ-1}(π)` on the full probability vector, formed entrywise so
/// that tiny probabilities never overflow.
fn delta_times_power(pi: &[f64], lambda: f64) -> DMatrix<f64> {
    let m = pi.len();
    let pl: Vec<f64> = pi.iter().map(|&p| p.powf(lambda)).collect();
    DMatrix::from_fn(m, m, |j, l| if j == l { pl[j] } else { 0.0 } - pi[j] * pl[l])
}

fn delta(pi: &[f64]) -> DMatrix<f64> {
    let m = pi.len();
    DMatrix::from_fn(m, m, |j, l| if j == l { pi[j] } else { 0.0 } - pi[j] * pi[l])
}

/// Per-row `d × d` blocks of `Ψ` and `Ω` from the matrix-product form.
fn compact_blocks(pi: &[f64], lambda: f64, want_omega: bool) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let d = pi.len() - 1;
    let e = delta_times_power(pi, lambda);
    let del = delta(pi);
    let psi_full = &e * &del;
    let psi = psi_full.view((0, 0), (d, d)).into_owned();
    let omega = want_omega.then(|| {
        let full = &psi_full * e.transpose();
        full.view((0, 0), (d, d)).into_owned()
    });
    (psi, omega)
}

/// Per-row blocks by enumerating the unit-trial sample space.
fn expanded_blocks(pi: &[f64], lambda: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = pi.len() - 1;
    let mut psi = DMatrix::zeros(d, d);
    let mut second = DMatrix::zeros(d, d);
    let mut xi = DVector::zeros(d);
    for (j, &f) in pi.iter().enumerate() {
        let u = DVector::from_fn(d, |l, _| if l == j { 1.0 } else { 0.0 } - pi[l]);
        let uu = &u * u.transpose();
        psi += &uu * f.powf(lambda + 1.0);
        second += uu * f.powf(1.0 + 2.0 * lambda);
        xi += u * f.powf(lambda + 1.0);
    }
    let omega = second - &xi * xi.transpose();
    (psi, omega)
}

fn accumulate<F>(data: &Dataset, beta: &ParameterVector, mut block: F, count: usize) -> Vec<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Vec<DMatrix<f64>>,
{
    let nu = data.dims().nu();
    let total = data.total_trials();
    let mut out = vec![DMatrix::zeros(nu, nu); count];
    for row in data.rows() {
        let x = row.x.as_slice();
        let pi = probabilities_unchecked(x, beta);
        let w = row.y.trials() / total;
        for (target, a) in out.iter_mut().zip(block(&pi)) {
            add_kron_outer(target, &a, x, w);
        }
    }
    out.into_iter().map(|m| symmetrize(&m)).collect()
}

fn psi_unchecked(data: &Dataset, beta: &ParameterVector, lambda: f64, expanded: bool) -> Result<DMatrix<f64>> {
    let mut m = if expanded {
        accumulate(data, beta, |pi| vec![expanded_blocks(pi, lambda).0], 1)
    } else {
        accumulate(data, beta, |pi| vec![compact_blocks(pi, lambda, false).0], 1)
    };
    Ok(m.remove(0))
}

/// `Ψ_{N,λ}(β)`, weighted by trials and normalized by the total trial count.
pub fn psi_matrix(data: &Dataset, beta: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    check_beta(data, beta)?;
    check_lambda(lambda)?;
    psi_unchecked(data, beta, lambda, false)
}

/// `Ω_{N,λ}(β)`.
pub fn omega_matrix(data: &Dataset, beta: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(information_matrices(data, beta, lambda)?.1)
}

/// `(Ψ_{N,λ}(β), Ω_{N,λ}(β))` in one pass over the rows.
pub fn information_matrices(data: &Dataset, beta: &ParameterVector, lambda: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_beta(data, beta)?;
    check_lambda(lambda)?;
    let mut m = accumulate(
        data,
        beta,
        |pi| {
            let (psi, omega) = compact_blocks(pi, lambda, true);
            vec![psi, omega.expect("requested")]
        },
        2,
    );
    let omega = m.pop().expect("two matrices");
    let psi = m.pop().expect("two matrices");
    Ok((psi, omega))
}

/// `Ψ_{N,λ}` from the sum over the sample space, `Σ_y u uᵀ f^{λ+1}`.
pub fn psi_matrix_expanded(data: &Dataset, beta: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    check_beta(data, beta)?;
    check_lambda(lambda)?;
    psi_unchecked(data, beta, lambda, true)
}

/// `Ω_{N,λ}` as `Σ_y u uᵀ f^{1+2λ} - ξ ξᵀ` with `ξ = Σ_y u f^{λ+1}`.
pub fn omega_matrix_expanded(data: &Dataset, beta: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    check_beta(data, beta)?;
    check_lambda(lambda)?;
    let mut m = accumulate(data, beta, |pi| vec![expanded_blocks(pi, lambda).1], 1);
    Ok(m.remove(0))
}

/// `M = Ψ⁻¹ Ω Ψ⁻¹`, symmetrized.
pub fn sandwich_covariance(psi: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if psi.shape() != omega.shape() || !psi.is_square() {
        return Err(Error::mismatch("sandwich inputs", psi.nrows(), omega.nrows()));
    }
    let inv = symmetric_inverse(psi).map_err(|rcond| Error::SingularInformation { rcond })?;
    Ok(symmetrize(&(&inv * omega * &inv)))
}
