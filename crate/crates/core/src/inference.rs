//! Wald-type tests for linear hypotheses `Lᵀβ = h`, their asymptotic power,
//! the sample size needed for a target power, and power under contiguous
//! alternatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{chisq_quantile, chisq_sf, noncentral_chisq_sf, normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::estimator::{information_matrices, sandwich_covariance, FitResult};
use crate::linalg::{symmetric_inverse, symmetrize};
use crate::model::{Dataset, ParameterVector};

/// Significance levels reported in [`WaldResult::reject_at`].
pub const DEFAULT_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

/// `H₀: Lᵀβ = h` with `L` of shape `ν × r` and full column rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    l: DMatrix<f64>,
    h: DVector<f64>,
}

impl LinearHypothesis {
    pub fn new(l: DMatrix<f64>, h: Vec<f64>) -> Result<Self> {
        if l.ncols() != h.len() {
            return Err(Error::mismatch("hypothesis right-hand side", l.ncols(), h.len()));
        }
        if l.ncols() == 0 || l.ncols() > l.nrows() {
            return Err(Error::InvalidArgument(format!(
                "contrast matrix must have 1..={} columns, got {}",
                l.nrows(),
                l.ncols()
            )));
        }
        if l.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("hypothesis has non-finite entries".into()));
        }
        let sv = l.clone().svd(false, false).singular_values;
        let max = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * max).count();
        if max <= 0.0 || rank < l.ncols() {
            return Err(Error::InvalidArgument(format!(
                "contrast matrix is rank deficient (rank {rank} < {})",
                l.ncols()
            )));
        }
        Ok(Self {
            l,
            h: DVector::from_vec(h),
        })
    }

    /// From the rows of `Lᵀ`, one restriction per row.
    pub fn from_rows(nu: usize, rows: &[Vec<f64>], h: Vec<f64>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != nu) {
            return Err(Error::mismatch("contrast row", nu, bad.len()));
        }
        let l = DMatrix::from_fn(nu, rows.len(), |i, j| rows[j][i]);
        Self::new(l, h)
    }

    /// `β_index = value`.
    pub fn single(nu: usize, index: usize, value: f64) -> Result<Self> {
        if index >= nu {
            return Err(Error::InvalidArgument(format!(
                "coefficient index {index} out of range for {nu} parameters"
            )));
        }
        let mut l = DMatrix::zeros(nu, 1);
        l[(index, 0)] = 1.0;
        Self::new(l, vec![value])
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    /// Number of restrictions `r`.
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn nu(&self) -> usize {
        self.l.nrows()
    }

    /// `Lᵀβ - h`.
    pub fn deviation(&self, beta: &ParameterVector) -> Result<DVector<f64>> {
        if beta.dims().nu() != self.nu() {
            return Err(Error::mismatch("hypothesis vs parameter", self.nu(), beta.dims().nu()));
        }
        Ok(self.l.transpose() * beta.values() - &self.h)
    }

    /// `(Lᵀ Σ L)⁻¹`, failing with [`Error::SingularContrast`].
    pub fn contrast_precision(&self, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if sigma.shape() != (self.nu(), self.nu()) {
            return Err(Error::mismatch("covariance vs hypothesis", self.nu(), sigma.nrows()));
        }
        let inner = symmetrize(&(self.l.transpose() * sigma * &self.l));
        symmetric_inverse(&inner).map_err(|rcond| Error::SingularContrast { rcond })
    }

    /// `q_{β₁}(β₂)` with `Σ_λ(β₂)` supplied as `sigma`.
    pub fn q(&self, beta: &ParameterVector, sigma: &DMatrix<f64>) -> Result<f64> {
        let dev = self.deviation(beta)?;
        let prec = self.contrast_precision(sigma)?;
        Ok(dev.dot(&(prec * &dev)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject_at: Vec<Rejection>,
}

impl WaldResult {
    /// Rejection at an arbitrary level, `W_N > χ²_{r,α}`.
    pub fn reject(&self, alpha: f64) -> Result<bool> {
        if alpha >= 1.0 {
            return Ok(true);
        }
        Ok(self.statistic > chisq_quantile(1.0 - alpha, self.df as f64)?)
    }
}

/// `W_N = N (Lᵀβ̂ - h)ᵀ (Lᵀ M L)⁻¹ (Lᵀβ̂ - h)` from a fit.
pub fn wald_statistic(fit: &FitResult, hyp: &LinearHypothesis) -> Result<WaldResult> {
    wald_from_parts(&fit.beta_hat, &fit.sandwich, fit.total_trials, hyp)
}

/// Wald statistic from an estimate, its sandwich matrix `M` and the sample
/// size that scales it.
pub fn wald_from_parts(
    beta_hat: &ParameterVector,
    sandwich: &DMatrix<f64>,
    n: f64,
    hyp: &LinearHypothesis,
) -> Result<WaldResult> {
    let dev = hyp.deviation(beta_hat)?;
    let prec = hyp.contrast_precision(sandwich)?;
    let statistic = (n * dev.dot(&(prec * &dev))).max(0.0);
    let df = hyp.rank();
    let p_value = chisq_sf(statistic, df as f64)?.clamp(0.0, 1.0);
    let reject_at = DEFAULT_LEVELS
        .iter()
        .map(|&alpha| {
            Ok(Rejection {
                alpha,
                reject: statistic > chisq_quantile(1.0 - alpha, df as f64)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WaldResult {
        statistic,
        df,
        p_value,
        reject_at,
    })
}

/// Where `Σ_λ` comes from when it is evaluated at a hypothesized parameter.
#[derive(Debug, Clone, Copy)]
pub enum SigmaSource<'a> {
    /// A precomputed `Σ_λ`.
    Matrix(&'a DMatrix<f64>),
    /// The sandwich matrix stored in a fit.
    Fit(&'a FitResult),
    /// `Ψ⁻¹ Ω Ψ⁻¹` built from the covariates of `data` at the parameter in
    /// question. Responses are ignored.
    Covariates { data: &'a Dataset, lambda: f64 },
}

impl SigmaSource<'_> {
    pub fn resolve(&self, beta: &ParameterVector) -> Result<DMatrix<f64>> {
        match self {
            SigmaSource::Matrix(m) => Ok((*m).clone()),
            SigmaSource::Fit(fit) => Ok(fit.sandwich.clone()),
            SigmaSource::Covariates { data, lambda } => {
                let (psi, omega) = information_matrices(data, beta, *lambda)?;
                sandwich_covariance(&psi, &omega)
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("significance level must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn positive_q(hyp: &LinearHypothesis, beta_star: &ParameterVector, sigma: &SigmaSource<'_>) -> Result<f64> {
    let sigma = sigma.resolve(beta_star)?;
    let q = hyp.q(beta_star, &sigma)?;
    if !(q > 0.0) {
        return Err(Error::NullParameter);
    }
    Ok(q)
}

/// First-order power approximation
/// `1 - Φ((χ²_{r,α}/√N - √N q) / σ)` with `σ = 2√q`.
pub fn approximate_power(
    hyp: &LinearHypothesis,
    beta_star: &ParameterVector,
    sigma: &SigmaSource<'_>,
    n: f64,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if !(n > 0.0) {
        return Err(Error::Domain(format!("sample size must be positive, got {n}")));
    }
    let q = positive_q(hyp, beta_star, sigma)?;
    power_from_q(q, n, hyp.rank(), alpha)
}

fn power_from_q(q: f64, n: f64, r: usize, alpha: f64) -> Result<f64> {
    let c = chisq_quantile(1.0 - alpha, r as f64)?;
    let sigma = 2.0 * q.sqrt();
    let z = (c / n.sqrt() - n.sqrt() * q) / sigma;
    Ok(normal_cdf(-z))
}

/// Smallest `N` whose approximate power reaches `target_power`.
pub fn required_sample_size(
    hyp: &LinearHypothesis,
    beta_star: &ParameterVector,
    sigma: &SigmaSource<'_>,
    alpha: f64,
    target_power: f64,
) -> Result<u64> {
    check_alpha(alpha)?;
    if !(target_power > alpha && target_power < 1.0) {
        return Err(Error::Domain(format!(
            "target power must lie in (alpha, 1), got {target_power}"
        )));
    }
    let q = positive_q(hyp, beta_star, sigma)?;
    let n_star = critical_sample_size(q, hyp.rank(), alpha, target_power)?;
    Ok(n_star.floor() as u64 + 1)
}

/// Real-valued root `N*` of the power equation.
pub fn critical_sample_size(q: f64, r: usize, alpha: f64, target_power: f64) -> Result<f64> {
    let c = chisq_quantile(1.0 - alpha, r as f64)?;
    let z = normal_quantile(1.0 - target_power)?;
    let a = 4.0 * q * z * z;
    let b = 2.0 * c * q;
    let root = (a * (a + 2.0 * b)).sqrt();
    let numerator = if target_power >= 0.5 { a + b + root } else { a + b - root };
    Ok(numerator / (2.0 * q * q))
}

/// Local alternative specification.
#[derive(Debug, Clone, Copy)]
pub enum LocalAlternative<'a> {
    /// `β_N = β₀ + N^{-1/2} d`.
    Direction(&'a DVector<f64>),
    /// `Lᵀβ_N = h + N^{-1/2} δ`.
    Shift(&'a DVector<f64>),
}

/// Asymptotic power under contiguous alternatives,
/// `1 - F_{χ²_r(Δ)}(χ²_{r,α})` with `Δ = δᵀ (Lᵀ Σ L)⁻¹ δ`, `δ = Lᵀ d`.
pub fn contiguous_power(
    hyp: &LinearHypothesis,
    beta0: &ParameterVector,
    alternative: LocalAlternative<'_>,
    sigma: &SigmaSource<'_>,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let dev = hyp.deviation(beta0)?;
    let deviation = dev.amax();
    if deviation > 1e-8 {
        return Err(Error::NullViolated { deviation });
    }
    let delta_vec = match alternative {
        LocalAlternative::Direction(d) => {
            if d.len() != hyp.nu() {
                return Err(Error::mismatch("local direction", hyp.nu(), d.len()));
            }
            hyp.l().transpose() * d
        }
        LocalAlternative::Shift(delta) => {
            if delta.len() != hyp.rank() {
                return Err(Error::mismatch("local shift", hyp.rank(), delta.len()));
            }
            delta.clone()
        }
    };
    let sigma = sigma.resolve(beta0)?;
    let prec = hyp.contrast_precision(&sigma)?;
    let noncentrality = delta_vec.dot(&(prec * &delta_vec));
    if noncentrality == 0.0 {
        return Ok(alpha);
    }
    let c = chisq_quantile(1.0 - alpha, hyp.rank() as f64)?;
    noncentral_chisq_sf(c, hyp.rank() as f64, noncentrality.max(0.0))
}
