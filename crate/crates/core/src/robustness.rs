//! Influence functions of the MDPDE functional and the second-order
//! influence function of the Wald-type test functional.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{check_lambda, residual_kernel};
use crate::error::{Error, Result};
use crate::estimator::{information_matrices, psi_matrix, sandwich_covariance};
use crate::inference::LinearHypothesis;
use crate::linalg::{kron_vec, symmetric_inverse};
use crate::model::{linear_predictors, softmax_unclamped, CovariateRow, Dataset, ParameterVector, ResponseVector};

/// Point mass contamination of row `index` at response `t`, optionally with
/// the row's covariates replaced to probe leverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPoint {
    pub index: usize,
    pub t: ResponseVector,
    pub x_override: Option<CovariateRow>,
}

impl ContaminationPoint {
    pub fn new(index: usize, t: ResponseVector) -> Self {
        Self {
            index,
            t,
            x_override: None,
        }
    }

    pub fn at_category(index: usize, category: usize, categories: usize) -> Result<Self> {
        Ok(Self::new(index, ResponseVector::unit(category, categories)?))
    }

    pub fn with_covariates(mut self, x: CovariateRow) -> Self {
        self.x_override = Some(x);
        self
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        let dims = data.dims();
        if self.index >= data.len() {
            return Err(Error::InvalidArgument(format!(
                "contamination row {} out of range for {} rows",
                self.index,
                data.len()
            )));
        }
        if self.t.len() != dims.categories() {
            return Err(Error::mismatch("contamination point", dims.categories(), self.t.len()));
        }
        if (self.t.trials() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "contamination point must be a single-trial response".into(),
            ));
        }
        if let Some(x) = &self.x_override {
            if x.len() != dims.row_len() {
                return Err(Error::mismatch("leverage covariates", dims.row_len(), x.len()));
            }
        }
        Ok(())
    }

    fn kernel(&self, data: &Dataset, beta: &ParameterVector, lambda: f64) -> DVector<f64> {
        let x = match &self.x_override {
            Some(x) => x.as_slice(),
            None => data.rows()[self.index].x.as_slice(),
        };
        let mut eta = linear_predictors(x, beta);
        eta.push(0.0);
        let pi = softmax_unclamped(&eta);
        kron_vec(&residual_kernel(&pi, self.t.as_slice(), lambda, false), x)
    }
}

/// Covariates `(1, scale · v / ‖v‖)` along the direction `v` of the row's
/// non-intercept covariates; an all-zero row uses the diagonal direction.
pub fn leverage_probe(x: &CovariateRow, scale: f64) -> Result<CovariateRow> {
    let tail = &x.as_slice()[1..];
    if tail.is_empty() {
        return Err(Error::InvalidArgument(
            "leverage probes need at least one non-intercept covariate".into(),
        ));
    }
    let norm = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
    let direction: Vec<f64> = if norm > 0.0 {
        tail.iter().map(|v| v / norm).collect()
    } else {
        vec![1.0 / (tail.len() as f64).sqrt(); tail.len()]
    };
    CovariateRow::with_intercept(&direction.iter().map(|v| scale * v).collect::<Vec<_>>())
}

fn check_inputs(data: &Dataset, beta: &ParameterVector, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let psi = psi_matrix(data, beta, lambda)?;
    symmetric_inverse(&psi).map_err(|rcond| Error::SingularInformation { rcond })
}

/// First-order influence function under contamination of one row:
/// `Ψ⁻¹ (1/N) [(I_d, 0) Δ(π) diag^{λ-1}(π) (t - π)] ⊗ x`.
pub fn if_single_index(
    beta0: &ParameterVector,
    data: &Dataset,
    lambda: f64,
    cp: &ContaminationPoint,
) -> Result<DVector<f64>> {
    if_all_indices(beta0, data, lambda, std::slice::from_ref(cp))
}

/// Influence function when each listed row is contaminated at its own
/// point: `Ψ⁻¹ (1/N) Σ_i kernel_i`.
pub fn if_all_indices(
    beta0: &ParameterVector,
    data: &Dataset,
    lambda: f64,
    points: &[ContaminationPoint],
) -> Result<DVector<f64>> {
    let inv = check_inputs(data, beta0, lambda)?;
    for cp in points {
        cp.validate(data)?;
    }
    let mut sum = DVector::zeros(data.dims().nu());
    for cp in points {
        sum += cp.kernel(data, beta0, lambda);
    }
    Ok(inv * sum / data.total_trials())
}

/// `2 IFᵀ L (Lᵀ M L)⁻¹ Lᵀ IF`.
pub fn second_order_from_if(
    influence: &DVector<f64>,
    sandwich: &DMatrix<f64>,
    hyp: &LinearHypothesis,
) -> Result<f64> {
    if influence.len() != hyp.nu() {
        return Err(Error::mismatch("influence vs hypothesis", hyp.nu(), influence.len()));
    }
    let prec = hyp.contrast_precision(sandwich)?;
    let projected = hyp.l().transpose() * influence;
    Ok((2.0 * projected.dot(&(prec * &projected))).max(0.0))
}

/// Second-order influence function of the Wald-type test functional at a
/// null parameter `beta0`.
pub fn second_order_if_test(
    beta0: &ParameterVector,
    data: &Dataset,
    lambda: f64,
    hyp: &LinearHypothesis,
    points: &[ContaminationPoint],
) -> Result<f64> {
    let deviation = hyp.deviation(beta0)?.amax();
    if deviation > 1e-8 {
        return Err(Error::NullViolated { deviation });
    }
    let influence = if_all_indices(beta0, data, lambda, points)?;
    let (psi, omega) = information_matrices(data, beta0, lambda)?;
    let sandwich = sandwich_covariance(&psi, &omega)?;
    second_order_from_if(&influence, &sandwich, hyp)
}
