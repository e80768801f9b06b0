//! The polytomous logistic regression model: category probabilities, their
//! jacobian with respect to the parameters, and the per-observation mass
//! function.
//!
//! Parameters are stored category-major: block `j` (for non-baseline
//! category `j = 0..d`) holds `β_j = (β_{0j}, ..., β_{kj})`, so the flat index
//! of covariate `u` in category `j` is `j * (k + 1) + u`. The last category is
//! the baseline and its block is implicitly zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest probability the model will ever report.
pub const MIN_PROB: f64 = 1e-300;

/// Shape of the model: `k` non-intercept covariates, `d + 1` categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    k: usize,
    d: usize,
}

impl ModelDims {
    pub fn new(k: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "at least two response categories are required".into(),
            ));
        }
        Ok(Self { k, d })
    }

    /// Number of non-intercept covariates.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of non-baseline categories.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Length of a covariate row, intercept included.
    pub fn row_len(&self) -> usize {
        self.k + 1
    }

    pub fn categories(&self) -> usize {
        self.d + 1
    }

    /// Parameter length `d (k + 1)`.
    pub fn nu(&self) -> usize {
        self.d * (self.k + 1)
    }

    /// Flat index of `β_{uj}`; `category` is 0-based and must be `< d`.
    pub fn index(&self, category: usize, covariate: usize) -> usize {
        debug_assert!(category < self.d && covariate <= self.k);
        category * (self.k + 1) + covariate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    dims: ModelDims,
    values: DVector<f64>,
}

impl ParameterVector {
    pub fn new(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.nu() {
            return Err(Error::mismatch("parameter vector", dims.nu(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "parameter vector has non-finite entries".into(),
            ));
        }
        Ok(Self {
            dims,
            values: DVector::from_vec(values),
        })
    }

    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            values: DVector::zeros(dims.nu()),
        }
    }

    pub(crate) fn from_dvector(dims: ModelDims, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.nu());
        Self { dims, values }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// `β_{uj}` with 0-based category `j < d` and covariate `u ≤ k`.
    pub fn get(&self, category: usize, covariate: usize) -> f64 {
        self.values[self.dims.index(category, covariate)]
    }

    /// Coefficient block `β_j` of a non-baseline category.
    pub fn block(&self, category: usize) -> &[f64] {
        let p = self.dims.row_len();
        &self.as_slice()[category * p..(category + 1) * p]
    }

    /// Squared Euclidean distance to another parameter vector.
    pub fn distance_sq(&self, other: &ParameterVector) -> f64 {
        (&self.values - &other.values).norm_squared()
    }
}

/// Covariate vector with the leading intercept entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow(Vec<f64>);

impl CovariateRow {
    /// Builds a row from its full form; `x[0]` must be 1.
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.first() != Some(&1.0) {
            return Err(Error::InvalidArgument(
                "covariate row must start with the intercept entry 1".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "covariate row has non-finite entries".into(),
            ));
        }
        Ok(Self(x))
    }

    /// Builds a row from the non-intercept covariates.
    pub fn with_intercept(covariates: &[f64]) -> Result<Self> {
        let mut x = Vec::with_capacity(covariates.len() + 1);
        x.push(1.0);
        x.extend_from_slice(covariates);
        Self::new(x)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Category probabilities `(π_1, ..., π_{d+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The first `d` entries (baseline dropped).
    pub fn reduced(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps an arbitrary probability vector, e.g. for divergence checks on
    /// hand-built inputs. Entries are clamped below at [`MIN_PROB`].
    pub fn from_probabilities(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidArgument(
                "probability vector needs at least two entries".into(),
            ));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(p.into_iter().map(|v| v.max(MIN_PROB)).collect()))
    }
}

/// Tabulated multinomial response. Counts are held as reals so that
/// expected (fractional) responses can be fed through the same kernels when
/// evaluating statistical functionals; [`ResponseVector::from_counts`] and
/// [`ResponseVector::unit`] build ordinary observed responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector(Vec<f64>);

impl ResponseVector {
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidArgument(
                "response needs at least two categories".into(),
            ));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::InvalidArgument(
                "response must contain at least one trial".into(),
            ));
        }
        Ok(Self(counts.iter().map(|&c| f64::from(c)).collect()))
    }

    /// The unit vector `e_{j, categories}` for a single trial in `category`.
    pub fn unit(category: usize, categories: usize) -> Result<Self> {
        if category >= categories || categories < 2 {
            return Err(Error::InvalidArgument(format!(
                "category {category} out of range for {categories} categories"
            )));
        }
        let mut y = vec![0.0; categories];
        y[category] = 1.0;
        Ok(Self(y))
    }

    /// Fractional response, e.g. a mixture of the model distribution and a
    /// point mass. Entries must be nonnegative and not all zero.
    pub fn expected(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidArgument(
                "response needs at least two categories".into(),
            ));
        }
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "response weights must be finite and nonnegative".into(),
            ));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(
                "response weights must not all be zero".into(),
            ));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Trial count `n = Σ_j y_j`.
    pub fn trials(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_integral(&self) -> bool {
        self.0.iter().all(|v| v.fract() == 0.0)
    }

    /// The category of a single-trial response, if it is one.
    pub fn category(&self) -> Option<usize> {
        if self.trials() != 1.0 || !self.is_integral() {
            return None;
        }
        self.0.iter().position(|&v| v == 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: CovariateRow,
    pub y: ResponseVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dims: ModelDims,
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
    category_names: Vec<String>,
}

impl Dataset {
    pub fn new(dims: ModelDims, rows: Vec<Observation>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        for row in &rows {
            if row.x.len() != dims.row_len() {
                return Err(Error::mismatch("covariate row", dims.row_len(), row.x.len()));
            }
            if row.y.len() != dims.categories() {
                return Err(Error::mismatch("response", dims.categories(), row.y.len()));
            }
        }
        let mut covariate_names = vec!["(Intercept)".to_string()];
        covariate_names.extend((1..=dims.k()).map(|u| format!("x{u}")));
        let category_names = (1..=dims.categories()).map(|j| j.to_string()).collect();
        Ok(Self {
            dims,
            rows,
            covariate_names,
            category_names,
        })
    }

    /// Convenience constructor from raw covariates (no intercept column)
    /// and per-row counts.
    pub fn from_counts(dims: ModelDims, covariates: &[Vec<f64>], counts: &[Vec<u32>]) -> Result<Self> {
        if covariates.len() != counts.len() {
            return Err(Error::mismatch("rows", covariates.len(), counts.len()));
        }
        let rows = covariates
            .iter()
            .zip(counts)
            .map(|(x, y)| {
                Ok(Observation {
                    x: CovariateRow::with_intercept(x)?,
                    y: ResponseVector::from_counts(y)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, rows)
    }

    pub fn with_names(mut self, covariate_names: Vec<String>, category_names: Vec<String>) -> Result<Self> {
        if covariate_names.len() != self.dims.row_len() {
            return Err(Error::mismatch(
                "covariate names",
                self.dims.row_len(),
                covariate_names.len(),
            ));
        }
        if category_names.len() != self.dims.categories() {
            return Err(Error::mismatch(
                "category names",
                self.dims.categories(),
                category_names.len(),
            ));
        }
        self.covariate_names = covariate_names;
        self.category_names = category_names;
        Ok(self)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    /// Number of rows `N`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Total number of trials `Σ_i n_i`; equals `len()` for ungrouped data.
    pub fn total_trials(&self) -> f64 {
        self.rows.iter().map(|r| r.y.trials()).sum()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    /// Coefficient labels in flat parameter order, `category:covariate`.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dims.nu());
        for cat in &self.category_names[..self.dims.d()] {
            for cov in &self.covariate_names {
                names.push(format!("{cat}:{cov}"));
            }
        }
        names
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        let p = self.dims.row_len();
        DMatrix::from_fn(self.len(), p, |i, j| self.rows[i].x.as_slice()[j])
    }

    /// Every row has a single trial.
    pub fn is_ungrouped(&self) -> bool {
        self.rows.iter().all(|r| r.y.category().is_some())
    }

    /// Expands grouped rows into single-trial rows (order preserved).
    pub fn explode(&self) -> Result<Dataset> {
        let mut rows = Vec::new();
        for row in &self.rows {
            if !row.y.is_integral() {
                return Err(Error::Data(
                    "cannot explode fractional responses into trials".into(),
                ));
            }
            for (j, &count) in row.y.as_slice().iter().enumerate() {
                for _ in 0..count as u64 {
                    rows.push(Observation {
                        x: row.x.clone(),
                        y: ResponseVector::unit(j, self.dims.categories())?,
                    });
                }
            }
        }
        let mut out = Dataset::new(self.dims, rows)?;
        out.covariate_names = self.covariate_names.clone();
        out.category_names = self.category_names.clone();
        Ok(out)
    }

    /// Returns a copy with the responses replaced.
    pub fn with_responses(&self, responses: Vec<ResponseVector>) -> Result<Dataset> {
        if responses.len() != self.len() {
            return Err(Error::mismatch("responses", self.len(), responses.len()));
        }
        let rows = self
            .rows
            .iter()
            .zip(responses)
            .map(|(r, y)| Observation { x: r.x.clone(), y })
            .collect();
        let mut out = Dataset::new(self.dims, rows)?;
        out.covariate_names = self.covariate_names.clone();
        out.category_names = self.category_names.clone();
        Ok(out)
    }

    /// Checks the design matrix for full column rank. Returns the names of
    /// columns that are linear combinations of earlier ones.
    pub fn collinear_columns(&self) -> Vec<String> {
        let x = self.design_matrix();
        let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let tol = 1e-10 * scale * (self.len() as f64).sqrt();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut collinear = Vec::new();
        for j in 0..x.ncols() {
            let mut v: DVector<f64> = x.column(j).into_owned();
            // Two Gram-Schmidt passes for stability.
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dot(&v);
                    v.axpy(-proj, b, 1.0);
                }
            }
            let norm = v.norm();
            if norm <= tol {
                collinear.push(self.covariate_names[j].clone());
            } else {
                basis.push(v / norm);
            }
        }
        collinear
    }
}

/// Softmax over the full predictor vector `(η_1, ..., η_{d+1})` with
/// max-subtraction. Entries are clamped below at [`MIN_PROB`].
pub fn stabilized_softmax(eta: &[f64]) -> Vec<f64> {
    let mut p = softmax_unclamped(eta);
    for v in &mut p {
        *v = v.max(MIN_PROB);
    }
    p
}

/// Max-subtracted softmax whose entries may underflow to zero.
pub(crate) fn softmax_unclamped(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut p: Vec<f64> = eta.iter().map(|&e| (e - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Linear predictors `x·β_j` for the `d` non-baseline categories.
pub fn linear_predictors(x: &[f64], beta: &ParameterVector) -> Vec<f64> {
    let dims = beta.dims();
    (0..dims.d())
        .map(|j| beta.block(j).iter().zip(x).map(|(b, xv)| b * xv).sum())
        .collect()
}

fn check_row(x: &CovariateRow, beta: &ParameterVector) -> Result<()> {
    if x.len() != beta.dims().row_len() {
        return Err(Error::mismatch(
            "covariate row",
            beta.dims().row_len(),
            x.len(),
        ));
    }
    Ok(())
}

pub(crate) fn probabilities_unchecked(x: &[f64], beta: &ParameterVector) -> Vec<f64> {
    let mut eta = linear_predictors(x, beta);
    eta.push(0.0);
    stabilized_softmax(&eta)
}

pub fn category_probabilities(x: &CovariateRow, beta: &ParameterVector) -> Result<ProbabilityVector> {
    check_row(x, beta)?;
    Ok(ProbabilityVector(probabilities_unchecked(x.as_slice(), beta)))
}

/// `∂π_j/∂β` stacked as a `ν × (d+1)` matrix; column `j` is the gradient of
/// `π_j` in the flat parameter layout.
pub fn probability_jacobian(x: &CovariateRow, beta: &ParameterVector) -> Result<DMatrix<f64>> {
    check_row(x, beta)?;
    let dims = beta.dims();
    let pi = probabilities_unchecked(x.as_slice(), beta);
    let xs = x.as_slice();
    let mut jac = DMatrix::zeros(dims.nu(), dims.categories());
    for j in 0..dims.categories() {
        for v in 0..dims.d() {
            let delta = if j == v { 1.0 } else { 0.0 };
            let factor = pi[j] * (delta - pi[v]);
            for (u, &xu) in xs.iter().enumerate() {
                jac[(dims.index(v, u), j)] = xu * factor;
            }
        }
    }
    Ok(jac)
}

fn ln_factorial(n: f64) -> f64 {
    crate::dist::ln_gamma(n + 1.0)
}

/// `Σ_j y_j log π_j`, plus the log multinomial coefficient when
/// `with_coefficient` is set.
pub fn log_pmf(y: &ResponseVector, pi: &ProbabilityVector, with_coefficient: bool) -> Result<f64> {
    if y.len() != pi.len() {
        return Err(Error::mismatch("response", pi.len(), y.len()));
    }
    let mut value: f64 = y
        .as_slice()
        .iter()
        .zip(pi.as_slice())
        .filter(|(&yj, _)| yj > 0.0)
        .map(|(&yj, &pj)| yj * pj.ln())
        .sum();
    if with_coefficient {
        value += ln_factorial(y.trials())
            - y.as_slice().iter().map(|&c| ln_factorial(c)).sum::<f64>();
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dims(k: usize, d: usize) -> ModelDims {
        ModelDims::new(k, d).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_probabilities() {
        let beta = ParameterVector::zeros(dims(2, 2));
        let x = CovariateRow::with_intercept(&[0.4, -1.3]).unwrap();
        let pi = category_probabilities(&x, &beta).unwrap();
        for &p in pi.as_slice() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn simulation_parameter_at_origin() {
        // exp(0), exp(0.6) and 1 normalised by 2 + e^{0.6}.
        let beta = ParameterVector::new(dims(2, 2), vec![0.0, -0.9, 0.1, 0.6, -1.2, 0.8]).unwrap();
        let x = CovariateRow::with_intercept(&[0.0, 0.0]).unwrap();
        let pi = category_probabilities(&x, &beta).unwrap();
        let denom = 2.0 + 0.6_f64.exp();
        assert_relative_eq!(pi.as_slice()[0], 1.0 / denom, epsilon = 1e-14);
        assert_relative_eq!(pi.as_slice()[1], 0.6_f64.exp() / denom, epsilon = 1e-14);
        assert!((pi.as_slice()[0] - 0.26165).abs() < 3e-5);
        assert!((pi.as_slice()[1] - 0.47671).abs() < 3e-5);
        assert!((pi.as_slice()[2] - 0.26165).abs() < 3e-5);
    }

    #[test]
    fn binary_logit_with_odds_three() {
        let beta = ParameterVector::new(dims(0, 1), vec![3.0_f64.ln()]).unwrap();
        let x = CovariateRow::new(vec![1.0]).unwrap();
        let pi = category_probabilities(&x, &beta).unwrap();
        assert_relative_eq!(pi.as_slice()[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(pi.as_slice()[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn extreme_predictors_do_not_overflow() {
        let beta = ParameterVector::new(dims(1, 2), vec![0.0, 700.0, 0.0, -700.0]).unwrap();
        for s in [-1.0, 1.0] {
            let x = CovariateRow::with_intercept(&[s]).unwrap();
            let pi = category_probabilities(&x, &beta).unwrap();
            assert!(pi.as_slice().iter().all(|p| p.is_finite() && *p >= MIN_PROB));
            assert_relative_eq!(pi.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let beta = ParameterVector::zeros(dims(2, 2));
        let x = CovariateRow::with_intercept(&[1.0]).unwrap();
        assert!(matches!(
            category_probabilities(&x, &beta),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ParameterVector::new(dims(2, 2), vec![0.0; 5]).is_err());
        assert!(CovariateRow::new(vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn jacobian_at_zero_binary() {
        let beta = ParameterVector::zeros(dims(0, 1));
        let x = CovariateRow::new(vec![1.0]).unwrap();
        let jac = probability_jacobian(&x, &beta).unwrap();
        assert_relative_eq!(jac[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(jac[(0, 1)], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn log_pmf_cases() {
        let pi = ProbabilityVector::from_probabilities(vec![1.0 / 3.0; 3]).unwrap();
        let y = ResponseVector::unit(0, 3).unwrap();
        assert_relative_eq!(log_pmf(&y, &pi, false).unwrap(), -(3.0_f64.ln()), epsilon = 1e-14);

        let pi = ProbabilityVector::from_probabilities(vec![0.5, 0.25, 0.25]).unwrap();
        let y = ResponseVector::from_counts(&[2, 1, 0]).unwrap();
        let expected = 2.0 * 0.5_f64.ln() + 0.25_f64.ln();
        assert_relative_eq!(log_pmf(&y, &pi, false).unwrap(), expected, epsilon = 1e-14);
        // 3!/(2!1!0!) = 3
        assert_relative_eq!(
            log_pmf(&y, &pi, true).unwrap(),
            expected + 3.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn unit_response_pmf_is_inner_product() {
        let pi = ProbabilityVector::from_probabilities(vec![0.2, 0.3, 0.5]).unwrap();
        for j in 0..3 {
            let y = ResponseVector::unit(j, 3).unwrap();
            let inner: f64 = y.as_slice().iter().zip(pi.as_slice()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(log_pmf(&y, &pi, false).unwrap().exp(), inner, epsilon = 1e-15);
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let d = dims(2, 1);
        let covs = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let counts = vec![vec![1, 0], vec![0, 1], vec![1, 0]];
        let data = Dataset::from_counts(d, &covs, &counts).unwrap();
        assert_eq!(data.collinear_columns(), vec!["x2".to_string()]);
    }

    #[test]
    fn explode_preserves_trials() {
        let d = dims(1, 1);
        let data = Dataset::from_counts(d, &[vec![0.5], vec![-1.0]], &[vec![2, 1], vec![0, 3]]).unwrap();
        let exploded = data.explode().unwrap();
        assert_eq!(exploded.len(), 6);
        assert!(exploded.is_ungrouped());
        assert_eq!(exploded.total_trials(), data.total_trials());
    }
}
