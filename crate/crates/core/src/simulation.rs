//! Monte-Carlo studies: data generation, category-permutation
//! contamination, MSE curves, empirical level and power, and the behavior of
//! the tuning rule.
//!
//! Every replication draws from its own ChaCha8 stream keyed by the master
//! seed, the sample size and the replication index, and results are reduced
//! in replication order, so studies are bit-identical for any thread count.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_mdpde, minimize_dpd, FitOptions};
use crate::inference::{wald_statistic, LinearHypothesis};
use crate::model::{probabilities_unchecked, CovariateRow, Dataset, ModelDims, Observation, ParameterVector, ResponseVector};
use crate::tuning::{select_lambda, TuningConfig};

/// Parameter of the reference simulation design, `k = 2`, three categories.
pub const REFERENCE_BETA: [f64; 6] = [0.0, -0.9, 0.1, 0.6, -1.2, 0.8];

/// Share of discarded replications above which a study cell is flagged.
pub const DISCARD_FLAG_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationMode {
    /// Redraw the last `⌈pN⌉` responses from cyclically shifted probabilities.
    #[default]
    Redraw,
    /// Cyclically permute the observed counts of rows `⌊(1-p)N⌋..N`
    /// (1-based).
    Permute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub beta_true: Vec<f64>,
    pub k: usize,
    pub categories: usize,
    pub n: usize,
    /// Contaminated fraction `p ∈ [0, 1)`.
    #[serde(default)]
    pub contamination: f64,
    #[serde(default)]
    pub mode: ContaminationMode,
    #[serde(default)]
    pub seed: u64,
}

impl SimDesign {
    /// The reference design at `β₀` with standard normal covariates.
    pub fn reference(n: usize, contamination: f64, seed: u64) -> Self {
        Self {
            beta_true: REFERENCE_BETA.to_vec(),
            k: 2,
            categories: 3,
            n,
            contamination,
            mode: ContaminationMode::Redraw,
            seed,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_contamination(&self, contamination: f64) -> Self {
        Self {
            contamination,
            ..self.clone()
        }
    }

    /// Same design with one coefficient of `beta_true` replaced.
    pub fn with_coefficient(&self, index: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.beta_true[index] = value;
        out
    }

    pub fn dims(&self) -> Result<ModelDims> {
        if self.categories < 2 {
            return Err(Error::InvalidArgument("design needs at least two categories".into()));
        }
        ModelDims::new(self.k, self.categories - 1)
    }

    pub fn beta(&self) -> Result<ParameterVector> {
        ParameterVector::new(self.dims()?, self.beta_true.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.beta()?;
        if !(0.0..1.0).contains(&self.contamination) {
            return Err(Error::InvalidArgument(format!(
                "contamination fraction must lie in [0, 1), got {}",
                self.contamination
            )));
        }
        if self.n < 10 {
            return Err(Error::InvalidArgument(format!(
                "design sample size must be at least 10, got {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Number of contaminated rows in redraw mode, `⌈pN⌉`.
    pub fn contaminated_rows(&self) -> usize {
        ((self.contamination * self.n as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for replication `rep` of the cell with sample size `n`.
pub fn replication_rng(master_seed: u64, n: usize, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(n as u64)));
    rng.set_stream(rep);
    rng
}

fn draw_category<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// `p'_1 = p_{d+1}`, `p'_j = p_{j-1}`: category `j` is relabelled `j + 1`
/// and the last becomes the first.
fn shift_forward(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    (0..m).map(|j| p[(j + m - 1) % m]).collect()
}

/// Fresh standard normal covariates and single-trial responses from the
/// model at `beta_true`.
pub fn generate_pure<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<Dataset> {
    design.validate()?;
    let dims = design.dims()?;
    let beta = design.beta()?;
    let mut rows = Vec::with_capacity(design.n);
    for _ in 0..design.n {
        let covariates: Vec<f64> = (0..dims.k()).map(|_| rng.sample(StandardNormal)).collect();
        let x = CovariateRow::with_intercept(&covariates)?;
        let pi = probabilities_unchecked(x.as_slice(), &beta);
        let y = ResponseVector::unit(draw_category(&pi, rng), dims.categories())?;
        rows.push(Observation { x, y });
    }
    Dataset::new(dims, rows)
}

/// Applies the design's category-permutation contamination.
pub fn contaminate<R: Rng + ?Sized>(data: &Dataset, design: &SimDesign, rng: &mut R) -> Result<Dataset> {
    design.validate()?;
    let dims = design.dims()?;
    if data.dims() != dims {
        return Err(Error::mismatch("design vs data", dims.nu(), data.dims().nu()));
    }
    if design.contamination == 0.0 {
        return Ok(data.clone());
    }
    let n = data.len();
    let beta = design.beta()?;
    let start = match design.mode {
        ContaminationMode::Redraw => {
            n - design.with_n(n).contaminated_rows().min(n)
        }
        ContaminationMode::Permute => {
            let first = ((1.0 - design.contamination) * n as f64).floor() as usize;
            first.saturating_sub(1)
        }
    };
    let mut responses: Vec<ResponseVector> = data.rows().iter().map(|r| r.y.clone()).collect();
    for (i, row) in data.rows().iter().enumerate().skip(start) {
        responses[i] = match design.mode {
            ContaminationMode::Redraw => {
                let shifted = shift_forward(&probabilities_unchecked(row.x.as_slice(), &beta));
                ResponseVector::unit(draw_category(&shifted, rng), dims.categories())?
            }
            ContaminationMode::Permute => ResponseVector::expected(shift_forward(row.y.as_slice()))?,
        };
    }
    data.with_responses(responses)
}

/// Pure data, contaminated when the design asks for it.
pub fn generate<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<Dataset> {
    let pure = generate_pure(design, rng)?;
    contaminate(&pure, design, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Mse,
    Rejection,
    Tuning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub lambda: f64,
    pub n: usize,
    pub metric: String,
    pub value: f64,
    /// Monte-Carlo standard error of `value`.
    pub mc_se: f64,
    pub valid_reps: usize,
    pub discarded: usize,
    /// Per-coefficient MSE (estimator studies only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_coordinate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub seed: u64,
    pub reps: usize,
    pub cells: Vec<StudyCell>,
    /// Some cell discarded at least [`DISCARD_FLAG_RATE`] of its replications.
    pub flagged: bool,
}

impl StudyResult {
    pub fn cell(&self, lambda: f64, n: usize) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.lambda == lambda && c.n == n)
    }

    pub fn value(&self, lambda: f64, n: usize) -> Option<f64> {
        self.cell(lambda, n).map(|c| c.value)
    }

    /// Long-format CSV: `lambda,N,metric,value,valid_reps`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "N", "metric", "value", "valid_reps"])?;
        for c in &self.cells {
            let mut emit = |metric: &str, value: f64| {
                w.write_record([
                    c.lambda.to_string(),
                    c.n.to_string(),
                    metric.to_string(),
                    value.to_string(),
                    c.valid_reps.to_string(),
                ])
            };
            emit(&c.metric, c.value)?;
            emit(&format!("{}_se", c.metric), c.mc_se)?;
            for (i, v) in c.per_coordinate.iter().enumerate() {
                emit(&format!("{}_coef{}", c.metric, i), *v)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_study(design: &SimDesign, lambdas: &[f64], n_grid: &[usize], reps: usize) -> Result<()> {
    design.validate()?;
    if reps == 0 || lambdas.is_empty() || n_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "a study needs at least one replication, lambda and sample size".into(),
        ));
    }
    for &n in n_grid {
        design.with_n(n).validate()?;
    }
    for &l in lambdas {
        crate::divergence::check_lambda(l)?;
    }
    Ok(())
}

/// Runs `per_rep` for every replication of every sample size in parallel and
/// returns the outputs in (N, replication) order.
fn replicate<T, F>(design: &SimDesign, n_grid: &[usize], reps: usize, per_rep: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(&Dataset) -> T + Sync,
{
    n_grid
        .iter()
        .map(|&n| {
            let cell_design = design.with_n(n);
            (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = replication_rng(design.seed, n, rep);
                    let data = generate(&cell_design, &mut rng)?;
                    Ok(per_rep(&data))
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean squared Euclidean error `‖β̂_λ - β₀‖²` per (λ, N).
pub fn mse_study(design: &SimDesign, lambdas: &[f64], n_grid: &[usize], reps: usize) -> Result<StudyResult> {
    check_study(design, lambdas, n_grid, reps)?;
    let beta0 = design.beta()?;
    let opts = FitOptions::default();
    let outputs = replicate(design, n_grid, reps, |data| {
        lambdas
            .iter()
            .map(|&l| match minimize_dpd(data, l, &opts) {
                Ok(m) if m.converged => Some((m.beta_hat.values() - beta0.values()).map(|e| e * e)),
                _ => None,
            })
            .collect::<Vec<Option<DVector<f64>>>>()
    })?;
    let mut cells = Vec::new();
    for (&n, per_n) in n_grid.iter().zip(&outputs) {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let valid: Vec<&DVector<f64>> = per_n.iter().filter_map(|r| r[li].as_ref()).collect();
            if valid.is_empty() {
                return Err(Error::StudyFailed { lambda, n });
            }
            let totals: Vec<f64> = valid.iter().map(|e| e.sum()).collect();
            let (value, mc_se) = mean_and_se(&totals);
            let mut per_coordinate = vec![0.0; beta0.dims().nu()];
            for e in &valid {
                for (acc, v) in per_coordinate.iter_mut().zip(e.iter()) {
                    *acc += v;
                }
            }
            per_coordinate.iter_mut().for_each(|v| *v /= valid.len() as f64);
            cells.push(StudyCell {
                lambda,
                n,
                metric: "mse".into(),
                value,
                mc_se,
                valid_reps: valid.len(),
                discarded: reps - valid.len(),
                per_coordinate,
            });
        }
    }
    Ok(finish(StudyKind::Mse, design.seed, reps, cells))
}

fn finish(kind: StudyKind, seed: u64, reps: usize, cells: Vec<StudyCell>) -> StudyResult {
    let flagged = cells
        .iter()
        .any(|c| c.discarded as f64 >= DISCARD_FLAG_RATE * reps as f64);
    StudyResult {
        kind,
        seed,
        reps,
        cells,
        flagged,
    }
}

/// Empirical rejection rate of `W_N > χ²_{r,α}` per (λ, N). With data
/// generated under the null this is the level, otherwise the power.
pub fn rejection_study(
    design: &SimDesign,
    lambdas: &[f64],
    n_grid: &[usize],
    reps: usize,
    hyp: &LinearHypothesis,
    alpha: f64,
) -> Result<StudyResult> {
    check_study(design, lambdas, n_grid, reps)?;
    if hyp.nu() != design.dims()?.nu() {
        return Err(Error::mismatch("hypothesis vs design", design.dims()?.nu(), hyp.nu()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("significance level must lie in (0, 1], got {alpha}")));
    }
    let opts = FitOptions::default();
    let outputs = replicate(design, n_grid, reps, |data| {
        lambdas
            .iter()
            .map(|&l| {
                let fit = fit_mdpde(data, l, &opts).ok().filter(|f| f.converged)?;
                let w = wald_statistic(&fit, hyp).ok()?;
                w.reject(alpha).ok()
            })
            .collect::<Vec<Option<bool>>>()
    })?;
    let mut cells = Vec::new();
    for (&n, per_n) in n_grid.iter().zip(&outputs) {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let valid: Vec<f64> = per_n
                .iter()
                .filter_map(|r| r[li])
                .map(|reject| if reject { 1.0 } else { 0.0 })
                .collect();
            if valid.is_empty() {
                return Err(Error::StudyFailed { lambda, n });
            }
            let rate = valid.iter().sum::<f64>() / valid.len() as f64;
            cells.push(StudyCell {
                lambda,
                n,
                metric: "rejection_rate".into(),
                value: rate,
                mc_se: (rate * (1.0 - rate) / valid.len() as f64).sqrt(),
                valid_reps: valid.len(),
                discarded: reps - valid.len(),
                per_coordinate: Vec::new(),
            });
        }
    }
    Ok(finish(StudyKind::Rejection, design.seed, reps, cells))
}

/// Level study: the design must satisfy the hypothesis.
pub fn level_study(
    design: &SimDesign,
    lambdas: &[f64],
    n_grid: &[usize],
    reps: usize,
    hyp: &LinearHypothesis,
    alpha: f64,
) -> Result<StudyResult> {
    let deviation = hyp.deviation(&design.beta()?)?.amax();
    if deviation > 1e-8 {
        return Err(Error::NullViolated { deviation });
    }
    rejection_study(design, lambdas, n_grid, reps, hyp, alpha)
}

/// Power study: the design is an alternative to the hypothesis.
pub fn power_study(
    design_alt: &SimDesign,
    lambdas: &[f64],
    n_grid: &[usize],
    reps: usize,
    hyp: &LinearHypothesis,
    alpha: f64,
) -> Result<StudyResult> {
    if hyp.deviation(&design_alt.beta()?)?.amax() == 0.0 {
        return Err(Error::NullParameter);
    }
    rejection_study(design_alt, lambdas, n_grid, reps, hyp, alpha)
}

/// Mean selected `λ_opt` per sample size; the cell's `lambda` field holds
/// the pilot value.
pub fn tuning_study(design: &SimDesign, cfg: &TuningConfig, n_grid: &[usize], reps: usize) -> Result<StudyResult> {
    check_study(design, &[cfg.pilot_lambda], n_grid, reps)?;
    let outputs = replicate(design, n_grid, reps, |data| {
        select_lambda(data, cfg).ok().map(|t| t.lambda_opt)
    })?;
    let mut cells = Vec::new();
    for (&n, per_n) in n_grid.iter().zip(&outputs) {
        let valid: Vec<f64> = per_n.iter().filter_map(|v| *v).collect();
        if valid.is_empty() {
            return Err(Error::StudyFailed {
                lambda: cfg.pilot_lambda,
                n,
            });
        }
        let (value, mc_se) = mean_and_se(&valid);
        cells.push(StudyCell {
            lambda: cfg.pilot_lambda,
            n,
            metric: "lambda_opt".into(),
            value,
            mc_se,
            valid_reps: valid.len(),
            discarded: reps - valid.len(),
            per_coordinate: Vec::new(),
        });
    }
    Ok(finish(StudyKind::Tuning, design.seed, reps, cells))
}

/// Study description as read from a design file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub kind: StudyKind,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `β_index = value` for rejection studies.
    #[serde(default)]
    pub hypothesis: Option<CoefficientNull>,
    /// Grid step and pilot for tuning studies.
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub pilot_lambda: Option<f64>,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientNull {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub design: SimDesign,
    pub study: StudySpec,
}

impl StudyFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn run(&self) -> Result<StudyResult> {
        let s = &self.study;
        match s.kind {
            StudyKind::Mse => mse_study(&self.design, &s.lambdas, &s.n_grid, s.reps),
            StudyKind::Rejection => {
                let null = s.hypothesis.ok_or_else(|| {
                    Error::InvalidArgument("rejection study needs a [study.hypothesis] table".into())
                })?;
                let hyp = LinearHypothesis::single(self.design.dims()?.nu(), null.index, null.value)?;
                rejection_study(&self.design, &s.lambdas, &s.n_grid, s.reps, &hyp, s.alpha)
            }
            StudyKind::Tuning => {
                let step = s.grid_step.unwrap_or(0.05);
                let cfg = TuningConfig {
                    pilot_lambda: s.pilot_lambda.unwrap_or(0.3),
                    grid: crate::tuning::lambda_grid(0.0, step, 1.0)?,
                    fit: FitOptions::default(),
                };
                tuning_study(&self.design, &cfg, &s.n_grid, s.reps)
            }
        }
    }
}
