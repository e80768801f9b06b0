//! Serializable run reports with provenance, written as JSON or as a long
//! CSV table.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::normal_sf;
use crate::error::Result;
use crate::estimator::FitResult;
use crate::inference::{Rejection, WaldResult};
use crate::simulation::StudyResult;
use crate::tuning::TuningTrace;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lower-case hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-6..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    /// Digest of the data file (or design file for simulations).
    pub input_hash: Option<String>,
    pub schema_hash: Option<String>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new() -> Self {
        Self {
            version: VERSION.to_string(),
            input_hash: None,
            schema_hash: None,
            seed: None,
        }
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    /// `None` when the standard error is zero.
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub divergence: f64,
    pub n_obs: usize,
    pub total_trials: f64,
    pub coefficients: Vec<CoefficientRow>,
}

impl FitSummary {
    pub fn from_fit(fit: &FitResult, names: &[String]) -> Self {
        let coefficients = fit
            .beta_hat
            .as_slice()
            .iter()
            .zip(&fit.se)
            .zip(names)
            .map(|((&estimate, &se), name)| {
                let z = Some(estimate / se).filter(|z| z.is_finite());
                CoefficientRow {
                    name: name.clone(),
                    estimate,
                    se,
                    z,
                    p_value: z.map(|z| (2.0 * normal_sf(z.abs())).min(1.0)),
                }
            })
            .collect();
        Self {
            lambda: fit.lambda,
            converged: fit.converged,
            iterations: fit.iterations,
            objective: fit.objective,
            divergence: fit.divergence,
            n_obs: fit.n_obs,
            total_trials: fit.total_trials,
            coefficients,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub lambda: f64,
    pub hypothesis: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject_at: Vec<Rejection>,
}

impl TestSummary {
    pub fn new(lambda: f64, hypothesis: &str, wald: &WaldResult) -> Self {
        Self {
            lambda,
            hypothesis: hypothesis.to_string(),
            statistic: wald.statistic,
            df: wald.df,
            p_value: wald.p_value,
            reject_at: wald.reject_at.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub lambda: f64,
    pub row: usize,
    pub category: String,
    /// Norm of the probe covariates, `None` for the row's own covariates.
    pub x_scale: Option<f64>,
    pub norm: f64,
    pub influence: Vec<f64>,
}

/// Problems that did not abort the run, e.g. a grid point whose fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub lambda: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub provenance: Provenance,
    #[serde(default)]
    pub fits: Vec<FitSummary>,
    #[serde(default)]
    pub tests: Vec<TestSummary>,
    #[serde(default)]
    pub tuning: Option<TuningTrace>,
    #[serde(default)]
    pub influence: Vec<InfluenceRow>,
    #[serde(default)]
    pub study: Option<StudyResult>,
    #[serde(default)]
    pub issues: Vec<Issue>,
}

impl Report {
    pub fn new(command: &str, provenance: Provenance) -> Self {
        Self {
            command: command.to_string(),
            provenance,
            fits: Vec::new(),
            tests: Vec::new(),
            tuning: None,
            influence: Vec::new(),
            study: None,
            issues: Vec::new(),
        }
    }

    /// Every fit converged.
    pub fn converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged) && self.tuning.as_ref().is_none_or(|t| t.pilot_converged)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Long format: `section,lambda,N,label,metric,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["section", "lambda", "N", "label", "metric", "value"])?;
        let mut emit = |section: &str, lambda: f64, n: String, label: &str, metric: &str, value: String| {
            w.write_record([section, &format_f64(lambda), &n, label, metric, &value])
        };
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        for fit in &self.fits {
            let n = format_f64(fit.total_trials);
            emit("fit", fit.lambda, n.clone(), "", "converged", fit.converged.to_string())?;
            emit("fit", fit.lambda, n.clone(), "", "divergence", format_f64(fit.divergence))?;
            for c in &fit.coefficients {
                emit("fit", fit.lambda, n.clone(), &c.name, "estimate", format_f64(c.estimate))?;
                emit("fit", fit.lambda, n.clone(), &c.name, "se", format_f64(c.se))?;
                emit("fit", fit.lambda, n.clone(), &c.name, "z", opt(c.z))?;
                emit("fit", fit.lambda, n.clone(), &c.name, "p_value", opt(c.p_value))?;
            }
        }
        for t in &self.tests {
            emit("test", t.lambda, String::new(), &t.hypothesis, "statistic", format_f64(t.statistic))?;
            emit("test", t.lambda, String::new(), &t.hypothesis, "df", t.df.to_string())?;
            emit("test", t.lambda, String::new(), &t.hypothesis, "p_value", format_f64(t.p_value))?;
        }
        if let Some(trace) = &self.tuning {
            for r in &trace.records {
                emit("tuning", r.lambda, String::new(), "", "bias_sq", format_f64(r.bias_sq))?;
                emit("tuning", r.lambda, String::new(), "", "variance", format_f64(r.variance))?;
                emit("tuning", r.lambda, String::new(), "", "mse", format_f64(r.mse))?;
            }
            emit("tuning", trace.lambda_opt, String::new(), "", "lambda_opt", format_f64(trace.lambda_opt))?;
        }
        for r in &self.influence {
            let label = format!("row{}:{}", r.row, r.category);
            emit("influence", r.lambda, String::new(), &label, "x_scale", opt(r.x_scale))?;
            emit("influence", r.lambda, String::new(), &label, "norm", format_f64(r.norm))?;
        }
        if let Some(study) = &self.study {
            for c in &study.cells {
                emit("study", c.lambda, c.n.to_string(), "", &c.metric, format_f64(c.value))?;
                emit("study", c.lambda, c.n.to_string(), "", &format!("{}_se", c.metric), format_f64(c.mc_se))?;
            }
        }
        for issue in &self.issues {
            let lambda = opt(issue.lambda);
            w.write_record(["issue", &lambda, "", "", "message", &issue.message])?;
        }
        w.flush()?;
        Ok(())
    }
}
