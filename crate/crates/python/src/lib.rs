//! Python bindings. Datasets are passed as a covariate matrix without the
//! intercept column plus a matrix of per-row category counts, the last
//! column being the baseline category.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use plrm::inference::wald_statistic;
use plrm::robustness::{if_single_index, leverage_probe, ContaminationPoint};
use plrm::simulation::StudyFile;
use plrm::tuning::{lambda_grid, select_lambda as select, TuningConfig};
use plrm::{
    category_probabilities, fit_mdpde, CovariateRow, Dataset, FitOptions, FitResult, LinearHypothesis, ModelDims,
    ParameterVector,
};

fn err(e: plrm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dataset(x: &[Vec<f64>], y: &[Vec<f64>]) -> plrm::Result<Dataset> {
    let k = x.first().map_or(0, Vec::len);
    let categories = y.first().map_or(0, Vec::len);
    if categories < 2 {
        return Err(plrm::Error::InvalidArgument("y needs at least two category columns".into()));
    }
    let counts = y
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                        Ok(v as u32)
                    } else {
                        Err(plrm::Error::InvalidArgument(format!("count {v} is not a non-negative integer")))
                    }
                })
                .collect::<plrm::Result<Vec<u32>>>()
        })
        .collect::<plrm::Result<Vec<_>>>()?;
    Dataset::from_counts(ModelDims::new(k, categories - 1)?, x, &counts)
}

fn options(grouped_scaling: bool) -> FitOptions {
    FitOptions {
        grouped_scaling,
        ..FitOptions::default()
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fit_dict<'py>(py: Python<'py>, fit: &FitResult, names: &[String]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lambda", fit.lambda)?;
    d.set_item("beta", fit.beta_hat.to_vec())?;
    d.set_item("se", fit.se.clone())?;
    d.set_item("z", fit.z_values())?;
    d.set_item("names", names.to_vec())?;
    d.set_item("converged", fit.converged)?;
    d.set_item("iterations", fit.iterations)?;
    d.set_item("objective", fit.objective)?;
    d.set_item("divergence", fit.divergence)?;
    d.set_item("sandwich", rows(&fit.sandwich))?;
    d.set_item("psi", rows(&fit.psi))?;
    d.set_item("omega", rows(&fit.omega))?;
    Ok(d)
}

/// Fits the model at tuning parameter `lam`.
#[pyfunction]
#[pyo3(signature = (x, y, lam = 0.0, grouped_scaling = true))]
fn fit<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    lam: f64,
    grouped_scaling: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&x, &y).map_err(err)?;
    let fit = py.detach(|| fit_mdpde(&data, lam, &options(grouped_scaling))).map_err(err)?;
    fit_dict(py, &fit, &data.coefficient_names())
}

/// Category probabilities at covariates `x` (without intercept) for a flat
/// category-major `beta`.
#[pyfunction]
fn probabilities(x: Vec<f64>, beta: Vec<f64>, categories: usize) -> PyResult<Vec<f64>> {
    if categories < 2 {
        return Err(PyValueError::new_err("categories must be at least 2"));
    }
    let dims = ModelDims::new(x.len(), categories - 1).map_err(err)?;
    let beta = ParameterVector::new(dims, beta).map_err(err)?;
    let row = CovariateRow::with_intercept(&x).map_err(err)?;
    Ok(category_probabilities(&row, &beta).map_err(err)?.as_slice().to_vec())
}

/// Wald-type test of `Lᵀβ = h`, with `l_rows` the rows of `Lᵀ`.
#[pyfunction]
#[pyo3(signature = (x, y, l_rows, h, lam = 0.0, grouped_scaling = true))]
fn wald<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    l_rows: Vec<Vec<f64>>,
    h: Vec<f64>,
    lam: f64,
    grouped_scaling: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&x, &y).map_err(err)?;
    let hyp = LinearHypothesis::from_rows(data.dims().nu(), &l_rows, h).map_err(err)?;
    let fit = py.detach(|| fit_mdpde(&data, lam, &options(grouped_scaling))).map_err(err)?;
    let w = wald_statistic(&fit, &hyp).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("statistic", w.statistic)?;
    d.set_item("df", w.df)?;
    d.set_item("p_value", w.p_value)?;
    d.set_item("lambda", lam)?;
    Ok(d)
}

/// Data-driven tuning parameter over `start:step:end` around a pilot fit.
#[pyfunction]
#[pyo3(signature = (x, y, grid = (0.0, 0.05, 1.0), pilot = 0.3))]
fn select_lambda<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    grid: (f64, f64, f64),
    pilot: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&x, &y).map_err(err)?;
    let cfg = TuningConfig {
        pilot_lambda: pilot,
        grid: lambda_grid(grid.0, grid.1, grid.2).map_err(err)?,
        fit: FitOptions::default(),
    };
    let trace = py.detach(|| select(&data, &cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("lambda_opt", trace.lambda_opt)?;
    d.set_item("beta_opt", trace.beta_opt.to_vec())?;
    d.set_item("pilot", trace.pilot.to_vec())?;
    let records = PyList::empty(py);
    for r in &trace.records {
        let rd = PyDict::new(py);
        rd.set_item("lambda", r.lambda)?;
        rd.set_item("bias_sq", r.bias_sq)?;
        rd.set_item("variance", r.variance)?;
        rd.set_item("mse", r.mse)?;
        records.append(rd)?;
    }
    d.set_item("records", records)?;
    Ok(d)
}

/// Influence function at `beta` when row `row` (0-based) moves to
/// `category`, optionally at a leverage probe of norm `x_scale`.
#[pyfunction]
#[pyo3(signature = (x, y, beta, lam, row, category, x_scale = None))]
fn influence(
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    beta: Vec<f64>,
    lam: f64,
    row: usize,
    category: usize,
    x_scale: Option<f64>,
) -> PyResult<Vec<f64>> {
    let data = dataset(&x, &y).map_err(err)?;
    let beta = ParameterVector::new(data.dims(), beta).map_err(err)?;
    if row >= data.len() {
        return Err(PyValueError::new_err(format!("row {row} out of range")));
    }
    let mut cp = ContaminationPoint::at_category(row, category, data.dims().categories()).map_err(err)?;
    if let Some(scale) = x_scale {
        cp = cp.with_covariates(leverage_probe(&data.rows()[row].x, scale).map_err(err)?);
    }
    Ok(if_single_index(&beta, &data, lam, &cp).map_err(err)?.iter().copied().collect())
}

/// Runs a study from the text of a TOML design file and returns its long
/// CSV table.
#[pyfunction]
#[pyo3(signature = (design, seed = None))]
fn simulate(py: Python<'_>, design: &str, seed: Option<u64>) -> PyResult<String> {
    let mut file = StudyFile::from_toml(design).map_err(err)?;
    if let Some(seed) = seed {
        file.design.seed = seed;
    }
    let study = py.detach(|| file.run()).map_err(err)?;
    let mut buf = Vec::new();
    study.write_csv(&mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn plrm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(wald, m)?)?;
    m.add_function(wrap_pyfunction!(select_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(influence, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_must_be_integral() {
        let x = vec![vec![0.1], vec![0.2]];
        assert!(dataset(&x, &[vec![1.0, 0.0], vec![0.0, 1.0]]).is_ok());
        assert!(dataset(&x, &[vec![0.5, 0.5], vec![0.0, 1.0]]).is_err());
        assert!(dataset(&x, &[vec![1.0], vec![1.0]]).is_err());
    }
}
