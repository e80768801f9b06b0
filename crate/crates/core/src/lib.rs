//! Minimum density power divergence estimation for polytomous logistic
//! regression, with Wald-type tests, influence diagnostics, data-driven
//! tuning and a Monte-Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod divergence;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod report;
pub mod robustness;
pub mod simulation;
pub mod tuning;

pub use divergence::{dpd_objective, dpd_row, estimating_function, kl_row, reported_divergence, DpdConfig};
pub use error::{Error, Result};
pub use model::{
    category_probabilities, log_pmf, probability_jacobian, CovariateRow, Dataset, ModelDims, Observation,
    ParameterVector, ProbabilityVector, ResponseVector,
};
pub use estimator::{fit_mdpde, fit_path, minimize_dpd, omega_matrix, psi_matrix, sandwich_covariance, FitOptions, FitResult};
pub use inference::{
    approximate_power, contiguous_power, required_sample_size, wald_statistic, LinearHypothesis, LocalAlternative,
    SigmaSource, WaldResult,
};
pub use robustness::{if_all_indices, if_single_index, second_order_if_test, ContaminationPoint};
pub use tuning::{model_robust_j_hat, model_robust_v_hat, select_lambda, TuningConfig, TuningTrace};
pub use simulation::{contaminate, generate_pure, level_study, mse_study, power_study, SimDesign, StudyResult};
pub use ingest::{load_dataset, read_dataset, CovariateKind, CovariateSpec, SchemaSpec};
pub use report::{FitSummary, Provenance, Report, TestSummary};
