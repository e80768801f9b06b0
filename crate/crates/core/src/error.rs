use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient design matrix; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    /// Ψ (or Ĵ) failed the reciprocal-condition gate.
    #[error("information matrix is numerically singular (reciprocal condition {rcond:.3e})")]
    SingularInformation { rcond: f64 },

    #[error("contrast covariance L^T M L is numerically singular (reciprocal condition {rcond:.3e})")]
    SingularContrast { rcond: f64 },

    #[error("parameter satisfies the null hypothesis; the power approximation is undefined there")]
    NullParameter,

    #[error("hypothesis violated at the supplied null parameter (max deviation {deviation:.3e})")]
    NullViolated { deviation: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("lambda selection failed: every grid point was skipped")]
    TuningFailed,

    #[error("simulation study failed: no valid replication for lambda={lambda}, N={n}")]
    StudyFailed { lambda: f64, n: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn mismatch(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
