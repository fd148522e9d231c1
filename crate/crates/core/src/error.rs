use std::path::PathBuf;

/// Errors produced by the numerical routines and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range 1..={dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("index set is empty")]
    EmptyIndexSet,

    #[error("symmetric eigensolver did not converge for `{label}` (dimension {dim}, cap {max_iterations} iterations)")]
    NonConvergence {
        label: String,
        dim: usize,
        max_iterations: usize,
    },

    #[error("eigenvalue {index} is not strictly positive ({value})")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("zero eigenvalue gap between the index set and its complement")]
    ZeroGap,

    #[error("all eigenvalues are equal; the complement sum and gap are undefined")]
    DegenerateSpectrum,

    #[error("superset violates |lambda_i - lambda_j| >= lambda_i/2 at i={i}, j={j}")]
    SupersetGapViolation { i: usize, j: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("perturbed eigenvalue {i} coincides with unperturbed eigenvalue {j}")]
    CoincidentEigenvalues { i: usize, j: usize },

    #[error("matrix is not symmetric: entries ({i},{j}) differ by {deviation:e}")]
    Asymmetric { i: usize, j: usize, deviation: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
