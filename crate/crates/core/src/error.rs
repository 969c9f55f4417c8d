use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset handling, the solvers and the CLI harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("label {label} out of range 1..={c}")]
    LabelOutOfRange { label: usize, c: usize },

    #[error("view {view_id}: expected dimension {expected}, got {got}")]
    ViewDimensionMismatch {
        view_id: usize,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,

    #[error("metric matrix is indefinite (eigenvalue {value:.3e} below tolerance)")]
    IndefiniteMetric { value: f64 },

    #[error("requested {requested} eigenpairs but usable subspace has dimension {usable}")]
    RankTooLarge { requested: usize, usable: usize },

    #[error("rank must satisfy 1 <= s <= c-1, got s={s} with c={c}")]
    InvalidRank { s: usize, c: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} has {count} samples, fewer than {k} folds")]
    ClassSmallerThanFolds { class: usize, count: usize, k: usize },

    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-finite objective during descent at iteration {iter}")]
    DivergedObjective { iter: usize },

    #[error("verification failed: {failed} of {total} checks")]
    VerificationFailed { failed: usize, total: usize },

    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidParameter(_) => 1,
            Error::VerificationFailed { .. } => 3,
            _ => 2,
        }
    }
}
