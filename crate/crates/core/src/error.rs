use thiserror::Error;

/// Errors raised by the numerical layers (grids, bases, fitting, combination).
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "basis is numerically ill-conditioned: smallest Gram eigenvalue {min_eig:.3e} \
         is below {threshold:.3e} times the largest ({max_eig:.3e})"
    )]
    IllConditionedBasis {
        min_eig: f64,
        max_eig: f64,
        threshold: f64,
    },

    #[error(
        "rank deficiency during orthonormalization: column {column} has weighted norm \
         {norm:.3e} after projection (threshold {threshold:.3e})"
    )]
    RankDeficiency {
        column: usize,
        norm: f64,
        threshold: f64,
    },

    #[error("point {t} lies outside the domain [{lo}, {hi}]; extrapolation is not supported")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no mean model available for variable `{0}`")]
    MissingMeanModel(String),

    #[error("subject sets are misaligned: {0}")]
    Alignment(String),

    #[error("optimizer stalled: line search failed after {trials} trial steps (best objective {best_nll:.6})")]
    OptimizerStalled { trials: usize, best_nll: f64 },

    #[error("optimizer diverged: objective became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("all candidate fits failed:\n{0}")]
    AllFitsFailed(String),

    #[error("benchmark failed: {failures} of {replicates} replicates errored:\n{log}")]
    BenchmarkFailed {
        failures: usize,
        replicates: usize,
        log: String,
    },
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}

/// Errors raised while reading or writing external data files.
#[derive(Error, Debug)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: String },

    #[error("{path}: no usable observations after filtering")]
    Empty { path: String },

    #[error("malformed csv in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported model archive format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
}
