use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid too narrow: {what} loses {lost:.3e} of its mass outside +/-{half_width}")]
    GridTooNarrow {
        what: String,
        lost: f64,
        half_width: f64,
    },

    #[error(
        "resolution too coarse: std {std:.4e} is below 2x the grid spacing {spacing:.4e}; \
         raise n_points"
    )]
    Resolution { std: f64, spacing: f64 },

    #[error("density is not normalized (total mass {0})")]
    NotNormalized(f64),

    #[error("product annihilated all probability mass")]
    MassAnnihilated,

    #[error("aliasing guard: {0:.3e} of the convolved mass falls outside the representable range")]
    Aliasing(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error(
        "matrix construction failed: column {column} has no {weight}-subset of {rows} rows \
         sharing at most one row with earlier columns after {retries} retries"
    )]
    Construction {
        column: usize,
        weight: usize,
        rows: usize,
        retries: usize,
    },

    #[error("sigma_w = 0 has no closed form; use limit_params")]
    ZeroNoise,

    #[error("detection function is already positive at x0 = 0 (q must be < 1/2)")]
    PositiveAtOrigin,

    #[error("instance too large for brute force: n = {0} > {max}", max = crate::bp::BRUTE_FORCE_MAX_N)]
    TooLarge(usize),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
