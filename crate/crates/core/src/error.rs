use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("illumination angle out of band on the {axis} axis: k*sin(theta) = {spatial_freq:.6e} rad/m exceeds the grid limit {limit:.6e} rad/m")]
    AngleOutOfBand {
        axis: char,
        spatial_freq: f64,
        limit: f64,
    },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent window parameters (N = {n}, N_w = {n_w}, N_h = {n_h}); these N, N_w imply N_h = {implied_n_h} and M = {implied_m}")]
    WindowMismatch {
        n: usize,
        n_w: usize,
        n_h: usize,
        implied_n_h: isize,
        implied_m: isize,
    },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("angle {index}: {source}")]
    AtAngle {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("missing artifact: {0}")]
    Missing(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::AngleOutOfBand { .. }
                | Error::ShapeMismatch { .. }
                | Error::InvalidParameter(_)
                | Error::WindowMismatch { .. }
                | Error::Config(_)
                | Error::ManifestMismatch(_)
        )
    }
}
