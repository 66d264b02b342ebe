use std::path::PathBuf;

use num_complex::Complex64;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension {n}: at least 2 levels are required")]
    InvalidDimension { n: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fixed point did not converge at z = {z} after {iterations} iterations (residual {residual:e})")]
    Convergence {
        z: Complex64,
        iterations: usize,
        residual: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} = {value} lies outside the solved grid [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("near-resonant denominator |{magnitude:e}| below threshold {threshold:e}")]
    NearResonance { magnitude: f64, threshold: f64 },

    #[error("realization {index} failed: {message}")]
    Realization { index: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {count} samples accumulated, at least {required} required")]
    InsufficientData { count: u64, required: u64 },

    #[error("incompatible checkpoint: expected config hash {expected}, found {found}")]
    IncompatibleCheckpoint { expected: String, found: String },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
