//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the open domain of the family
    /// (mean, natural-parameter or observation domain).
    #[error("domain violation: {0}")]
    Domain(String),

    /// The requested operation is not defined for this family
    /// (e.g. a base-measure score of a discrete family).
    #[error("{op} is not supported for the {family} family")]
    UnsupportedFamily { family: &'static str, op: &'static str },

    /// Estimator hypotheses are violated (wrong family, nuisance parameter
    /// outside the admissible range, ...).
    #[error("assumption violation: {0}")]
    Assumption(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// A computation produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid configuration (bad grid, missing section, unknown key, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A persisted artifact carries an incompatible schema version.
    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn assumption(msg: impl Into<String>) -> Self {
        Error::Assumption(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
