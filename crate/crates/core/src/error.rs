//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model I/O, fitting and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed structurally but a named field is malformed or
    /// inconsistent with the header.
    #[error("parse error in {path}: field `{field}`: {message}")]
    Parse {
        path: String,
        field: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input geometry does not determine a solution (rank-deficient pose
    /// system, coincident point clouds, ...).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    /// Edge set is empty; nearest-edge queries are undefined.
    #[error("no edge pixels available: {0}")]
    NoEdges(String),

    /// No occluding boundary vertices are visible under the current pose.
    #[error("degenerate view: {0}")]
    EmptyBoundary(String),

    /// A solver stopped without satisfying its convergence criterion.
    #[error("solver did not converge after {iterations} iterations: {message}")]
    NonConvergence { iterations: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
