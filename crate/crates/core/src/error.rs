use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("matrix is not on the Stiefel manifold (‖UᵀU − I‖_F = {0:e})")]
    NotOrthonormal(f64),

    #[error("matrix is not tangent at the base point (‖ξᵀU + Uᵀξ‖_F = {0:e})")]
    NotTangent(f64),

    #[error("Cayley factor is singular; shrink the step size")]
    SingularCayley,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("cannot round the zero matrix onto the transportation polytope")]
    ZeroMatrix,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidMeasure(_) => "invalid_measure",
            Error::NotOrthonormal(_) => "not_orthonormal",
            Error::NotTangent(_) => "not_tangent",
            Error::SingularCayley => "singular_cayley",
            Error::NonFinite(_) => "non_finite",
            Error::ZeroMatrix => "zero_matrix",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
