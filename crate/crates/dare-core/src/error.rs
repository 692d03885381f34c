use thiserror::Error;

#[derive(Debug, Error)]
pub enum DareError {
    #[error("matrix is not symmetric: ||S - S^T||_F = {asym:.3e} (tolerance {tol:.3e})")]
    NotSymmetric { asym: f64, tol: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:.3e}, largest {max_eig:.3e}")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("effective rank undefined for the zero matrix")]
    ZeroMatrix,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment {env} has a single class present")]
    SingleClass { env: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DareError>;
