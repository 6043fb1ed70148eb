use std::path::PathBuf;

use thiserror::Error;

use crate::netsim::TrainingTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Jacobi sweeps did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("matrix is not positive definite: pivot {index} = {value:e}")]
    NotSpd { index: usize, value: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {value:e} below tolerance {tolerance:e}")]
    NotPsd { value: f64, tolerance: f64 },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("rows are not unit norm: {rows:?}")]
    NotUnitNorm { rows: Vec<usize> },

    #[error("index pair ({0}, {1}) is invalid for a matrix of order {2}")]
    InvalidPair(usize, usize, usize),

    #[error("need at least {needed} points for the fit, {found} survived filtering")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("eigenvalue {value:e} at rank {rank} is not positive")]
    NonPositiveEigenvalue { rank: usize, value: f64 },

    #[error("kernel is numerically singular at ranks {ranks:?}")]
    SingularKernel { ranks: Vec<usize> },

    #[error("projection completeness violated: relative error {0:e}")]
    Parseval(f64),

    #[error("gradient descent diverged at step {step} (loss {loss:e})")]
    Diverged {
        step: usize,
        loss: f64,
        trace: Box<TrainingTrace>,
    },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("row {0} has (near) zero norm and cannot be placed on the sphere")]
    ZeroVectorRow(usize),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than from the
    /// input files or the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NoConvergence { .. }
                | Error::NotSpd { .. }
                | Error::NotPsd { .. }
                | Error::SingularKernel { .. }
                | Error::Parseval(_)
                | Error::Diverged { .. }
                | Error::NonPositiveEigenvalue { .. }
                | Error::InsufficientPoints { .. }
                | Error::Domain(_)
                | Error::DegenerateInput(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Parse { .. }
                | Error::MissingArtifact(_)
                | Error::ZeroVectorRow(_)
        )
    }
}
