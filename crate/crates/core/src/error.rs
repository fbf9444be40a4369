use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single offending configuration field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_fields(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_fields(.0))]
    Validation(Vec<FieldError>),

    #[error("no converged solution after {iterations} iterations (residual {residual:e}, tol {tol:e})")]
    NonConvergence { iterations: usize, residual: f64, tol: f64 },

    #[error("Riccati iteration has no stabilizing solution: {0}")]
    NoStabilizingSolution(String),

    #[error("follower sample set is empty")]
    EmptyFollowerSet,

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("infeasible collision counts: ff={ff} + fl={fl} of {followers} followers, ll={ll} of {leaders} leaders")]
    InfeasibleCounts {
        ff: usize,
        fl: usize,
        ll: usize,
        followers: usize,
        leaders: usize,
    },

    #[error("value grid file {path}: {reason}")]
    GridFormat { path: PathBuf, reason: String },

    #[error("failed to persist {path}: {source}")]
    Persist {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation(vec![FieldError::new(field, message)])
    }

    pub(crate) fn persist(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Persist {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
