use std::fmt;
use std::path::PathBuf;

use crate::conic::SolveStatus;
use crate::grid::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("case failed validation:\n{}", ViolationList(.0))]
    Validation(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed conic problem: {0}")]
    MalformedProblem(String),

    #[error("solver returned {status} ({context})")]
    Solver { status: SolveStatus, context: String },

    #[error("dispatch violates network physics: {0}")]
    Physics(String),

    #[error("interpolation grid of {points} points exceeds the cap of {cap}")]
    GridTooLarge { points: u128, cap: usize },

    #[error("unknown sampling model `{0}`")]
    UnknownModel(String),

    #[error("stage t={t}, scenario j={j}, grid point k={k}: {source}")]
    Stage {
        t: usize,
        j: usize,
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rollout of path {index}: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error once stage/rollout context has been peeled off.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Rollout { source, .. } => source.root_cause(),
            other => other,
        }
    }

    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self.root_cause(),
            Error::Solver { .. } | Error::Physics(_) | Error::MalformedProblem(_)
        )
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}
