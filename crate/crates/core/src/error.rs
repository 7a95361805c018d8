use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the odometry, mapping, back-end and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("scan is empty{}", context_suffix(.0))]
    EmptyScan(String),

    #[error("no map points in the neighborhood of the query")]
    EmptyNeighborhood,

    #[error("neighborhood has {found} points, at least {required} are needed")]
    DegenerateNeighborhood { found: usize, required: usize },

    #[error("only {found} residuals survived, at least {required} are needed")]
    TooFewResiduals { found: usize, required: usize },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("registration of scan {scan_index} failed after retry: {reason}")]
    RegistrationFailed { scan_index: usize, reason: String },

    #[error("malformed file {}: {reason}", path.display())]
    MalformedFile { path: PathBuf, reason: String },

    #[error("trajectory is too short for any evaluation segment")]
    NoSegments,

    #[error("elevation grid is degenerate: {valid} of {total} cells valid")]
    DegenerateGrid { valid: usize, total: usize },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
