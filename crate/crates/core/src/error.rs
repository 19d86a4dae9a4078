use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record file contained a line that could not be decoded.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// The teacher backend does not support the requested output.
    #[error("capability error: {0}")]
    Capability(String),

    /// A remote or cached teacher failed to label one or more pairs.
    #[error("teacher failed for pair(s) [{}]: {message}", pair_ids.join(", "))]
    Teacher {
        pair_ids: Vec<String>,
        message: String,
    },

    /// Self-distillation aborted while labeling a round.
    #[error("self-distillation round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A loss or gradient evaluated to NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An upstream artifact is absent; names the subcommand that produces it.
    #[error("missing artifact {path}: run `csrm {producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Json(_) => "json",
            Error::Capability(_) => "capability",
            Error::Teacher { .. } => "teacher",
            Error::Round { .. } => "round",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite(_) => "non_finite",
            Error::MissingArtifact { .. } => "missing_artifact",
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
