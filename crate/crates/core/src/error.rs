use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    ParseRow { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing upstream artifact: run stage `{stage}` first")]
    MissingArtifact { stage: String },

    #[error("unknown category index {index} for field `{field}`")]
    UnknownCategory { field: String, index: usize },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("endpoint rejected request ({status}): {message}")]
    Endpoint { status: u16, message: String },

    #[error("malformed endpoint response: {0}")]
    Content(String),

    #[error("numerical divergence at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: missing stage inputs map to 2,
    /// config validation failures to 3, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact { .. } => 2,
            Error::Config { .. } => 3,
            _ => 1,
        }
    }
}
