use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is not finite")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("gate {gate} is not defined for cell kind {kind}")]
    GateAbsent { gate: String, kind: String },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure(_) | Error::Divergence { .. } | Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
