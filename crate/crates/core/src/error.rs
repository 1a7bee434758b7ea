use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported image format")]
    UnsupportedFormat { path: PathBuf },

    #[error("{path}: corrupt or undecodable image: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}: cannot encode image: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("non-finite sample in {0}")]
    NonFinite(&'static str),

    #[error("missing external residual {0}")]
    MissingResidual(PathBuf),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("solver did not converge after {iterations} updates (KKT residual {kkt_residual:e})")]
    NonConvergence { iterations: usize, kkt_residual: f64 },

    #[error("model format `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { found: String, expected: &'static str },

    #[error("training set contains a generated-labeled entry: {0}")]
    GeneratedInTraining(String),

    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
