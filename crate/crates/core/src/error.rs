use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("format error: {0}")]
    BinaryFormat(String),
    #[error("unknown phase `{0}`")]
    Vocabulary(String),
    #[error("sampling budget {budget} is below the {required} mandatory keyframes")]
    Budget { budget: usize, required: usize },
    #[error("training error in `{param}`: {msg}")]
    Training { param: String, msg: String },
    #[error("checkpoint load error for `{tensor}`: {msg}")]
    Load { tensor: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format { line, msg: msg.into() }
    }
}
