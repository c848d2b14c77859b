use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record could not be decoded. `line` is 1-based.
    #[error("line {line}: field `{field}`: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The statistic has no defined value for the given input, e.g. a
    /// correlation of constant vectors.
    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("annotation failed after {attempts} attempt(s): {message}; last reply: {raw:?}")]
    Annotation {
        attempts: u32,
        message: String,
        raw: Option<String>,
    },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
