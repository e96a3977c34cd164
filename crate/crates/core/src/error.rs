use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
///
/// Variants are grouped by cause so callers (the CLI in particular) can map
/// them onto stable exit codes: configuration problems, bad input data, and
/// numerical fit failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("law error: {0}")]
    Law(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("fit failed: {message}")]
    Fit {
        message: String,
        /// Final objective (or NaN) for every start, in start order.
        per_start: Vec<f64>,
    },

    #[error("plan error: {0}")]
    Plan(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Law(_) => ErrorKind::Config,
            Error::Fit { .. } | Error::Plan(_) => ErrorKind::Fit,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Fit,
}
