use std::path::PathBuf;

/// Errors produced by the engine and its command front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("search space of size {size} exceeds the enumeration cap {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("invalid value for {what}: {value}")]
    InvalidValue { what: &'static str, value: f64 },

    #[error("no architecture with FLOPs in [{lo}, {hi}] after {tries} draws")]
    BudgetStall { lo: u64, hi: u64, tries: usize },

    #[error("space fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),

    #[error("benchmark: {0}")]
    Benchmark(String),

    #[error("rankings do not cover the same items: {0}")]
    MismatchedItems(String),

    #[error("evaluator failed at {context}: {message}")]
    Evaluator { context: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn evaluator(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Evaluator {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failure at run time.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpace(_)
                | Error::InvalidArchitecture(_)
                | Error::SpaceTooLarge { .. }
                | Error::InvalidValue { .. }
                | Error::FingerprintMismatch { .. }
                | Error::MalformedSnapshot(_)
                | Error::Benchmark(_)
                | Error::MismatchedItems(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
