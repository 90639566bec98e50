//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent or unresolvable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller supplied an input that violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// Data violates a structural invariant (dimensions, duplicates).
    #[error("data error: {0}")]
    Data(String),

    /// Contrastive selection left one side empty.
    #[error("selection error: the {side} set is empty")]
    EmptySelection { side: &'static str },

    /// Two samples were requested with the same rng seed.
    #[error("seed collision: seed {seed} used more than once")]
    SeedCollision { seed: u64 },

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        message: String,
        line: Option<usize>,
        raw: Option<String>,
    },

    /// Transport-level failure after all retries were spent.
    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },

    /// Non-retryable rejection by the remote endpoint (4xx).
    #[error("request rejected with status {status}: {body}")]
    Request { status: u16, body: String },

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("versioning error: expected {expected}, found {found}")]
    Versioning { expected: String, found: String },

    /// A pipeline stage failed; partial artifacts are left on disk.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(message: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            line: None,
            raw: None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code for this error class.
    ///
    /// 2 configuration, 3 data/parse, 4 external service, 5 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_)
            | Error::Data(_)
            | Error::EmptySelection { .. }
            | Error::SeedCollision { .. }
            | Error::Parse { .. }
            | Error::Conditioning(_)
            | Error::Training(_)
            | Error::UndefinedMetric(_)
            | Error::DegenerateData(_)
            | Error::Versioning { .. }
            | Error::Io { .. }
            | Error::Json(_) => 3,
            Error::Transport { .. } | Error::Request { .. } => 4,
            Error::Invariant(_) => 5,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
