use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed binary input; `offset` is the byte position where decoding stopped.
    #[error("{msg} at offset {offset}")]
    Format { offset: usize, msg: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("no trained classes")]
    NoTrainedClasses,
    #[error("unknown class {0}")]
    UnknownClass(u32),
    #[error("matrix numerically singular after shrinkage (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

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

    /// Short machine-parsable tag for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::DimensionMismatch { .. } => "dimension",
            Error::NonFinite => "non_finite",
            Error::NoTrainedClasses => "no_trained_classes",
            Error::UnknownClass(_) => "unknown_class",
            Error::Singular { .. } => "singular",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::Phase { source, .. } => source.kind(),
        }
    }
}

/// Attach the experiment phase to an error.
pub(crate) trait PhaseContext<T> {
    fn phase(self, phase: &'static str) -> Result<T>;
}

impl<T> PhaseContext<T> for Result<T> {
    fn phase(self, phase: &'static str) -> Result<T> {
        self.map_err(|e| Error::Phase {
            phase,
            source: Box::new(e),
        })
    }
}
