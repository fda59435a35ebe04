use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("utterance too short: {got} samples, need at least {need}")]
    UtteranceTooShort { got: usize, need: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative frequency: {0} Hz")]
    NegativeFrequency(f64),

    #[error("ensemble spectrum degenerate")]
    DegenerateSpectrum,

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("insufficient training frames: have {got}, need at least {need}; reduce the component count")]
    InsufficientFrames { got: usize, need: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("score set must contain both genuine and spoof trials")]
    SingleClass,

    #[error("protocol error at line {line}: {reason}")]
    Protocol { line: usize, reason: String },

    #[error("unsupported wav: {0}")]
    Wav(String),

    #[error("cache corruption: {0}")]
    CacheCorrupt(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw io::Error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable one-word category for machine-parsable CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::UtteranceTooShort { .. } => "audio",
            Error::Config(_) => "config",
            Error::DimensionMismatch(_) => "dimension",
            Error::NegativeFrequency(_) => "domain",
            Error::DegenerateSpectrum => "warp",
            Error::FingerprintMismatch(_) => "fingerprint",
            Error::InsufficientFrames { .. } => "training",
            Error::NonFinite(_) => "numeric",
            Error::SingleClass => "eval",
            Error::Protocol { .. } => "protocol",
            Error::Wav(_) => "audio",
            Error::CacheCorrupt(_) => "cache",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
