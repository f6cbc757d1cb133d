use thiserror::Error;

/// Errors produced by the engine and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("kd-tree construction failed: leaf {leaf} would receive no queries")]
    EmptyLeaf { leaf: usize },

    #[error("engine build failed: leaf {leaf} has no usable training samples")]
    LeafWithoutSamples { leaf: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unrecognized engine file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported engine file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("engine file is truncated or corrupt: {0}")]
    Truncated(String),

    #[error("engine file checksum mismatch (file is corrupt)")]
    ChecksumMismatch,

    #[error("csv format error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: input errors, contract violations and
    /// infeasibility reports are distinguishable by code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Csv(_)
            | Error::Io(_)
            | Error::BadMagic
            | Error::UnsupportedVersion { .. }
            | Error::Truncated(_)
            | Error::ChecksumMismatch => 2,
            Error::DimensionMismatch { .. }
            | Error::Contract(_)
            | Error::UndefinedMetric(_)
            | Error::EmptyLeaf { .. }
            | Error::LeafWithoutSamples { .. } => 3,
            Error::Infeasible(_) => 4,
        }
    }
}
