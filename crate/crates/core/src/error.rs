use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("payload length error: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("unsupported version {found} (max supported {supported})")]
    Version { found: u32, supported: u32 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("underdetermined fit: {masked} masked voxels for {coefficients} coefficients")]
    Underdetermined { masked: usize, coefficients: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stage-order error: {0}")]
    StageOrder(String),

    #[error("config fingerprint mismatch: checkpoint {found:016x}, config {expected:016x} (use --force to override)")]
    Fingerprint { found: u64, expected: u64 },

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code family for the command-line front end:
    /// 1 config, 2 data/manifest, 3 file format, 4 training contract.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::MissingArtifact { .. } | Error::Io { .. } => 2,
            Error::Format(_)
            | Error::Length { .. }
            | Error::Version { .. }
            | Error::Unsupported(_) => 3,
            Error::StageOrder(_) | Error::Fingerprint { .. } => 4,
            _ => 4,
        }
    }
}
