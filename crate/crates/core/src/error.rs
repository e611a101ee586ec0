use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("SLSS ID {0} out of range 0..=335")]
    InvalidSlss(u32),
    #[error("symbol {symbol} does not carry {what}")]
    InvalidSymbol { symbol: usize, what: &'static str },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("signal is empty")]
    EmptySignal,
    #[error("invalid RFF profile: {0}")]
    InvalidProfile(String),
    #[error("EVM {evm:.2}% exceeds the {limit}% limit")]
    EvmExceeded { evm: f64, limit: f64 },
    #[error("fading realization covers {available} samples, signal needs {needed}")]
    FadingTooShort { needed: usize, available: usize },
    #[error("no correlation peak above threshold")]
    NoSyncPeak,
    #[error("detected PSSS root {detected}, configured SLSS uses root {expected}")]
    SlssMismatch { detected: u32, expected: u32 },
    #[error("index out of range: need sample {needed}, signal has {len}")]
    OutOfRange { needed: usize, len: usize },
    #[error("invalid window: head {head} + tail {tail} for {points}-point estimate")]
    InvalidWindow { head: usize, tail: usize, points: usize },
    #[error("missing estimate for symbol {0}")]
    MissingSymbol(usize),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("sync failed on {failures} of {total} subframes, limit is {limit}")]
    SyncFailureRate {
        failures: usize,
        total: usize,
        limit: f64,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidSlss(_)
            | Error::InvalidProfile(_)
            | Error::EvmExceeded { .. }
            | Error::InvalidWindow { .. } => 2,
            Error::SyncFailureRate { .. } => 3,
            Error::Io { .. } => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
