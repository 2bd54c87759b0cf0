//! Benchmark front end for the capsule-network engine.
//!
//! The binary exposes five subcommands — `train`, `eval`, `bench`, `params`,
//! `affine` — all driven by a flat `key = value` config file. Everything the
//! commands do is also available as library functions so the test suites can
//! call them directly.

pub mod affine_cmd;
pub mod bench;
pub mod cifar;
pub mod config;
pub mod datasets;
pub mod idx;
pub mod metrics;
pub mod params;
pub mod runmeta;
pub mod synth;
pub mod train;


/// CLI-level failure; the variant determines the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data format error: {0}")]
    DataFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::DataFormat(_) => 3,
            _ => 1,
        }
    }
}

impl From<capsbench_core::Error> for CliError {
    fn from(err: capsbench_core::Error) -> Self {
        match err {
            capsbench_core::Error::Config { detail } => CliError::Config(detail),
            capsbench_core::Error::Format { detail } => CliError::DataFormat(detail),
            other => CliError::Internal(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Number of eval worker threads: `CAPSBENCH_THREADS` caps the optional
/// parallel mode; unset or 1 keeps everything single-threaded.
pub fn eval_threads_from_env() -> usize {
    std::env::var("CAPSBENCH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
