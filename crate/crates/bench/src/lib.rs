//! Benchmark problems, comparative experiments and result files for the
//! `amis-bench` command-line tool.

pub mod config;
pub mod experiments;
pub mod output;

use amis_core::AmisError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Amis(#[from] AmisError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// 2 for invalid input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Amis(AmisError::Configuration(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn into_config(self) -> Self {
        match self {
            BenchError::Amis(e) => BenchError::Config(e.to_string()),
            e => e,
        }
    }
}
