use thiserror::Error;

use crate::bench::BenchError;
use crate::grid::GridError;
use crate::model::ModelError;
use crate::telemetry::TelemetryError;
use crate::tensor::TensorError;
use crate::wls::WlsError;

/// Any failure surfaced by the library, with a process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Wls(#[from] WlsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

/// Exit code for invalid configuration or input data.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for solver or training failures.
pub const EXIT_NUMERIC: i32 = 3;
/// Exit code for file system failures.
pub const EXIT_IO: i32 = 4;

fn grid_code(e: &GridError) -> i32 {
    match e {
        GridError::NoConvergence { .. } => EXIT_NUMERIC,
        GridError::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn tensor_code(e: &TensorError) -> i32 {
    match e {
        TensorError::NonFiniteValue { .. } => EXIT_NUMERIC,
        TensorError::Checkpoint(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Grid(e) => grid_code(e),
            Error::Telemetry(e) => match e {
                TelemetryError::PowerFlow { source, .. } => grid_code(source),
                TelemetryError::NonFinite { .. } => EXIT_NUMERIC,
                TelemetryError::Csv { .. } => EXIT_IO,
                _ => EXIT_CONFIG,
            },
            Error::Wls(e) => match e {
                WlsError::RankDeficient { .. } | WlsError::NoConvergence { .. } => EXIT_NUMERIC,
                _ => EXIT_CONFIG,
            },
            Error::Tensor(e) => tensor_code(e),
            Error::Model(e) => match e {
                ModelError::NonFiniteLoss { .. } => EXIT_NUMERIC,
                ModelError::Checkpoint(_) => EXIT_IO,
                ModelError::Tensor(t) => tensor_code(t),
                _ => EXIT_CONFIG,
            },
            Error::Bench(e) => match e {
                BenchError::Io { .. } => EXIT_IO,
                _ => EXIT_CONFIG,
            },
        }
    }
}
