//! Measurement model, noise, random masking and datasets.

mod csvio;
mod dataset;
mod measure;
mod profile;
mod schema;

pub use dataset::{
    build_dataset, build_dataset_with, import_csv, Dataset, Normalization, Sample, DEFAULT_TRAIN_FRACTION,
};
pub use measure::{
    add_noise, apply_mask, draw_mask, mask_values, measure, MaskVector, MeasurementModel, MeasurementVector,
    StateLayout,
};
pub use profile::{daily_profiles, ProfileConfig};
pub use schema::{Channel, ChannelKind, MeasurementSchema, Metering};

use thiserror::Error;

use crate::grid::GridError;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("channel {channel}: sigma must be positive and finite, got {sigma}")]
    InvalidSigma { channel: String, sigma: f64 },
    #[error("channel {channel}: missing probability must lie in [0, 1), got {alpha}")]
    InvalidAlpha { channel: String, alpha: f64 },
    #[error("unknown channel target {0}")]
    UnknownChannelTarget(String),
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("no time steps")]
    Empty,
    #[error("power flow failed at step {step}: {source}")]
    PowerFlow {
        step: usize,
        #[source]
        source: GridError,
    },
    #[error("{file}: header mismatch ({detail})")]
    HeaderMismatch { file: String, detail: String },
    #[error("{file}: row {row} has {found} cells, header has {expected}")]
    RaggedRows {
        file: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}: row {row}, column {column}: cannot parse `{value}`")]
    UnparseableNumber {
        file: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("measurement file has {measurements} rows but state file has {states}")]
    RowCountMismatch { measurements: usize, states: usize },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}
