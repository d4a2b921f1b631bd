//! Two-branch attention estimator mapping windows of incomplete telemetry
//! to voltage states, plus a single-branch ablation and the training loop.

mod layers;
mod network;
mod train;

pub use layers::{
    cross_gate, gate_values, gqa_attention, multi_head_attention, positional_encoding, project_branch, Attention,
    FeedForward, ForwardStats, Linear,
};
pub use network::{ConcatModel, DtModel, Estimator, InputDims, TargetScaling};
pub use train::{
    estimate_series, loss, mse, step_mask, train, train_on, window_ends, window_input, window_target, EpochLoss, TrainConfig,
    TrainReport, MASK_STREAM_EVAL,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("dataset has {len} steps, fewer than the window length {window}")]
    DatasetTooShort { len: usize, window: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Optimizer used by [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent width `d`.
    pub d_model: usize,
    /// Hidden width of the gate networks and the output head.
    pub d_ff: usize,
    /// Number of attention + fusion blocks `N`.
    pub blocks: usize,
    /// Query heads `H`.
    pub heads: usize,
    /// Key/value groups `G`; `H` must be a multiple of `G`.
    pub kv_groups: usize,
    /// Window length `T`.
    pub window: usize,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            d_model: 32,
            d_ff: 64,
            blocks: 2,
            heads: 4,
            kv_groups: 2,
            window: 8,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.d_ff == 0 || self.window == 0 {
            return err("d_model, d_ff and window must be positive".into());
        }
        if self.heads == 0 || self.kv_groups == 0 {
            return err("heads and kv_groups must be positive".into());
        }
        if !self.heads.is_multiple_of(self.kv_groups) {
            return err(format!("heads ({}) is not a multiple of kv_groups ({})", self.heads, self.kv_groups));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return err(format!("d_model ({}) is not divisible by heads ({})", self.d_model, self.heads));
        }
        Ok(())
    }
}
