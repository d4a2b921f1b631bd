use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::ForwardStats;
use super::network::Estimator;
use super::{ModelError, Optimizer};
use crate::rng::{derive_seed, derived_rng};
use crate::telemetry::{draw_mask, Dataset, MaskVector};
use crate::tensor::{sgd_step, Adam, Tape, Tensor, TensorError, Var};

/// Mask stream used for validation, final-loss and inference windows.
/// Training epoch `e` uses stream `2e + 1` for masks and `2e + 2` for shuffling.
pub const MASK_STREAM_EVAL: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Uniform missing rate applied while training. `None` uses the
    /// per-channel rates of the dataset schema.
    pub mask_alpha: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: Optimizer::Sgd,
            seed: 0,
            mask_alpha: None,
        }
    }
}

impl TrainConfig {
    pub fn alphas(&self, data: &Dataset) -> Vec<f64> {
        match self.mask_alpha {
            Some(a) => vec![a; data.schema().len()],
            None => data.schema().alphas(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ModelError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if let Some(a) = self.mask_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(ModelError::Config(format!("mask_alpha {a} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean loss of the windows seen during the epoch, before each update.
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    /// Training-window loss before the first update.
    pub initial_train_loss: f64,
    /// Training-window loss after the last update.
    pub final_train_loss: f64,
    pub updates: usize,
}

/// End steps of every length-`window` window lying inside `range`.
pub fn window_ends(range: Range<usize>, window: usize) -> Vec<usize> {
    if window == 0 || range.end < range.start + window {
        return Vec::new();
    }
    (range.start + window - 1..range.end).collect()
}

/// Missing-reading draw for time step `step`, seeded by `(seed, stream, step)`.
pub fn step_mask(alphas: &[f64], seed: u64, stream: u64, step: usize) -> MaskVector {
    draw_mask(alphas, &mut derived_rng(derive_seed(seed, stream), step as u64))
}

/// `[T, m]` model input for the window ending at `end`, each step masked
/// by [`step_mask`].
pub fn window_input(data: &Dataset, end: usize, window: usize, alphas: &[f64], seed: u64, stream: u64) -> Tensor {
    let m = data.schema().len();
    let mut rows = Vec::with_capacity(window * m);
    for s in end + 1 - window..=end {
        rows.extend(data.model_input(s, Some(&step_mask(alphas, seed, stream, s))));
    }
    Tensor::matrix(window, m, rows).expect("window shape")
}

/// `[T, n]` true states for the window ending at `end`.
pub fn window_target(data: &Dataset, end: usize, window: usize) -> Tensor {
    let rows: Vec<f64> = (end + 1 - window..=end).flat_map(|s| data.samples()[s].x.clone()).collect();
    Tensor::matrix(window, data.state_dim(), rows).expect("window shape")
}

/// Mean squared error over all `T x n` entries.
pub fn mse(estimate: &Tensor, truth: &Tensor) -> Result<f64, TensorError> {
    if estimate.shape() != truth.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse",
            lhs: estimate.shape().to_vec(),
            rhs: truth.shape().to_vec(),
        });
    }
    let n = estimate.numel() as f64;
    Ok(estimate.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// [`mse`] recorded on the tape.
pub fn loss(tape: &mut Tape, estimate: Var, truth: &Tensor) -> Result<Var, TensorError> {
    if tape.value(estimate).shape() != truth.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "loss",
            lhs: tape.value(estimate).shape().to_vec(),
            rhs: truth.shape().to_vec(),
        });
    }
    let truth = tape.constant(truth.clone());
    let diff = tape.sub(estimate, truth)?;
    let sq = tape.square(diff)?;
    tape.mean_all(sq)
}

fn mean_loss<M: Estimator>(
    model: &M,
    data: &Dataset,
    ends: &[usize],
    alphas: &[f64],
    seed: u64,
) -> Result<Option<f64>, ModelError> {
    if ends.is_empty() {
        return Ok(None);
    }
    let t = model.config().window;
    let mut total = 0.0;
    for &end in ends {
        let z = window_input(data, end, t, alphas, seed, MASK_STREAM_EVAL);
        let xhat = model.estimate_voltages(&z)?;
        total += mse(&xhat, &window_target(data, end, t))?;
    }
    Ok(Some(total / ends.len() as f64))
}

/// Trains on every window inside the training split and validates on every
/// window inside the held-out split.
pub fn train<M: Estimator>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, ModelError> {
    let t = model.config().window;
    let train_ends = window_ends(0..data.train_len(), t);
    let val_ends = window_ends(data.train_len()..data.len(), t);
    train_on(model, data, &train_ends, &val_ends, cfg)
}

/// Per-window gradient steps over `train_ends` in a fresh random order each
/// epoch, with masks redrawn every epoch.
pub fn train_on<M: Estimator>(
    model: &mut M,
    data: &Dataset,
    train_ends: &[usize],
    val_ends: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    let t = model.config().window;
    if train_ends.is_empty() {
        return Err(ModelError::DatasetTooShort {
            len: data.train_len(),
            window: t,
        });
    }
    if model.dims().channels() != data.schema().len() || model.dims().state_dim != data.state_dim() {
        return Err(ModelError::Config("model dimensions do not match the dataset".into()));
    }
    let alphas = cfg.alphas(data);
    let initial = mean_loss(model, data, train_ends, &alphas, cfg.seed)?.expect("non-empty");
    if !initial.is_finite() {
        return Err(ModelError::NonFiniteLoss { epoch: 0 });
    }
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(model.params()));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut updates = 0;
    let non_finite = |epoch: usize| move |e: TensorError| match e {
        TensorError::NonFiniteValue { .. } => ModelError::NonFiniteLoss { epoch },
        other => ModelError::Tensor(other),
    };

    for epoch in 0..cfg.epochs {
        let mask_stream = 2 * epoch as u64 + 1;
        let mut order = train_ends.to_vec();
        order.shuffle(&mut derived_rng(cfg.seed, 2 * epoch as u64 + 2));
        let mut total = 0.0;
        for &end in &order {
            let z = window_input(data, end, t, &alphas, cfg.seed, mask_stream);
            let target = window_target(data, end, t);
            let mut tape = Tape::new();
            let mut stats = ForwardStats::default();
            let xhat = model.forward(&mut tape, model.params(), &z, &mut stats).map_err(non_finite(epoch))?;
            let loss = loss(&mut tape, xhat, &target).map_err(non_finite(epoch))?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            total += value;
            let mut grads = tape.backward(loss).map_err(non_finite(epoch))?;
            match adam.as_mut() {
                Some(opt) => opt.step(model.params_mut(), &mut grads, cfg.learning_rate)?,
                None => sgd_step(model.params_mut(), &mut grads, cfg.learning_rate)?,
            }
            if !model.params().iter().all(|p| p.value.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            updates += 1;
        }
        let validation = mean_loss(model, data, val_ends, &alphas, cfg.seed).map_err(|e| match e {
            ModelError::Tensor(TensorError::NonFiniteValue { .. }) => ModelError::NonFiniteLoss { epoch },
            other => other,
        })?;
        history.push(EpochLoss {
            epoch,
            train: total / order.len() as f64,
            validation,
        });
    }
    let final_train_loss = mean_loss(model, data, train_ends, &alphas, cfg.seed)?.expect("non-empty");
    Ok(TrainReport {
        history,
        initial_train_loss: initial,
        final_train_loss,
        updates,
    })
}

/// Estimated state at the last row of each window ending in `ends`. Step
/// `s` is masked identically in every window that contains it.
pub fn estimate_series<M: Estimator>(
    model: &M,
    data: &Dataset,
    ends: &[usize],
    alphas: &[f64],
    seed: u64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let t = model.config().window;
    ends.iter()
        .map(|&end| {
            if end + 1 < t || end >= data.len() {
                return Err(ModelError::DatasetTooShort { len: end + 1, window: t });
            }
            let z = window_input(data, end, t, alphas, seed, MASK_STREAM_EVAL);
            let xhat = model.estimate_voltages(&z)?;
            Ok(xhat.row(t - 1).to_vec())
        })
        .collect()
}
