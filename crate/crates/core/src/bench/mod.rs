//! Experiment harness: dataset preparation, training, the missing-data
//! sweep over DT, WLS and the ablation, and CSV/SVG reports.

mod metrics;
mod report;
mod sweep;

pub use metrics::{compute_metrics, Method, MetricRecord, Metrics, MetricsReport, SummaryRow, TimeSeries, WlsFailures, METRIC_NAMES};
pub use report::{emit_report, emit_summary, parse_metrics_csv, write_history_csv};
pub use sweep::{
    echo_config, evaluate, prepare, run_sweep, train_models, wls_failure_fraction, FailureFraction, Prepared, SweepOutcome,
    TrainedModels,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, TrainConfig};
use crate::telemetry::{Metering, ProfileConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{path}: malformed report ({detail})")]
    MalformedReport { path: String, detail: String },
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> BenchError {
    BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Gauss-Newton settings for the WLS baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlsSettings {
    pub enabled: bool,
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds used for the rank-deficiency failure fractions.
    pub failure_seeds: usize,
}

impl Default for WlsSettings {
    fn default() -> WlsSettings {
        WlsSettings {
            enabled: true,
            tol: crate::wls::DEFAULT_TOL,
            max_iter: crate::wls::DEFAULT_MAX_ITER,
            failure_seeds: 20,
        }
    }
}

/// One experiment: feeder, synthetic data, metering, model, training and
/// evaluation grid. Relative paths are resolved against the directory of
/// the file the configuration was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub feeder: PathBuf,
    pub out_dir: PathBuf,
    /// Seed for load profiles and measurement noise.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default = "default_alphas")]
    pub eval_alphas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Worker threads for the evaluation grid. Output does not depend on it.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_true")]
    pub ablation: bool,
    /// Phase-node plotted in `timeseries.svg`, as `bus:phase`.
    #[serde(default = "default_node")]
    pub timeseries_node: String,
    pub profile: ProfileConfig,
    pub metering: Metering,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub wls: WlsSettings,
}

fn default_data_seed() -> u64 {
    1
}
fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_jobs() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_node() -> String {
    "n5:A".into()
}

impl ExperimentConfig {
    /// Desk experiment on the bundled eight-bus feeder.
    pub fn desk(feeder: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> ExperimentConfig {
        ExperimentConfig {
            feeder: feeder.into(),
            out_dir: out_dir.into(),
            data_seed: default_data_seed(),
            eval_alphas: default_alphas(),
            seeds: default_seeds(),
            jobs: default_jobs(),
            ablation: true,
            timeseries_node: default_node(),
            profile: ProfileConfig::with_steps(500),
            metering: Metering::eight_bus_default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 20,
                learning_rate: 1e-3,
                optimizer: crate::model::Optimizer::Adam,
                seed: 1,
                mask_alpha: None,
            },
            wls: WlsSettings::default(),
        }
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig, BenchError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.feeder = resolve(base_dir, &cfg.feeder);
        cfg.out_dir = resolve(base_dir, &cfg.out_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ExperimentConfig::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: String| Err(BenchError::Config(m));
        if self.seeds.is_empty() {
            return err("at least one evaluation seed is required".into());
        }
        if let Some(a) = self.eval_alphas.iter().find(|a| !(0.0..=0.95).contains(*a)) {
            return err(format!("evaluation alpha {a} outside [0, 0.95]"));
        }
        if !(0.0..1.0).contains(&self.metering.alpha) {
            return err(format!("training alpha {} outside [0, 1)", self.metering.alpha));
        }
        if self.jobs == 0 {
            return err("jobs must be at least 1".into());
        }
        if self.profile.steps == 0 {
            return err("profile.steps must be positive".into());
        }
        if self.timeseries_node.split_once(':').is_none() {
            return err(format!("timeseries_node `{}` is not `bus:phase`", self.timeseries_node));
        }
        self.model.validate().map_err(|e| BenchError::Config(e.to_string()))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
