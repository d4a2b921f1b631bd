//! Radial feeder models and ground-truth power flow.

mod feeder;
mod powerflow;

pub use feeder::{
    build_feeder, load_feeder, Bases, Bus, BusSpec, Feeder, FeederSpec, Line, LineSpec, LoadSpec, Phase,
    PhaseImpedance, PhaseNode, PhaseSet, Slack, SlackSpec, FORMAT_VERSION,
};
pub use powerflow::{
    admittance_matrix, injected_power, solve_power_flow, LoadScenario, VoltageSolution, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("duplicate bus id `{0}`")]
    DuplicateId(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("invalid phase set `{0}`")]
    InvalidPhases(String),
    #[error("line {from} -> {to} closes a cycle")]
    CycleDetected { from: String, to: String },
    #[error("bus `{0}` is not connected to the slack bus")]
    DisconnectedBus(String),
    #[error("impedance of line {from} -> {to} is singular on its phases")]
    SingularImpedance { from: String, to: String },
    #[error("line {from} -> {to} carries phases absent at the upstream bus")]
    PhaseMismatch { from: String, to: String },
    #[error("invalid slack: {0}")]
    InvalidSlack(String),
    #[error("unsupported feeder format_version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid load: {0}")]
    InvalidLoad(String),
    #[error("power flow did not converge in {iterations} sweeps (mismatch {mismatch:e})")]
    NoConvergence { iterations: usize, mismatch: f64 },
    #[error("feeder parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
