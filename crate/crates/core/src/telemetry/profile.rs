use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{Feeder, LoadScenario};
use crate::rng;

/// Synthetic load profile: daily sinusoid, per-bus scale and phase, and
/// per-step Gaussian jitter on top of a base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub steps: usize,
    /// Samples per day; 96 matches 15-minute metering.
    #[serde(default = "ProfileConfig::default_steps_per_day")]
    pub steps_per_day: usize,
    #[serde(default = "ProfileConfig::default_amplitude")]
    pub daily_amplitude: f64,
    #[serde(default = "ProfileConfig::default_jitter")]
    pub jitter: f64,
    /// Per-bus scale factors are drawn from `1 ± bus_spread`.
    #[serde(default = "ProfileConfig::default_bus_spread")]
    pub bus_spread: f64,
}

impl ProfileConfig {
    fn default_steps_per_day() -> usize {
        96
    }
    fn default_amplitude() -> f64 {
        0.35
    }
    fn default_jitter() -> f64 {
        0.05
    }
    fn default_bus_spread() -> f64 {
        0.25
    }

    pub fn with_steps(steps: usize) -> ProfileConfig {
        ProfileConfig {
            steps,
            steps_per_day: Self::default_steps_per_day(),
            daily_amplitude: Self::default_amplitude(),
            jitter: Self::default_jitter(),
            bus_spread: Self::default_bus_spread(),
        }
    }
}

pub fn daily_profiles(feeder: &Feeder, base: &LoadScenario, config: &ProfileConfig, seed: u64) -> Vec<LoadScenario> {
    let mut setup = rng::derived_rng(seed, u64::MAX);
    let buses = feeder.buses().len();
    let scale: Vec<f64> = (0..buses)
        .map(|_| 1.0 + config.bus_spread * (2.0 * setup.random::<f64>() - 1.0))
        .collect();
    let shift: Vec<f64> = (0..buses).map(|_| 0.5 * setup.random::<f64>()).collect();
    let period = config.steps_per_day.max(1) as f64;

    (0..config.steps)
        .map(|t| {
            let mut step_rng = rng::derived_rng(seed, t as u64);
            let demand = feeder
                .nodes()
                .iter()
                .zip(base.demand())
                .map(|(node, s)| {
                    let b = node.bus;
                    let daily = 1.0 + config.daily_amplitude * (2.0 * PI * t as f64 / period - PI / 2.0 + shift[b]).sin();
                    let e: f64 = StandardNormal.sample(&mut step_rng);
                    let factor = (scale[b] * daily * (1.0 + config.jitter * e)).max(0.0);
                    s * factor
                })
                .collect();
            LoadScenario::from_demand(feeder, demand).expect("scaled base scenario stays valid")
        })
        .collect()
}
