use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TelemetryError;
use crate::grid::{Feeder, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    PInjection,
    QInjection,
    VMagnitude,
    VAngle,
}

impl ChannelKind {
    pub fn token(self) -> &'static str {
        match self {
            ChannelKind::PInjection => "p",
            ChannelKind::QInjection => "q",
            ChannelKind::VMagnitude => "vm",
            ChannelKind::VAngle => "va",
        }
    }

    /// Power channels feed the first model branch, voltage channels the second.
    pub fn is_power(self) -> bool {
        matches!(self, ChannelKind::PInjection | ChannelKind::QInjection)
    }
}

impl FromStr for ChannelKind {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p" => Ok(ChannelKind::PInjection),
            "q" => Ok(ChannelKind::QInjection),
            "vm" => Ok(ChannelKind::VMagnitude),
            "va" => Ok(ChannelKind::VAngle),
            other => Err(TelemetryError::UnknownChannelTarget(format!("unknown channel kind `{other}`"))),
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub kind: ChannelKind,
    pub bus: String,
    pub phase: Phase,
    /// Noise standard deviation in channel units (p.u. or rad).
    pub sigma: f64,
    /// Probability that a reading is missing.
    pub alpha: f64,
}

impl Channel {
    pub fn new(kind: ChannelKind, bus: impl Into<String>, phase: Phase, sigma: f64, alpha: f64) -> Channel {
        Channel {
            kind,
            bus: bus.into(),
            phase,
            sigma,
            alpha,
        }
    }

    /// CSV column name, `kind:bus:phase`.
    pub fn name(&self) -> String {
        format!("{}:{}:{}", self.kind, self.bus, self.phase)
    }
}

/// Ordered channel list resolved against a feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchema {
    channels: Vec<Channel>,
    targets: Vec<usize>,
}

impl MeasurementSchema {
    pub fn new(channels: Vec<Channel>, feeder: &Feeder) -> Result<MeasurementSchema, TelemetryError> {
        let mut targets = Vec::with_capacity(channels.len());
        for c in &channels {
            if !(c.sigma.is_finite() && c.sigma > 0.0) {
                return Err(TelemetryError::InvalidSigma {
                    channel: c.name(),
                    sigma: c.sigma,
                });
            }
            check_alpha(&c.name(), c.alpha)?;
            let node = feeder
                .node_by_id(&c.bus, c.phase)
                .ok_or_else(|| TelemetryError::UnknownChannelTarget(c.name()))?;
            targets.push(node);
        }
        Ok(MeasurementSchema { channels, targets })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Phase-node index measured by each channel.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(Channel::name).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.sigma).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.alpha).collect()
    }

    pub fn power_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.channels[j].kind.is_power()).collect()
    }

    pub fn voltage_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.channels[j].kind.is_power()).collect()
    }

    /// Same channels with one missing probability everywhere.
    pub fn with_uniform_alpha(&self, alpha: f64) -> Result<MeasurementSchema, TelemetryError> {
        check_alpha("*", alpha)?;
        let mut s = self.clone();
        for c in &mut s.channels {
            c.alpha = alpha;
        }
        Ok(s)
    }

    /// Keeps only the listed rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> MeasurementSchema {
        MeasurementSchema {
            channels: rows.iter().map(|&j| self.channels[j].clone()).collect(),
            targets: rows.iter().map(|&j| self.targets[j]).collect(),
        }
    }
}

fn check_alpha(channel: &str, alpha: f64) -> Result<(), TelemetryError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(TelemetryError::InvalidAlpha {
            channel: channel.to_string(),
            alpha,
        });
    }
    Ok(())
}

/// Hybrid metering layout: smart-meter P/Q at every non-slack phase-node,
/// voltage magnitudes and PMU angles at selected buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metering {
    #[serde(default = "Metering::default_power_sigma")]
    pub power_sigma: f64,
    #[serde(default = "Metering::default_vm_sigma")]
    pub vm_sigma: f64,
    #[serde(default = "Metering::default_va_sigma")]
    pub va_sigma: f64,
    /// Buses carrying voltage-magnitude sensors on every phase.
    pub vm_buses: Vec<String>,
    /// Buses carrying phasor (angle) sensors on every phase.
    pub va_buses: Vec<String>,
    /// Missing probability used for every channel during training.
    #[serde(default = "Metering::default_alpha")]
    pub alpha: f64,
}

impl Metering {
    fn default_power_sigma() -> f64 {
        0.002
    }
    fn default_vm_sigma() -> f64 {
        0.002
    }
    fn default_va_sigma() -> f64 {
        0.0005
    }
    fn default_alpha() -> f64 {
        0.05
    }

    /// Metering used by the bundled eight-bus experiments.
    pub fn eight_bus_default() -> Metering {
        Metering {
            power_sigma: Self::default_power_sigma(),
            vm_sigma: Self::default_vm_sigma(),
            va_sigma: Self::default_va_sigma(),
            vm_buses: ["src", "n2", "n3", "n5", "n7"].map(String::from).to_vec(),
            va_buses: ["n3", "n5"].map(String::from).to_vec(),
            alpha: Self::default_alpha(),
        }
    }

    pub fn schema(&self, feeder: &Feeder) -> Result<MeasurementSchema, TelemetryError> {
        let mut channels = Vec::new();
        for kind in [ChannelKind::PInjection, ChannelKind::QInjection] {
            for &n in &feeder.non_slack_nodes() {
                let node = feeder.nodes()[n];
                let bus = &feeder.buses()[node.bus].id;
                channels.push(Channel::new(kind, bus.clone(), node.phase, self.power_sigma, self.alpha));
            }
        }
        for (kind, buses, sigma) in [
            (ChannelKind::VMagnitude, &self.vm_buses, self.vm_sigma),
            (ChannelKind::VAngle, &self.va_buses, self.va_sigma),
        ] {
            for id in buses {
                let b = feeder
                    .bus_index(id)
                    .ok_or_else(|| TelemetryError::UnknownChannelTarget(format!("{kind}:{id}")))?;
                for phase in feeder.buses()[b].phases.iter() {
                    channels.push(Channel::new(kind, id.clone(), phase, sigma, self.alpha));
                }
            }
        }
        MeasurementSchema::new(channels, feeder)
    }
}
