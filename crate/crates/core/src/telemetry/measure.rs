use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{ChannelKind, MeasurementSchema, TelemetryError};
use crate::grid::Feeder;
use crate::rng::{self, Rng};

/// Readings aligned with a schema's channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub step: usize,
}

/// `true` marks a missing reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    pub missing: Vec<bool>,
}

impl MaskVector {
    pub fn none(len: usize) -> MaskVector {
        MaskVector {
            missing: vec![false; len],
        }
    }

    pub fn count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn len(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Mapping between complex nodal voltages and the real state vector
/// `x = [Re(v); Im(v)]` over non-slack phase-nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    state_nodes: Vec<usize>,
    base: Vec<Complex64>,
    names: Vec<String>,
}

impl StateLayout {
    pub fn new(feeder: &Feeder) -> StateLayout {
        let state_nodes = feeder.non_slack_nodes();
        let mut names = Vec::with_capacity(2 * state_nodes.len());
        for part in ["re", "im"] {
            for &n in &state_nodes {
                names.push(format!("{part}:{}", feeder.node_label(n)));
            }
        }
        StateLayout {
            state_nodes,
            base: feeder.flat_voltages(),
            names,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.state_nodes.len()
    }

    /// Phase-nodes carried by the state, in order.
    pub fn state_nodes(&self) -> &[usize] {
        &self.state_nodes
    }

    pub fn node_count(&self) -> usize {
        self.base.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_state(&self, v: &[Complex64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.state_nodes.iter().map(|&n| v[n].re).collect();
        x.extend(self.state_nodes.iter().map(|&n| v[n].im));
        x
    }

    /// Full voltage vector: slack nodes fixed, others taken from `x`.
    pub fn to_voltages(&self, x: &[f64]) -> Vec<Complex64> {
        let k = self.state_nodes.len();
        let mut v = self.base.clone();
        for (i, &n) in self.state_nodes.iter().enumerate() {
            v[n] = Complex64::new(x[i], x[k + i]);
        }
        v
    }

    /// Slack phase voltages replicated at every node (0, -120, +120 degrees).
    pub fn flat_start(&self) -> Vec<f64> {
        self.to_state(&self.base)
    }
}

fn channel_value(kind: ChannelKind, v: Complex64, current: Complex64) -> f64 {
    match kind {
        ChannelKind::PInjection => (v * current.conj()).re,
        ChannelKind::QInjection => (v * current.conj()).im,
        ChannelKind::VMagnitude => v.norm(),
        ChannelKind::VAngle => v.arg(),
    }
}

/// Noiseless measurement functions `h`: P/Q injections from `v ∘ conj(Y v)`,
/// magnitudes `|v|` and angles `arg v`.
pub fn measure(
    v: &[Complex64],
    y: &DMatrix<Complex64>,
    schema: &MeasurementSchema,
) -> Result<MeasurementVector, TelemetryError> {
    if y.nrows() != v.len() || y.ncols() != v.len() {
        return Err(TelemetryError::LengthMismatch {
            what: "admittance matrix",
            expected: v.len(),
            found: y.nrows(),
        });
    }
    if let Some(c) = schema.targets().iter().position(|&t| t >= v.len()) {
        return Err(TelemetryError::UnknownChannelTarget(schema.channels()[c].name()));
    }
    let current = y * DVector::from_column_slice(v);
    let values = schema
        .channels()
        .iter()
        .zip(schema.targets())
        .map(|(c, &t)| channel_value(c.kind, v[t], current[t]))
        .collect();
    Ok(MeasurementVector { values, step: 0 })
}

/// `h(x)` evaluated on state vectors, for estimators.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub layout: StateLayout,
    pub y: DMatrix<Complex64>,
    pub schema: MeasurementSchema,
}

impl MeasurementModel {
    pub fn new(feeder: &Feeder, schema: MeasurementSchema) -> MeasurementModel {
        MeasurementModel {
            layout: StateLayout::new(feeder),
            y: crate::grid::admittance_matrix(feeder),
            schema,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let v = self.layout.to_voltages(x);
        measure(&v, &self.y, &self.schema)
            .expect("schema resolved against this layout")
            .values
    }

    pub fn with_schema(&self, schema: MeasurementSchema) -> MeasurementModel {
        MeasurementModel {
            layout: self.layout.clone(),
            y: self.y.clone(),
            schema,
        }
    }
}

/// Adds independent zero-mean Gaussian errors with the schema's σ per channel.
pub fn add_noise(z: &MeasurementVector, schema: &MeasurementSchema, seed: u64) -> MeasurementVector {
    let mut rng = rng::rng(seed);
    add_noise_with(z, &schema.sigmas(), &mut rng)
}

pub(crate) fn add_noise_with(z: &MeasurementVector, sigmas: &[f64], rng: &mut Rng) -> MeasurementVector {
    let values = z
        .values
        .iter()
        .zip(sigmas)
        .map(|(&value, &sigma)| {
            let e: f64 = StandardNormal.sample(rng);
            value + sigma * e
        })
        .collect();
    MeasurementVector { values, step: z.step }
}

/// Independent Bernoulli draws, one per channel.
pub fn draw_mask(alphas: &[f64], rng: &mut Rng) -> MaskVector {
    MaskVector {
        missing: alphas.iter().map(|&a| rng.random::<f64>() < a).collect(),
    }
}

/// Zeroes the masked positions. Expects already-normalized readings, where
/// zero is the channel mean.
pub fn mask_values(values: &mut [f64], mask: &MaskVector) {
    for (v, &m) in values.iter_mut().zip(&mask.missing) {
        if m {
            *v = 0.0;
        }
    }
}

/// Draws a mask from the schema's α and applies it to `z`.
pub fn apply_mask(z: &MeasurementVector, schema: &MeasurementSchema, seed: u64) -> (MeasurementVector, MaskVector) {
    let mut rng = rng::rng(seed);
    let mask = draw_mask(&schema.alphas(), &mut rng);
    let mut out = z.clone();
    mask_values(&mut out.values, &mask);
    (out, mask)
}
