use std::path::Path;

use super::measure::{add_noise_with, mask_values};
use super::{measure, MaskVector, MeasurementSchema, StateLayout, TelemetryError};
use crate::grid::{admittance_matrix, solve_power_flow, Feeder, LoadScenario, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng;

/// Fraction of leading time steps used for training (and for normalization statistics).
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// One time step: raw readings, missing flags and true state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    /// Readings absent from the source data (blank CSV cells).
    pub missing: Vec<bool>,
    pub x: Vec<f64>,
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Population mean/std over the present entries of `samples`. Channels
    /// with no spread (or no data) keep unit scale.
    pub fn fit(samples: &[Sample], channels: usize) -> Normalization {
        let mut mean = vec![0.0; channels];
        let mut std = vec![1.0; channels];
        for j in 0..channels {
            let values: Vec<f64> = samples.iter().filter(|s| !s.missing[j]).map(|s| s.z[j]).collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            if var.sqrt() > 1e-12 * m.abs().max(1.0) {
                std[j] = var.sqrt();
            }
        }
        Normalization { mean, std }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Time-indexed `{z_t; x_t}` records with normalization fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: MeasurementSchema,
    state_names: Vec<String>,
    samples: Vec<Sample>,
    train_len: usize,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(
        schema: MeasurementSchema,
        state_names: Vec<String>,
        samples: Vec<Sample>,
        train_fraction: f64,
    ) -> Result<Dataset, TelemetryError> {
        if samples.is_empty() {
            return Err(TelemetryError::Empty);
        }
        for (t, s) in samples.iter().enumerate() {
            if s.z.len() != schema.len() || s.missing.len() != schema.len() {
                return Err(TelemetryError::LengthMismatch {
                    what: "measurement row",
                    expected: schema.len(),
                    found: s.z.len(),
                });
            }
            if s.x.len() != state_names.len() {
                return Err(TelemetryError::LengthMismatch {
                    what: "state row",
                    expected: state_names.len(),
                    found: s.x.len(),
                });
            }
            if s.z.iter().chain(&s.x).any(|v| !v.is_finite()) {
                return Err(TelemetryError::NonFinite { step: t });
            }
        }
        let train_len = ((samples.len() as f64 * train_fraction).round() as usize).clamp(1, samples.len());
        let normalization = Normalization::fit(&samples[..train_len], schema.len());
        Ok(Dataset {
            schema,
            state_names,
            samples,
            train_len,
            normalization,
        })
    }

    pub fn schema(&self) -> &MeasurementSchema {
        &self.schema
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of leading steps in the training split.
    pub fn train_len(&self) -> usize {
        self.train_len
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Network input for step `t`: normalized readings with every missing
    /// position (source gaps and `extra` mask) set to zero.
    pub fn model_input(&self, t: usize, extra: Option<&MaskVector>) -> Vec<f64> {
        let s = &self.samples[t];
        let mut z = self.normalization.apply(&s.z);
        mask_values(&mut z, &MaskVector { missing: s.missing.clone() });
        if let Some(m) = extra {
            mask_values(&mut z, m);
        }
        z
    }

    /// Writes the measurement and state CSV pair read back by [`import_csv`].
    pub fn export_csv(&self, measurements: impl AsRef<Path>, states: impl AsRef<Path>) -> Result<(), TelemetryError> {
        super::csvio::write_table(
            measurements.as_ref(),
            &self.schema.names(),
            self.samples.iter().map(|s| {
                s.z.iter()
                    .zip(&s.missing)
                    .map(|(v, &m)| if m { None } else { Some(*v) })
                    .collect()
            }),
        )?;
        super::csvio::write_table(
            states.as_ref(),
            &self.state_names,
            self.samples.iter().map(|s| s.x.iter().map(|v| Some(*v)).collect()),
        )
    }
}

/// Runs the power flow for every profile step, measures, and adds noise.
/// Masks are not applied here; training and evaluation draw their own.
pub fn build_dataset(
    feeder: &Feeder,
    load_profiles: &[LoadScenario],
    schema: &MeasurementSchema,
    seed: u64,
) -> Result<Dataset, TelemetryError> {
    build_dataset_with(feeder, load_profiles, schema, seed, &schema.sigmas())
}

/// Variant with explicit noise levels; zero σ yields noiseless readings.
pub fn build_dataset_with(
    feeder: &Feeder,
    load_profiles: &[LoadScenario],
    schema: &MeasurementSchema,
    seed: u64,
    sigmas: &[f64],
) -> Result<Dataset, TelemetryError> {
    if load_profiles.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let y = admittance_matrix(feeder);
    let layout = StateLayout::new(feeder);
    let mut samples = Vec::with_capacity(load_profiles.len());
    for (t, loads) in load_profiles.iter().enumerate() {
        let solution = solve_power_flow(feeder, loads, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .map_err(|source| TelemetryError::PowerFlow { step: t, source })?;
        let mut z = measure(&solution.voltages, &y, schema)?;
        z.step = t;
        let mut step_rng = rng::derived_rng(seed, t as u64);
        let noisy = add_noise_with(&z, sigmas, &mut step_rng);
        samples.push(Sample {
            z: noisy.values,
            missing: vec![false; schema.len()],
            x: layout.to_state(&solution.voltages),
        });
    }
    Dataset::new(schema.clone(), layout.names().to_vec(), samples, DEFAULT_TRAIN_FRACTION)
}

/// Reads a measurement/state CSV pair. Blank measurement cells become missing entries.
pub fn import_csv(
    measurements: impl AsRef<Path>,
    states: impl AsRef<Path>,
    schema: &MeasurementSchema,
) -> Result<Dataset, TelemetryError> {
    let (header, rows) = super::csvio::read_table(measurements.as_ref())?;
    let expected = schema.names();
    if header != expected {
        return Err(TelemetryError::HeaderMismatch {
            file: measurements.as_ref().display().to_string(),
            detail: first_difference(&expected, &header),
        });
    }
    let (state_names, state_rows) = super::csvio::read_table(states.as_ref())?;
    check_state_header(states.as_ref(), &state_names)?;
    if rows.len() != state_rows.len() {
        return Err(TelemetryError::RowCountMismatch {
            measurements: rows.len(),
            states: state_rows.len(),
        });
    }
    let mut samples = Vec::with_capacity(rows.len());
    for (t, (z, x)) in rows.into_iter().zip(state_rows).enumerate() {
        let x = x
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| TelemetryError::UnparseableNumber {
                    file: states.as_ref().display().to_string(),
                    row: t + 1,
                    column: state_names[k].clone(),
                    value: String::new(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        samples.push(Sample {
            missing: z.iter().map(Option::is_none).collect(),
            z: z.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
            x,
        });
    }
    Dataset::new(schema.clone(), state_names, samples, DEFAULT_TRAIN_FRACTION)
}

fn check_state_header(path: &Path, names: &[String]) -> Result<(), TelemetryError> {
    let re = names.iter().filter(|n| n.starts_with("re:")).count();
    let well_formed = names.iter().all(|n| n.starts_with("re:") || n.starts_with("im:"));
    let paired = re * 2 == names.len()
        && names[..re]
            .iter()
            .zip(&names[re..])
            .all(|(a, b)| a.starts_with("re:") && b.starts_with("im:") && a[3..] == b[3..]);
    if !well_formed || !paired {
        return Err(TelemetryError::HeaderMismatch {
            file: path.display().to_string(),
            detail: "state columns must be re:<node>... followed by matching im:<node>...".into(),
        });
    }
    Ok(())
}

fn first_difference(expected: &[String], found: &[String]) -> String {
    if expected.len() != found.len() {
        return format!("expected {} columns, found {}", expected.len(), found.len());
    }
    let k = expected.iter().zip(found).position(|(a, b)| a != b).unwrap_or(0);
    format!("column {}: expected `{}`, found `{}`", k + 1, expected[k], found[k])
}
