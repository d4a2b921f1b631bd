//! Gauss-Newton weighted least squares state estimation.
//!
//! Minimizes `(z - h(x))ᵀ W (z - h(x))` over the rectangular voltage state
//! with `W = diag(1/σ²)`. Missing readings are handled the classical way, by
//! deleting their rows, which is exactly what makes the problem unsolvable
//! once too many readings disappear.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::telemetry::{ChannelKind, MaskVector, MeasurementModel};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_FD_STEP: f64 = 1e-6;
/// Gain matrices with a larger eigenvalue spread are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WlsError {
    #[error("gain matrix is rank deficient ({rows} rows for {states} states, condition {condition:e})")]
    RankDeficient { rows: usize, states: usize, condition: f64 },
    #[error("Gauss-Newton did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weight {index} must be positive and finite, got {value}")]
    InvalidWeight { index: usize, value: f64 },
}

#[derive(Debug, Clone)]
pub struct WlsProblem {
    pub model: MeasurementModel,
    /// Diagonal of W.
    pub weights: Vec<f64>,
    pub z: Vec<f64>,
    pub mask: Option<MaskVector>,
}

impl WlsProblem {
    /// Problem with the conventional weights `1/σ²` from the schema.
    pub fn new(model: MeasurementModel, z: Vec<f64>, mask: Option<MaskVector>) -> Result<WlsProblem, WlsError> {
        let weights = model.schema.sigmas().iter().map(|s| 1.0 / (s * s)).collect();
        WlsProblem::with_weights(model, weights, z, mask)
    }

    pub fn with_weights(
        model: MeasurementModel,
        weights: Vec<f64>,
        z: Vec<f64>,
        mask: Option<MaskVector>,
    ) -> Result<WlsProblem, WlsError> {
        let m = model.schema.len();
        for (what, len) in [("weights", weights.len()), ("measurements", z.len())] {
            if len != m {
                return Err(WlsError::DimensionMismatch {
                    what,
                    expected: m,
                    found: len,
                });
            }
        }
        if let Some(mask) = &mask {
            if mask.len() != m {
                return Err(WlsError::DimensionMismatch {
                    what: "mask",
                    expected: m,
                    found: mask.len(),
                });
            }
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(WlsError::InvalidWeight { index, value });
        }
        Ok(WlsProblem {
            model,
            weights,
            z,
            mask,
        })
    }

    pub fn rows(&self) -> usize {
        self.z.len()
    }

    pub fn state_dim(&self) -> usize {
        self.model.layout.dim()
    }

    /// Problem with every weight multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> WlsProblem {
        let mut p = self.clone();
        for w in &mut p.weights {
            *w *= c;
        }
        p
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let h = self.model.evaluate(x);
        self.z
            .iter()
            .zip(h)
            .zip(self.model.schema.channels())
            .map(|((z, h), c)| {
                let r = z - h;
                if c.kind == ChannelKind::VAngle {
                    wrap_angle(r)
                } else {
                    r
                }
            })
            .collect()
    }

    /// Weighted objective `rᵀ W r` at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.residual(x)
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * r * r)
            .sum()
    }
}

/// Wraps an angle difference into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    /// `[Re(v); Im(v)]` over non-slack phase-nodes.
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Weighted objective at `x`.
    pub residual: f64,
    pub converged: bool,
    /// Gauss-Newton direction computed at each iteration.
    pub steps: Vec<Vec<f64>>,
    /// Objective before each iteration, then at the returned estimate.
    pub objective_history: Vec<f64>,
}

/// Removes masked rows. Returns the reduced problem and its redundancy
/// ratio (rows per state).
pub fn drop_missing(problem: &WlsProblem) -> (WlsProblem, f64) {
    let keep: Vec<usize> = match &problem.mask {
        Some(mask) => (0..problem.rows()).filter(|&j| !mask.missing[j]).collect(),
        None => (0..problem.rows()).collect(),
    };
    let reduced = WlsProblem {
        model: problem.model.with_schema(problem.model.schema.subset(&keep)),
        weights: keep.iter().map(|&j| problem.weights[j]).collect(),
        z: keep.iter().map(|&j| problem.z[j]).collect(),
        mask: None,
    };
    let redundancy = reduced.rows() as f64 / problem.state_dim() as f64;
    (reduced, redundancy)
}

/// Central-difference Jacobian of `h` at `x`.
pub fn jacobian_fd(model: &MeasurementModel, x: &[f64], h: f64) -> DMatrix<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let m = model.schema.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    for k in 0..n {
        probe[k] = x[k] + h;
        let plus = model.evaluate(&probe);
        probe[k] = x[k] - h;
        let minus = model.evaluate(&probe);
        probe[k] = x[k];
        for j in 0..m {
            let mut d = plus[j] - minus[j];
            if model.schema.channels()[j].kind == ChannelKind::VAngle {
                d = wrap_angle(d);
            }
            jac[(j, k)] = d / (2.0 * h);
        }
    }
    jac
}

/// Gauss-Newton iterations on `(JᵀWJ) Δ = JᵀW r` with step halving.
///
/// Masked rows are dropped first. Stops once `‖Δ‖∞ ≤ tol`.
pub fn estimate_wls(problem: &WlsProblem, x0: &[f64], tol: f64, max_iter: usize) -> Result<StateEstimate, WlsError> {
    let (problem, _) = drop_missing(problem);
    let n = problem.state_dim();
    if x0.len() != n {
        return Err(WlsError::DimensionMismatch {
            what: "initial state",
            expected: n,
            found: x0.len(),
        });
    }
    if problem.rows() < n {
        return Err(WlsError::RankDeficient {
            rows: problem.rows(),
            states: n,
            condition: f64::INFINITY,
        });
    }
    let w = DVector::from_column_slice(&problem.weights);
    let mut x = x0.to_vec();
    let mut f = problem.objective(&x);
    let mut steps = Vec::new();
    let mut objective_history = vec![f];

    for iteration in 1..=max_iter {
        let r = DVector::from_vec(problem.residual(&x));
        let jac = jacobian_fd(&problem.model, &x, DEFAULT_FD_STEP);
        let jtw = jac.transpose() * DMatrix::from_diagonal(&w);
        let gain = &jtw * &jac;
        let rhs = &jtw * &r;
        let delta = solve_normal_equations(gain, rhs, problem.rows())?;
        let delta: Vec<f64> = delta.iter().copied().collect();
        steps.push(delta.clone());

        let norm = delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        if !norm.is_finite() {
            return Err(WlsError::NoConvergence { iterations: iteration });
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + scale * d).collect();
            let f_trial = problem.objective(&trial);
            if f_trial <= f * (1.0 + 1e-12) + f64::MIN_POSITIVE {
                accepted = Some((trial, f_trial));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, f_next)) = accepted else {
            return Err(WlsError::NoConvergence { iterations: iteration });
        };
        x = next;
        f = f_next;
        objective_history.push(f);

        if norm <= tol {
            return Ok(StateEstimate {
                x,
                iterations: iteration,
                residual: f,
                converged: true,
                steps,
                objective_history,
            });
        }
    }
    Err(WlsError::NoConvergence { iterations: max_iter })
}

fn solve_normal_equations(gain: DMatrix<f64>, rhs: DVector<f64>, rows: usize) -> Result<DVector<f64>, WlsError> {
    let states = gain.nrows();
    let eig = SymmetricEigen::new(gain.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let deficient = || WlsError::RankDeficient {
        rows,
        states,
        condition,
    };
    if !(condition <= MAX_CONDITION) {
        return Err(deficient());
    }
    let chol = gain.cholesky().ok_or_else(deficient)?;
    Ok(chol.solve(&rhs))
}
