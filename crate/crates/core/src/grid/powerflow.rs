use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Feeder, GridError, Phase};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Constant-power wye demand per phase-node (p.u., positive = consumption).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadScenario {
    demand: Vec<Complex64>,
}

impl LoadScenario {
    pub fn zero(feeder: &Feeder) -> LoadScenario {
        LoadScenario {
            demand: vec![Complex64::new(0.0, 0.0); feeder.node_count()],
        }
    }

    /// Builds a scenario from a demand vector aligned with `feeder.nodes()`.
    pub fn from_demand(feeder: &Feeder, demand: Vec<Complex64>) -> Result<LoadScenario, GridError> {
        let s = LoadScenario { demand };
        s.validate(feeder)?;
        Ok(s)
    }

    pub fn set(&mut self, feeder: &Feeder, bus: &str, phase: Phase, s: Complex64) -> Result<(), GridError> {
        let n = self.node_for(feeder, bus, phase)?;
        self.demand[n] = s;
        Ok(())
    }

    pub fn add(&mut self, feeder: &Feeder, bus: &str, phase: Phase, s: Complex64) -> Result<(), GridError> {
        let n = self.node_for(feeder, bus, phase)?;
        self.demand[n] += s;
        Ok(())
    }

    fn node_for(&self, feeder: &Feeder, bus: &str, phase: Phase) -> Result<usize, GridError> {
        feeder
            .node_by_id(bus, phase)
            .ok_or_else(|| GridError::InvalidLoad(format!("bus `{bus}` has no phase {phase}")))
    }

    pub fn demand(&self) -> &[Complex64] {
        &self.demand
    }

    pub fn scaled(&self, factor: f64) -> LoadScenario {
        LoadScenario {
            demand: self.demand.iter().map(|s| s * factor).collect(),
        }
    }

    fn validate(&self, feeder: &Feeder) -> Result<(), GridError> {
        if self.demand.len() != feeder.node_count() {
            return Err(GridError::InvalidLoad(format!(
                "{} entries for {} phase-nodes",
                self.demand.len(),
                feeder.node_count()
            )));
        }
        if let Some(i) = self.demand.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(GridError::InvalidLoad(format!(
                "non-finite demand at {}",
                feeder.node_label(i)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    /// Complex voltage per phase-node, aligned with `Feeder::nodes`.
    pub voltages: Vec<Complex64>,
    pub iterations: usize,
    /// Infinity norm of the complex power mismatch at non-slack nodes.
    pub mismatch: f64,
}

/// Nodal admittance matrix over all phase-nodes (slack included).
pub fn admittance_matrix(feeder: &Feeder) -> DMatrix<Complex64> {
    let n = feeder.node_count();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in feeder.lines() {
        let phases: Vec<Phase> = line.phases.iter().collect();
        let from: Vec<usize> = phases.iter().map(|&p| feeder.node_index(line.from, p).unwrap()).collect();
        let to: Vec<usize> = phases.iter().map(|&p| feeder.node_index(line.to, p).unwrap()).collect();
        for i in 0..phases.len() {
            for j in 0..phases.len() {
                let yl = line.admittance[(i, j)];
                y[(from[i], from[j])] += yl;
                y[(to[i], to[j])] += yl;
                y[(from[i], to[j])] -= yl;
                y[(to[i], from[j])] -= yl;
            }
        }
    }
    y
}

/// Complex power injected at every node, `v_i * conj((Y v)_i)`.
pub fn injected_power(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let current = y * DVector::from_column_slice(v);
    v.iter().zip(current.iter()).map(|(vi, ii)| vi * ii.conj()).collect()
}

fn mismatch(feeder: &Feeder, y: &DMatrix<Complex64>, v: &[Complex64], loads: &LoadScenario) -> f64 {
    let s = injected_power(y, v);
    let mut worst = 0.0f64;
    for (i, (si, di)) in s.iter().zip(loads.demand()).enumerate() {
        if feeder.is_slack_node(i) {
            continue;
        }
        let m = (si + di).norm();
        if m.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(m);
    }
    worst
}

/// Backward/forward sweep power flow.
///
/// Each sweep converts demands to load currents at the present voltages,
/// sums branch currents from the leaves towards the slack, then walks
/// outward from the slack applying `v_to = v_from - Z i_branch` on the
/// line's phases. Convergence is declared on the infinity norm of the
/// complex power mismatch computed through the admittance matrix.
pub fn solve_power_flow(
    feeder: &Feeder,
    loads: &LoadScenario,
    tol: f64,
    max_iter: usize,
) -> Result<VoltageSolution, GridError> {
    loads.validate(feeder)?;
    if !(tol > 0.0) {
        return Err(GridError::InvalidLoad(format!("tolerance must be positive, got {tol}")));
    }
    let y = admittance_matrix(feeder);
    let n = feeder.node_count();
    let zero = Complex64::new(0.0, 0.0);
    let mut v = feeder.flat_voltages();
    let mut load_current = vec![zero; n];
    let mut branch_current: Vec<[Complex64; 3]> = vec![[zero; 3]; feeder.lines().len()];
    let order = feeder.bfs_order();
    let mut last = f64::INFINITY;

    for iteration in 1..=max_iter {
        for (i, node) in feeder.nodes().iter().enumerate() {
            load_current[i] = if node.bus == feeder.slack().bus {
                zero
            } else {
                (loads.demand()[i] / v[i]).conj()
            };
        }

        branch_current.fill([zero; 3]);
        for &bus in order.iter().rev() {
            let Some(k) = feeder.parent_line(bus) else {
                continue;
            };
            let line = &feeder.lines()[k];
            for p in line.phases.iter() {
                let node = feeder.node_index(bus, p).unwrap();
                branch_current[k][p.index()] += load_current[node];
            }
            if let Some(up) = feeder.parent_line(line.from) {
                let upstream_phases = feeder.lines()[up].phases;
                let carried = branch_current[k];
                for p in line.phases.iter() {
                    debug_assert!(upstream_phases.contains(p));
                    branch_current[up][p.index()] += carried[p.index()];
                }
            }
        }

        for &bus in order {
            let Some(k) = feeder.parent_line(bus) else {
                continue;
            };
            let line = &feeder.lines()[k];
            for p in line.phases.iter() {
                let mut drop = zero;
                for q in line.phases.iter() {
                    drop += line.impedance[p.index()][q.index()] * branch_current[k][q.index()];
                }
                let from = feeder.node_index(line.from, p).unwrap();
                let to = feeder.node_index(bus, p).unwrap();
                v[to] = v[from] - drop;
            }
        }

        last = mismatch(feeder, &y, &v, loads);
        if !last.is_finite() || v.iter().any(|x| !(x.norm() > 0.0)) {
            return Err(GridError::NoConvergence {
                iterations: iteration,
                mismatch: f64::INFINITY,
            });
        }
        if last <= tol {
            return Ok(VoltageSolution {
                voltages: v,
                iterations: iteration,
                mismatch: last,
            });
        }
    }
    Err(GridError::NoConvergence {
        iterations: max_iter,
        mismatch: last,
    })
}
