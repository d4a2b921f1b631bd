//! Gauss-Newton WLS on one noisy snapshot, then on the same snapshot with
//! an increasing share of readings missing.
//!
//! cargo run --example wls_estimate

use dsse_twin::grid::{admittance_matrix, load_feeder, solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};
use dsse_twin::rng;
use dsse_twin::telemetry::{add_noise, draw_mask, measure, MeasurementModel, Metering, StateLayout};
use dsse_twin::wls::{estimate_wls, WlsError, WlsProblem};

fn main() -> Result<(), dsse_twin::Error> {
    let feeder = load_feeder(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/eight_bus.toml"))?;
    let sol = solve_power_flow(&feeder, feeder.nominal_load(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let layout = StateLayout::new(&feeder);
    let truth = layout.to_state(&sol.voltages);

    let schema = Metering::eight_bus_default().schema(&feeder)?;
    let z = add_noise(&measure(&sol.voltages, &admittance_matrix(&feeder), &schema)?, &schema, 3);
    let model = MeasurementModel::new(&feeder, schema.clone());

    let problem = WlsProblem::new(model.clone(), z.values.clone(), None)?;
    let est = estimate_wls(&problem, &layout.flat_start(), 1e-8, 50)?;
    let err = est.x.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!(
        "full telemetry: {} iterations, objective {:.3}, max state error {err:.2e}",
        est.iterations, est.residual
    );
    for (k, j) in est.objective_history.iter().enumerate() {
        println!("  J after {k} steps: {j:.4e}");
    }

    for alpha in [0.1, 0.2, 0.3, 0.4] {
        let (mut ok, mut rank, mut other) = (0, 0, 0);
        let mut r = rng::rng(99);
        for _ in 0..50 {
            let mask = draw_mask(&vec![alpha; schema.len()], &mut r);
            let problem = WlsProblem::new(model.clone(), z.values.clone(), Some(mask))?;
            match estimate_wls(&problem, &layout.flat_start(), 1e-8, 50) {
                Ok(_) => ok += 1,
                Err(WlsError::RankDeficient { .. }) => rank += 1,
                Err(_) => other += 1,
            }
        }
        println!("alpha {alpha}: {ok} solved, {rank} rank deficient, {other} not converged (50 masks)");
    }
    Ok(())
}
