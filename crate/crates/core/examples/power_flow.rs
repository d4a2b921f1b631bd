//! Solves the bundled eight-bus feeder at nominal load and checks the
//! result against the admittance-matrix injections.
//!
//! cargo run --example power_flow

use dsse_twin::grid::{admittance_matrix, injected_power, load_feeder, solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};

fn main() -> Result<(), dsse_twin::Error> {
    let feeder = load_feeder(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/eight_bus.toml"))?;
    let loads = feeder.nominal_load();
    let sol = solve_power_flow(&feeder, loads, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    println!("converged in {} sweeps, mismatch {:.2e} p.u.", sol.iterations, sol.mismatch);

    println!("{:<8} {:>9} {:>10}", "node", "|V| p.u.", "angle deg");
    for (n, v) in sol.voltages.iter().enumerate() {
        println!("{:<8} {:>9.5} {:>10.3}", feeder.node_label(n), v.norm(), v.arg().to_degrees());
    }

    let s = injected_power(&admittance_matrix(&feeder), &sol.voltages);
    let worst = feeder
        .non_slack_nodes()
        .into_iter()
        .map(|n| (s[n] + loads.demand()[n]).norm())
        .fold(0.0, f64::max);
    println!("largest |S_injected + S_demand| over load nodes: {worst:.2e}");
    Ok(())
}
