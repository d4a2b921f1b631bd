//! Builds the measurement set for the eight-bus feeder, adds Gaussian
//! noise and drops readings at random.
//!
//! cargo run --example measurements

use dsse_twin::grid::{admittance_matrix, load_feeder, solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};
use dsse_twin::telemetry::{add_noise, apply_mask, measure, Metering};

fn main() -> Result<(), dsse_twin::Error> {
    let feeder = load_feeder(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/eight_bus.toml"))?;
    let sol = solve_power_flow(&feeder, feeder.nominal_load(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;

    let mut metering = Metering::eight_bus_default();
    metering.alpha = 0.3;
    let schema = metering.schema(&feeder)?;
    let clean = measure(&sol.voltages, &admittance_matrix(&feeder), &schema)?;
    let noisy = add_noise(&clean, &schema, 7);
    let (masked, mask) = apply_mask(&noisy, &schema, 11);

    println!("{:<12} {:>10} {:>10} {:>8}", "channel", "exact", "noisy", "sent");
    for (i, name) in schema.names().iter().enumerate() {
        let sent = if mask.missing[i] { "missing".to_string() } else { format!("{:.5}", masked.values[i]) };
        println!("{name:<12} {:>10.5} {:>10.5} {sent:>8}", clean.values[i], noisy.values[i]);
    }
    println!("{} of {} readings dropped at alpha = {}", mask.count(), mask.len(), metering.alpha);
    Ok(())
}
