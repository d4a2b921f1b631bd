use dsse_twin::grid::{load_feeder, solve_power_flow, Feeder};
use dsse_twin::rng;
use dsse_twin::telemetry::{
    add_noise, draw_mask, Channel, ChannelKind, MaskVector, MeasurementModel, MeasurementSchema, MeasurementVector,
    Metering, StateLayout,
};
use dsse_twin::wls::{drop_missing, estimate_wls, jacobian_fd, WlsError, WlsProblem};
use dsse_twin::grid::Phase;

fn fixture(name: &str) -> Feeder {
    load_feeder(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn two_bus_model(f: &Feeder) -> MeasurementModel {
    let schema = MeasurementSchema::new(
        vec![
            Channel::new(ChannelKind::PInjection, "load", Phase::A, 0.01, 0.0),
            Channel::new(ChannelKind::QInjection, "load", Phase::A, 0.01, 0.0),
            Channel::new(ChannelKind::VMagnitude, "load", Phase::A, 0.005, 0.0),
            Channel::new(ChannelKind::VAngle, "load", Phase::A, 0.001, 0.0),
        ],
        f,
    )
    .unwrap();
    MeasurementModel::new(f, schema)
}

fn eight_bus_model(f: &Feeder) -> MeasurementModel {
    MeasurementModel::new(f, Metering::eight_bus_default().schema(f).unwrap())
}

fn truth(f: &Feeder) -> Vec<f64> {
    let sol = solve_power_flow(f, f.nominal_load(), 1e-12, 200).unwrap();
    StateLayout::new(f).to_state(&sol.voltages)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

#[test]
fn noiseless_recovery_from_flat_start() {
    for (name, model) in [
        ("two_bus.toml", two_bus_model as fn(&Feeder) -> MeasurementModel),
        ("eight_bus.toml", eight_bus_model),
    ] {
        let f = fixture(name);
        let model = model(&f);
        let x_true = truth(&f);
        let z = model.evaluate(&x_true);
        let problem = WlsProblem::new(model.clone(), z, None).unwrap();
        let est = estimate_wls(&problem, &model.layout.flat_start(), 1e-9, 20).unwrap();
        assert!(est.converged);
        assert!(est.iterations <= 20);
        assert!(max_abs_diff(&est.x, &x_true) < 1e-6, "{name}");
    }
}

#[test]
fn zero_residual_fixed_point() {
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let x_true = truth(&f);
    let problem = WlsProblem::new(model.clone(), model.evaluate(&x_true), None).unwrap();
    let est = estimate_wls(&problem, &x_true, 1e-9, 20).unwrap();
    assert_eq!(est.iterations, 1);
    assert_eq!(est.x, x_true);
}

#[test]
fn weight_scale_leaves_trajectory_unchanged() {
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let x_true = truth(&f);
    let z = add_noise(
        &MeasurementVector {
            values: model.evaluate(&x_true),
            step: 0,
        },
        &model.schema,
        17,
    );
    let problem = WlsProblem::new(model.clone(), z.values, None).unwrap();
    let x0 = model.layout.flat_start();
    let base = estimate_wls(&problem, &x0, 1e-9, 30).unwrap();
    // A power-of-two scale is exact in floating point: identical steps.
    let exact = estimate_wls(&problem.scaled_weights(4.0), &x0, 1e-9, 30).unwrap();
    assert_eq!(base.steps, exact.steps);
    assert_eq!(base.x, exact.x);
    let scaled = estimate_wls(&problem.scaled_weights(3.7), &x0, 1e-9, 30).unwrap();
    assert!(max_abs_diff(&base.x, &scaled.x) <= 1e-9);
    for (a, b) in base.steps.iter().zip(&scaled.steps) {
        assert!(max_abs_diff(a, b) <= 1e-9 * (1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
}

#[test]
fn objective_descends() {
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let x_true = truth(&f);
    for seed in 0..5 {
        let z = add_noise(
            &MeasurementVector {
                values: model.evaluate(&x_true),
                step: 0,
            },
            &model.schema,
            seed,
        );
        let problem = WlsProblem::new(model.clone(), z.values, None).unwrap();
        let est = estimate_wls(&problem, &model.layout.flat_start(), 1e-9, 30).unwrap();
        for w in est.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", est.objective_history);
        }
    }
}

#[test]
fn analytic_jacobian_entries() {
    let f = fixture("two_bus.toml");
    let model = two_bus_model(&f);
    let x = vec![1.0, 0.0];
    let jac = jacobian_fd(&model, &x, 1e-6);
    assert!((jac[(2, 0)] - 1.0).abs() < 1e-6, "d|v|/dRe");
    assert!((jac[(3, 1)] - 1.0).abs() < 1e-6, "d arg/dIm");
    assert!(jac[(2, 1)].abs() < 1e-6);
    assert!(jac[(3, 0)].abs() < 1e-6);
}

#[test]
fn central_difference_error_is_second_order() {
    // Halving the step cuts the truncation error by ~4 on every entry where
    // that error rises above rounding noise (P/Q rows are quadratic in x,
    // so their central differences are exact).
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let x = truth(&f);
    let reference = jacobian_fd(&model, &x, 1e-5);
    let coarse = jacobian_fd(&model, &x, 2e-2);
    let fine = jacobian_fd(&model, &x, 1e-2);
    let mut checked = 0;
    for j in 0..coarse.nrows() {
        for k in 0..coarse.ncols() {
            let e1 = (coarse[(j, k)] - reference[(j, k)]).abs();
            let e2 = (fine[(j, k)] - reference[(j, k)]).abs();
            if e1 > 1e-6 {
                let ratio = e1 / e2;
                assert!((3.5..4.5).contains(&ratio), "entry ({j},{k}) ratio {ratio}");
                checked += 1;
            }
        }
    }
    assert!(checked > 10, "only {checked} entries checked");
}

#[test]
fn dropping_rows() {
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let z = model.evaluate(&truth(&f));
    let m = z.len();
    let none = WlsProblem::new(model.clone(), z.clone(), Some(MaskVector::none(m))).unwrap();
    let (same, redundancy) = drop_missing(&none);
    assert_eq!(same.z, none.z);
    assert_eq!(same.weights, none.weights);
    assert_eq!(same.model.schema, none.model.schema);
    assert!((redundancy - m as f64 / 42.0).abs() < 1e-15);

    let mut mask = MaskVector::none(m);
    for j in [0, 5, 9, 40, m - 1] {
        mask.missing[j] = true;
    }
    let (reduced, _) = drop_missing(&WlsProblem::new(model, z, Some(mask)).unwrap());
    assert_eq!(reduced.rows(), m - 5);
}

#[test]
fn losing_voltage_and_power_rows_is_rank_deficient() {
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let z = model.evaluate(&truth(&f));
    let mut mask = MaskVector::none(z.len());
    for (j, c) in model.schema.channels().iter().enumerate() {
        if !c.kind.is_power() || j % 2 == 0 {
            mask.missing[j] = true;
        }
    }
    let problem = WlsProblem::new(model.clone(), z, Some(mask)).unwrap();
    let err = estimate_wls(&problem, &model.layout.flat_start(), 1e-9, 20).unwrap_err();
    assert!(matches!(err, WlsError::RankDeficient { .. }));
}

#[test]
fn heavy_masking_makes_wls_infeasible_sometimes() {
    let f = fixture("eight_bus.toml");
    let model = eight_bus_model(&f);
    let z = model.evaluate(&truth(&f));
    let alphas = vec![0.4; z.len()];
    let mut failures = 0;
    for seed in 0..100 {
        let mask = draw_mask(&alphas, &mut rng::rng(seed));
        let problem = WlsProblem::new(model.clone(), z.clone(), Some(mask)).unwrap();
        if let Err(WlsError::RankDeficient { .. }) = estimate_wls(&problem, &model.layout.flat_start(), 1e-8, 30) {
            failures += 1;
        }
    }
    eprintln!("rank-deficient at 40% masking: {failures}/100");
    assert!(failures > 0);
}
