use dsse_twin::grid::{
    admittance_matrix, build_feeder, injected_power, load_feeder, solve_power_flow, FeederSpec, GridError,
    LoadScenario, Phase, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn eight_bus_fixture_shape() {
    let f = load_feeder(fixture("eight_bus.toml")).unwrap();
    assert_eq!(f.lines().len(), 7);
    assert_eq!(f.node_count(), 24);
    assert_eq!(f.buses().len(), f.lines().len() + 1);
}

#[test]
fn eight_bus_converges_at_nominal_load() {
    let f = load_feeder(fixture("eight_bus.toml")).unwrap();
    let sol = solve_power_flow(&f, f.nominal_load(), DEFAULT_TOL, 50).unwrap();
    assert!(sol.mismatch <= 1e-8);
    assert!(sol.iterations <= 50);
    let (lo, hi) = sol
        .voltages
        .iter()
        .map(|v| v.norm())
        .fold((f64::MAX, f64::MIN), |(a, b), m| (a.min(m), b.max(m)));
    assert!(lo > 0.9 && hi <= 1.0 + 1e-12, "voltage range {lo}..{hi}");
    // Unbalanced: the three phases at the feeder end differ.
    let end = f.bus_index("n5").unwrap();
    let mags: Vec<f64> = Phase::ALL
        .iter()
        .map(|&p| sol.voltages[f.node_index(end, p).unwrap()].norm())
        .collect();
    assert!((mags[0] - mags[1]).abs() > 1e-4 || (mags[1] - mags[2]).abs() > 1e-4);
}

#[test]
fn eight_bus_admittance_pattern_and_symmetry() {
    let f = load_feeder(fixture("eight_bus.toml")).unwrap();
    let y = admittance_matrix(&f);
    let mut adjacent = vec![vec![false; f.buses().len()]; f.buses().len()];
    for l in f.lines() {
        adjacent[l.from][l.to] = true;
        adjacent[l.to][l.from] = true;
    }
    for i in 0..f.node_count() {
        for j in 0..f.node_count() {
            assert!((y[(i, j)] - y[(j, i)]).norm() < 1e-9 * y[(i, j)].norm().max(1.0));
            let (bi, bj) = (f.nodes()[i].bus, f.nodes()[j].bus);
            if bi != bj && !adjacent[bi][bj] {
                assert_eq!(y[(i, j)], Complex64::new(0.0, 0.0), "fill-in at {i},{j}");
            }
        }
    }
}

#[test]
fn two_bus_injection_cross_check() {
    let f = load_feeder(fixture("two_bus.toml")).unwrap();
    let sol = solve_power_flow(&f, f.nominal_load(), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let s = injected_power(&admittance_matrix(&f), &sol.voltages);
    assert!((s[1] + Complex64::new(0.1, 0.05)).norm() < 1e-8);
}

#[test]
fn zero_load_flat_on_fixtures() {
    for name in ["two_bus.toml", "eight_bus.toml"] {
        let f = load_feeder(fixture(name)).unwrap();
        let sol = solve_power_flow(&f, &LoadScenario::zero(&f), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.voltages, f.flat_voltages(), "{name}");
    }
}

#[test]
fn fixture_round_trips_through_toml() {
    let text = std::fs::read_to_string(fixture("eight_bus.toml")).unwrap();
    let spec = FeederSpec::from_toml_str(&text).unwrap();
    let again = FeederSpec::from_toml_str(&spec.to_toml_string()).unwrap();
    let a = build_feeder(&spec).unwrap();
    let b = build_feeder(&again).unwrap();
    assert_eq!(admittance_matrix(&a), admittance_matrix(&b));
}

#[test]
fn version_and_missing_file_errors() {
    let text = std::fs::read_to_string(fixture("two_bus.toml"))
        .unwrap()
        .replace("format_version = 1", "format_version = 9");
    assert!(matches!(FeederSpec::from_toml_str(&text), Err(GridError::UnsupportedVersion(9))));
    assert!(matches!(load_feeder("/nonexistent/feeder.toml"), Err(GridError::Io { .. })));
}

#[test]
fn deterministic_solutions() {
    let f = load_feeder(fixture("eight_bus.toml")).unwrap();
    let a = solve_power_flow(&f, f.nominal_load(), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let b = solve_power_flow(&f, f.nominal_load(), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_residual_within_tolerance(scale in 0.0f64..2.0) {
        let f = load_feeder(fixture("eight_bus.toml")).unwrap();
        let loads = f.nominal_load().scaled(scale);
        let sol = solve_power_flow(&f, &loads, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let s = injected_power(&admittance_matrix(&f), &sol.voltages);
        for n in f.non_slack_nodes() {
            prop_assert!((s[n] + loads.demand()[n]).norm() <= DEFAULT_TOL);
        }
    }

    #[test]
    fn more_real_load_never_raises_own_voltage(node in 3usize..24, extra in 0.001f64..0.02) {
        let f = load_feeder(fixture("eight_bus.toml")).unwrap();
        let base = f.nominal_load().clone();
        let mut demand = base.demand().to_vec();
        demand[node] += Complex64::new(extra, 0.0);
        let heavier = LoadScenario::from_demand(&f, demand).unwrap();
        let v0 = solve_power_flow(&f, &base, 1e-10, DEFAULT_MAX_ITER).unwrap().voltages[node].norm();
        let v1 = solve_power_flow(&f, &heavier, 1e-10, DEFAULT_MAX_ITER).unwrap().voltages[node].norm();
        prop_assert!(v1 <= v0 + 1e-12, "{v1} > {v0}");
    }
}
