use dsse_twin::grid::{admittance_matrix, load_feeder, solve_power_flow, Feeder, LoadScenario, Phase};
use dsse_twin::rng;
use dsse_twin::telemetry::{
    add_noise, apply_mask, build_dataset, build_dataset_with, daily_profiles, draw_mask, import_csv, measure,
    Channel, ChannelKind, MeasurementSchema, MeasurementVector, Metering, ProfileConfig, StateLayout,
    TelemetryError,
};
use num_complex::Complex64;

fn fixture(name: &str) -> Feeder {
    load_feeder(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn two_bus_schema(f: &Feeder) -> MeasurementSchema {
    MeasurementSchema::new(
        vec![
            Channel::new(ChannelKind::PInjection, "load", Phase::A, 0.01, 0.0),
            Channel::new(ChannelKind::QInjection, "load", Phase::A, 0.01, 0.0),
            Channel::new(ChannelKind::VMagnitude, "source", Phase::A, 0.01, 0.0),
            Channel::new(ChannelKind::VAngle, "load", Phase::A, 0.01, 0.0),
        ],
        f,
    )
    .unwrap()
}

fn fixed_point(v1: Complex64, z: Complex64, s2: Complex64) -> Complex64 {
    let mut v2 = v1;
    for _ in 0..10_000 {
        v2 = v1 - z * (s2 / v2).conj();
    }
    v2
}

#[test]
fn two_bus_measurements() {
    let f = fixture("two_bus.toml");
    let sol = solve_power_flow(&f, f.nominal_load(), 1e-12, 100).unwrap();
    let z = measure(&sol.voltages, &admittance_matrix(&f), &two_bus_schema(&f)).unwrap();
    assert!((z.values[0] + 0.1).abs() < 1e-8);
    assert!((z.values[1] + 0.05).abs() < 1e-8);
    assert_eq!(z.values[2], 1.0);
    let v2 = fixed_point(Complex64::new(1.0, 0.0), Complex64::new(0.01, 0.02), Complex64::new(0.1, 0.05));
    assert!((z.values[3] - v2.arg()).abs() < 1e-10);
}

#[test]
fn noiseless_consistency_on_eight_bus() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let sol = solve_power_flow(&f, f.nominal_load(), 1e-10, 100).unwrap();
    let z = measure(&sol.voltages, &admittance_matrix(&f), &schema).unwrap();
    for (j, c) in schema.channels().iter().enumerate() {
        let node = schema.targets()[j];
        let d = f.nominal_load().demand()[node];
        match c.kind {
            ChannelKind::PInjection => assert!((z.values[j] + d.re).abs() < 1e-8),
            ChannelKind::QInjection => assert!((z.values[j] + d.im).abs() < 1e-8),
            _ => {}
        }
    }
}

#[test]
fn schema_validation() {
    let f = fixture("two_bus.toml");
    let bad_alpha = MeasurementSchema::new(vec![Channel::new(ChannelKind::PInjection, "load", Phase::A, 0.01, 1.0)], &f);
    assert!(matches!(bad_alpha, Err(TelemetryError::InvalidAlpha { .. })));
    let bad_sigma = MeasurementSchema::new(vec![Channel::new(ChannelKind::PInjection, "load", Phase::A, 0.0, 0.1)], &f);
    assert!(matches!(bad_sigma, Err(TelemetryError::InvalidSigma { .. })));
    let bad_target = MeasurementSchema::new(vec![Channel::new(ChannelKind::PInjection, "load", Phase::B, 0.01, 0.1)], &f);
    assert!(matches!(bad_target, Err(TelemetryError::UnknownChannelTarget(_))));
    assert!(two_bus_schema(&f).with_uniform_alpha(1.0).is_err());
}

#[test]
fn noise_is_seeded() {
    let f = fixture("two_bus.toml");
    let schema = two_bus_schema(&f);
    let z = MeasurementVector {
        values: vec![0.0, 0.0, 1.0, 0.0],
        step: 0,
    };
    assert_eq!(add_noise(&z, &schema, 11), add_noise(&z, &schema, 11));
    assert_ne!(add_noise(&z, &schema, 11), add_noise(&z, &schema, 12));
}

#[test]
fn zero_sigma_leaves_readings_unchanged() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let profiles = vec![f.nominal_load().clone()];
    let zero = vec![0.0; schema.len()];
    let ds = build_dataset_with(&f, &profiles, &schema, 3, &zero).unwrap();
    let sol = solve_power_flow(&f, f.nominal_load(), 1e-8, 100).unwrap();
    let clean = measure(&sol.voltages, &admittance_matrix(&f), &schema).unwrap();
    assert_eq!(ds.samples()[0].z, clean.values);
}

#[test]
fn noise_standard_deviation() {
    // 1e5 draws, sigma = 0.01: the 99% chi-square interval for the sample
    // std is sigma * (1 +- 2.576 / sqrt(2n)) = [0.009942, 0.010058].
    let f = fixture("two_bus.toml");
    let schema =
        MeasurementSchema::new(vec![Channel::new(ChannelKind::PInjection, "load", Phase::A, 0.01, 0.0)], &f).unwrap();
    let n = 100_000;
    let draws: Vec<f64> = (0..n)
        .map(|s| add_noise(&MeasurementVector { values: vec![0.0], step: 0 }, &schema, s as u64).values[0])
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!((0.0097..=0.0103).contains(&std), "std {std}");
    // zero-mean t statistic
    let t = mean / (std / (n as f64).sqrt());
    assert!(t.abs() < 3.29, "t = {t}");
}

#[test]
fn mask_rate_at_metering_scale() {
    let alphas = vec![0.05; 350];
    let mut r = rng::rng(2864);
    let mut hits = 0usize;
    for _ in 0..2864 {
        hits += draw_mask(&alphas, &mut r).count();
    }
    let rate = hits as f64 / (350.0 * 2864.0);
    assert!((0.047..=0.053).contains(&rate), "rate {rate}");
}

#[test]
fn apply_mask_zeroes_exactly_the_masked_entries() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap().with_uniform_alpha(0.3).unwrap();
    let z = MeasurementVector {
        values: (0..schema.len()).map(|j| 0.5 + j as f64).collect(),
        step: 0,
    };
    for seed in 0..20 {
        let (masked, mask) = apply_mask(&z, &schema, seed);
        for j in 0..schema.len() {
            assert_eq!(masked.values[j] == 0.0, mask.missing[j]);
        }
    }
    let (same, mask) = apply_mask(&z, &schema.with_uniform_alpha(0.0).unwrap(), 4);
    assert_eq!(same, z);
    assert_eq!(mask.count(), 0);
}

#[test]
fn dataset_dimensions_and_normalization() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let profiles = daily_profiles(&f, f.nominal_load(), &ProfileConfig::with_steps(500), 1);
    let ds = build_dataset(&f, &profiles, &schema, 9).unwrap();
    assert_eq!(ds.len(), 500);
    assert_eq!(ds.state_dim(), 2 * f.non_slack_nodes().len());
    assert_eq!(ds.state_dim(), 42);
    assert_eq!(ds.train_len(), 400);
    for j in 0..schema.len() {
        let col: Vec<f64> = (0..ds.train_len()).map(|t| ds.model_input(t, None)[j]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9, "channel {j} mean {mean}");
        assert!((std - 1.0).abs() < 1e-9, "channel {j} std {std}");
    }
}

#[test]
fn single_zero_load_step_is_flat() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let ds = build_dataset(&f, &[LoadScenario::zero(&f)], &schema, 0).unwrap();
    let layout = StateLayout::new(&f);
    assert_eq!(ds.samples()[0].x, layout.flat_start());
}

#[test]
fn overload_reports_failing_step() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let profiles = vec![f.nominal_load().clone(), f.nominal_load().clone(), f.nominal_load().scaled(100.0)];
    match build_dataset(&f, &profiles, &schema, 0) {
        Err(TelemetryError::PowerFlow { step, .. }) => assert_eq!(step, 2),
        other => panic!("expected power-flow failure, got {other:?}"),
    }
}

#[test]
fn csv_round_trip_and_errors() {
    let f = fixture("eight_bus.toml");
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let profiles = daily_profiles(&f, f.nominal_load(), &ProfileConfig::with_steps(20), 5);
    let ds = build_dataset(&f, &profiles, &schema, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (m, s) = (dir.path().join("z.csv"), dir.path().join("x.csv"));
    ds.export_csv(&m, &s).unwrap();
    let back = import_csv(&m, &s, &schema).unwrap();
    for (a, b) in ds.samples().iter().zip(back.samples()) {
        for (x, y) in a.z.iter().zip(&b.z).chain(a.x.iter().zip(&b.x)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    // Blank cell -> missing.
    let text = std::fs::read_to_string(&m).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[3].split(',').collect();
    cells[4] = "";
    lines[3] = cells.join(",");
    std::fs::write(&m, lines.join("\n") + "\n").unwrap();
    let gap = import_csv(&m, &s, &schema).unwrap();
    assert!(gap.samples()[2].missing[4]);
    assert_eq!(gap.samples()[2].missing.iter().filter(|x| **x).count(), 1);
    assert_eq!(gap.model_input(2, None)[4], 0.0);

    // Permuted header.
    let mut header: Vec<&str> = lines[0].split(',').collect();
    header.swap(0, 1);
    let mut permuted = lines.clone();
    permuted[0] = header.join(",");
    std::fs::write(&m, permuted.join("\n") + "\n").unwrap();
    assert!(matches!(import_csv(&m, &s, &schema), Err(TelemetryError::HeaderMismatch { .. })));

    // Ragged row and bad number.
    let mut ragged = lines.clone();
    ragged[5].push_str(",1.0");
    std::fs::write(&m, ragged.join("\n") + "\n").unwrap();
    assert!(matches!(import_csv(&m, &s, &schema), Err(TelemetryError::RaggedRows { row: 5, .. })));
    let mut garbled = lines.clone();
    garbled[2] = garbled[2].replacen(|c: char| c.is_ascii_digit(), "x", 1);
    std::fs::write(&m, garbled.join("\n") + "\n").unwrap();
    assert!(matches!(import_csv(&m, &s, &schema), Err(TelemetryError::UnparseableNumber { .. })));
}
