use dsse_twin::grid::load_feeder;
use dsse_twin::model::{
    cross_gate, gate_values, gqa_attention, loss, mse, multi_head_attention, project_branch, train, train_on,
    window_ends, Attention, ConcatModel, DtModel, Estimator, FeedForward, ForwardStats, InputDims, Linear,
    ModelConfig, ModelError, TrainConfig,
};
use dsse_twin::rng;
use dsse_twin::telemetry::{build_dataset, daily_profiles, Dataset, Metering, ProfileConfig};
use dsse_twin::tensor::{grad_check_params, Init, ParamStore, Tape, Tensor};
use rand::Rng as _;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn explicit(store: &mut ParamStore, name: &str, t: Tensor) -> dsse_twin::tensor::ParamId {
    store.insert(name, t, Init::Explicit)
}

fn linear(store: &mut ParamStore, name: &str, w: Tensor, b: Tensor) -> Linear {
    Linear {
        w: explicit(store, &format!("{name}.w"), w),
        b: explicit(store, &format!("{name}.b"), b),
    }
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b.cols()]; a.rows()];
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            for k in 0..a.cols() {
                out[i][j] += a.at(i, k) * b.at(k, j);
            }
        }
    }
    out
}

fn tiny_dims() -> InputDims {
    InputDims {
        power: vec![0, 1, 2],
        voltage: vec![3, 4],
        state_dim: 3,
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 4,
        d_ff: 8,
        blocks: 1,
        heads: 2,
        kv_groups: 1,
        window: 2,
        positional_encoding: true,
    }
}

fn small_dataset(steps: usize) -> Dataset {
    let f = load_feeder(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/eight_bus.toml")).unwrap();
    let schema = Metering::eight_bus_default().schema(&f).unwrap();
    let profiles = daily_profiles(&f, f.nominal_load(), &ProfileConfig::with_steps(steps), 3);
    build_dataset(&f, &profiles, &schema, 3).unwrap()
}

#[test]
fn projection_identity_and_zero_input() {
    let mut store = ParamStore::new();
    let mut w = Tensor::zeros(&[2, 4]);
    w.data_mut()[0] = 1.0;
    w.data_mut()[5] = 1.0;
    let proj = linear(&mut store, "p", w, Tensor::zeros(&[4]));
    let z = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.7, 0.0]]).unwrap();
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let out = project_branch(&mut tape, &store, zv, &proj, None).unwrap();
    for t in 0..3 {
        assert_eq!(tape.value(out).row(t), &[z.at(t, 0), z.at(t, 1), 0.0, 0.0]);
    }
    let zeros = tape.constant(Tensor::zeros(&[3, 2]));
    let out = project_branch(&mut tape, &store, zeros, &proj, None).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn projection_matches_naive_matmul() {
    let mut store = ParamStore::new();
    let (w, b, z) = (random(&[5, 6], 1), random(&[6], 2), random(&[4, 5], 3));
    let proj = linear(&mut store, "p", w.clone(), b.clone());
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let out = project_branch(&mut tape, &store, zv, &proj, None).unwrap();
    let oracle = naive_matmul(&z, &w);
    for t in 0..4 {
        for c in 0..6 {
            assert!((tape.value(out).at(t, c) - oracle[t][c] - b.data()[c]).abs() < 1e-12);
        }
    }
    let wrong = tape.constant(random(&[4, 3], 4));
    assert!(project_branch(&mut tape, &store, wrong, &proj, None).is_err());
}

struct AttnFixture {
    store: ParamStore,
    attn: Attention,
    wq: Tensor,
    wk: Vec<Tensor>,
    wv: Vec<Tensor>,
    wo: Tensor,
    bo: Tensor,
}

fn attention_fixture(d: usize, heads: usize, groups: usize, seed: u64) -> AttnFixture {
    let dk = d / heads;
    let mut store = ParamStore::new();
    let wq = random(&[d, d], seed);
    let wk: Vec<Tensor> = (0..groups).map(|g| random(&[d, dk], seed + 10 + g as u64)).collect();
    let wv: Vec<Tensor> = (0..groups).map(|g| random(&[d, dk], seed + 20 + g as u64)).collect();
    let (wo, bo) = (random(&[d, d], seed + 30), random(&[d], seed + 31));
    let attn = Attention {
        wq: explicit(&mut store, "wq", wq.clone()),
        wk: wk.iter().enumerate().map(|(g, t)| explicit(&mut store, &format!("wk{g}"), t.clone())).collect(),
        wv: wv.iter().enumerate().map(|(g, t)| explicit(&mut store, &format!("wv{g}"), t.clone())).collect(),
        out: linear(&mut store, "wo", wo.clone(), bo.clone()),
    };
    AttnFixture {
        store,
        attn,
        wq,
        wk,
        wv,
        wo,
        bo,
    }
}

/// Attention computed one scalar at a time.
fn scalar_attention(x: &Tensor, f: &AttnFixture, heads: usize) -> Vec<Vec<f64>> {
    let (t_len, d) = (x.rows(), x.cols());
    let dk = d / heads;
    let per_group = heads / f.wk.len();
    let q = naive_matmul(x, &f.wq);
    let mut merged = vec![vec![0.0; d]; t_len];
    for h in 0..heads {
        let g = h / per_group;
        let k = naive_matmul(x, &f.wk[g]);
        let v = naive_matmul(x, &f.wv[g]);
        for t in 0..t_len {
            let scores: Vec<f64> = (0..t_len)
                .map(|s| (0..dk).map(|c| q[t][h * dk + c] * k[s][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = e.iter().sum();
            for c in 0..dk {
                merged[t][h * dk + c] = (0..t_len).map(|s| e[s] / sum * v[s][c]).sum();
            }
        }
    }
    let mut out = vec![vec![0.0; d]; t_len];
    for t in 0..t_len {
        for j in 0..d {
            out[t][j] = (0..d).map(|c| merged[t][c] * f.wo.at(c, j)).sum::<f64>() + f.bo.data()[j] + x.at(t, j);
        }
    }
    out
}

#[test]
fn grouped_attention_matches_scalar_oracle() {
    let f = attention_fixture(4, 2, 1, 7);
    let x = random(&[3, 4], 8);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut stats = ForwardStats::default();
    let out = gqa_attention(&mut tape, &f.store, xv, &f.attn, 2, &mut stats).unwrap();
    let oracle = scalar_attention(&x, &f, 2);
    for t in 0..3 {
        for j in 0..4 {
            assert!((tape.value(out).at(t, j) - oracle[t][j]).abs() < 1e-10);
        }
    }
    assert_eq!(stats.kv_projections, 1);
}

#[test]
fn grouped_attention_counts_and_shared_heads() {
    let f = attention_fixture(8, 4, 2, 11);
    let x = random(&[5, 8], 12);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut stats = ForwardStats::default();
    let out = gqa_attention(&mut tape, &f.store, xv, &f.attn, 4, &mut stats).unwrap();
    assert_eq!(stats.kv_projections, 2);
    let oracle = scalar_attention(&x, &f, 4);
    for t in 0..5 {
        for j in 0..8 {
            assert!((tape.value(out).at(t, j) - oracle[t][j]).abs() < 1e-10);
        }
    }
    let mut bad = ForwardStats::default();
    assert!(gqa_attention(&mut tape, &f.store, xv, &f.attn, 3, &mut bad).is_err());
}

#[test]
fn single_step_attention_returns_value_projection() {
    let f = attention_fixture(4, 2, 2, 21);
    let x = random(&[1, 4], 22);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = gqa_attention(&mut tape, &f.store, xv, &f.attn, 2, &mut ForwardStats::default()).unwrap();
    let mut merged = Vec::new();
    for g in 0..2 {
        merged.extend(naive_matmul(&x, &f.wv[g])[0].clone());
    }
    let merged = Tensor::matrix(1, 4, merged).unwrap();
    let proj = naive_matmul(&merged, &f.wo);
    for j in 0..4 {
        let expect = proj[0][j] + f.bo.data()[j] + x.data()[j];
        assert!((tape.value(out).data()[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn full_groups_equal_multi_head_reference() {
    let f = attention_fixture(8, 4, 4, 31);
    let x = random(&[6, 8], 32);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (mut s1, mut s2) = (ForwardStats::default(), ForwardStats::default());
    let a = gqa_attention(&mut tape, &f.store, xv, &f.attn, 4, &mut s1).unwrap();
    let b = multi_head_attention(&mut tape, &f.store, xv, &f.attn, &mut s2).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert_eq!(s1.kv_projections, 4);
    assert_eq!(s2.kv_projections, 4);
}

fn gate_fixture(store: &mut ParamStore, name: &str, d: usize, ff: usize, out_bias: Option<f64>, seed: u64) -> FeedForward {
    let (w2, b2) = match out_bias {
        Some(b) => (Tensor::zeros(&[ff, d]), Tensor::filled(&[d], b)),
        None => (random(&[ff, d], seed + 2), random(&[d], seed + 3)),
    };
    FeedForward {
        hidden: linear(store, &format!("{name}.h"), random(&[d, ff], seed), random(&[ff], seed + 1)),
        out: linear(store, &format!("{name}.o"), w2, b2),
    }
}

#[test]
fn closed_and_open_gates() {
    let (a1, a2) = (random(&[3, 4], 40), random(&[3, 4], 41));
    for (bias, weight) in [(-30.0, 0.0), (30.0, 1.0)] {
        let mut store = ParamStore::new();
        let g1 = gate_fixture(&mut store, "g1", 4, 6, Some(bias), 42);
        let g2 = gate_fixture(&mut store, "g2", 4, 6, Some(bias), 43);
        let mut tape = Tape::new();
        let (v1, v2) = (tape.constant(a1.clone()), tape.constant(a2.clone()));
        let (h1, h2) = cross_gate(&mut tape, &store, v1, v2, &g1, &g2).unwrap();
        for k in 0..12 {
            let (x1, x2) = (a1.data()[k], a2.data()[k]);
            assert!((tape.value(h1).data()[k] - (x1 + weight * x2)).abs() < 1e-9);
            assert!((tape.value(h2).data()[k] - (x2 + weight * x1)).abs() < 1e-9);
        }
    }
}

#[test]
fn cross_gate_matches_scalar_oracle() {
    let (d, ff) = (4, 6);
    let (a1, a2) = (random(&[3, d], 50), random(&[3, d], 51));
    let mut store = ParamStore::new();
    let g1 = gate_fixture(&mut store, "g1", d, ff, None, 52);
    let g2 = gate_fixture(&mut store, "g2", d, ff, None, 62);
    let scalar_gate = |a: &Tensor, g: &FeedForward| -> Vec<Vec<f64>> {
        let (w1, b1) = (store.value(g.hidden.w), store.value(g.hidden.b));
        let (w2, b2) = (store.value(g.out.w), store.value(g.out.b));
        (0..a.rows())
            .map(|t| {
                let h: Vec<f64> = (0..ff)
                    .map(|j| ((0..d).map(|c| a.at(t, c) * w1.at(c, j)).sum::<f64>() + b1.data()[j]).max(0.0))
                    .collect();
                (0..d)
                    .map(|j| {
                        let logit = (0..ff).map(|c| h[c] * w2.at(c, j)).sum::<f64>() + b2.data()[j];
                        1.0 / (1.0 + (-logit).exp())
                    })
                    .collect()
            })
            .collect()
    };
    let (s1, s2) = (scalar_gate(&a1, &g1), scalar_gate(&a2, &g2));
    let mut tape = Tape::new();
    let (v1, v2) = (tape.constant(a1.clone()), tape.constant(a2.clone()));
    let (h1, h2) = cross_gate(&mut tape, &store, v1, v2, &g1, &g2).unwrap();
    for t in 0..3 {
        for c in 0..d {
            let e1 = s2[t][c] * a2.at(t, c) + a1.at(t, c);
            let e2 = s1[t][c] * a1.at(t, c) + a2.at(t, c);
            assert!((tape.value(h1).at(t, c) - e1).abs() < 1e-12);
            assert!((tape.value(h2).at(t, c) - e2).abs() < 1e-12);
        }
    }
    let g = gate_values(&mut tape, &store, v1, &g1).unwrap();
    assert!(tape.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let short = tape.constant(random(&[2, d], 70));
    assert!(cross_gate(&mut tape, &store, v1, short, &g1, &g2).is_err());
}

#[test]
fn zero_final_weights_give_constant_output() {
    let mut model = DtModel::new(tiny_config(), tiny_dims(), 5).unwrap();
    let head = *model.head();
    let bias = Tensor::vector(vec![0.25, -1.5, 3.0]);
    let store = model.params_mut();
    store.set(head.out.w, Tensor::zeros(&[8, 3])).unwrap();
    store.set(head.out.b, bias.clone()).unwrap();
    for seed in 0..4 {
        let out = model.estimate_voltages(&random(&[2, 5], 100 + seed)).unwrap();
        for t in 0..2 {
            assert_eq!(out.row(t), bias.data());
        }
    }
}

#[test]
fn time_permutation_equivariance_without_encoding() {
    let config = ModelConfig {
        window: 5,
        positional_encoding: false,
        ..tiny_config()
    };
    let model = DtModel::new(config, tiny_dims(), 9).unwrap();
    let z = random(&[5, 5], 90);
    let perm = [3, 0, 4, 1, 2];
    let permuted = Tensor::from_rows(&perm.iter().map(|&p| z.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
    let a = model.estimate_voltages(&z).unwrap();
    let b = model.estimate_voltages(&permuted).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for c in 0..3 {
            assert!((b.at(i, c) - a.at(p, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn tiny_model_golden_output() {
    let model = DtModel::new(tiny_config(), tiny_dims(), 2024).unwrap();
    let z = Tensor::matrix(2, 5, vec![0.5, -1.0, 0.25, 1.5, -0.75, -0.2, 0.8, 0.0, -1.1, 0.3]).unwrap();
    let out = model.estimate_voltages(&z).unwrap();
    let golden = [
        -0.06186412637979208,
        -0.17700749000422766,
        0.09192040636932634,
        -0.1122016361514002,
        -0.1656119421878279,
        0.0700696589603296,
];
    for (a, b) in out.data().iter().zip(golden) {
        assert!((a - b).abs() < 1e-12, "{:?}", out.data());
    }
}

#[test]
fn kv_projection_count_per_forward() {
    let config = ModelConfig::default();
    let dims = InputDims {
        power: (0..6).collect(),
        voltage: (6..9).collect(),
        state_dim: 4,
    };
    let model = DtModel::new(config.clone(), dims, 1).unwrap();
    let mut tape = Tape::new();
    let mut stats = ForwardStats::default();
    model.forward(&mut tape, model.params(), &random(&[8, 9], 3), &mut stats).unwrap();
    assert_eq!(stats.attention_calls, 2 * config.blocks);
    assert_eq!(stats.kv_projections, 2 * config.blocks * config.kv_groups);
}

#[test]
fn loss_oracles() {
    let x = random(&[3, 5], 1);
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    let shifted = Tensor::new(vec![3, 5], x.data().iter().map(|v| v + 1.0).collect()).unwrap();
    assert!((mse(&shifted, &x).unwrap() - 1.0).abs() < 1e-12);
    let y = random(&[3, 5], 2);
    let mut oracle = 0.0;
    for t in 0..3 {
        for i in 0..5 {
            oracle += (x.at(t, i) - y.at(t, i)).powi(2);
        }
    }
    oracle /= 15.0;
    assert!((mse(&x, &y).unwrap() - oracle).abs() < 1e-12);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let l = loss(&mut tape, xv, &y).unwrap();
    assert!((tape.value(l).item() - oracle).abs() < 1e-12);
    assert!(mse(&x, &random(&[5, 3], 3)).is_err());
    assert!(loss(&mut tape, xv, &random(&[5], 3)).is_err());
}

#[test]
fn end_to_end_gradient_check() {
    let model = DtModel::new(tiny_config(), tiny_dims(), 77).unwrap();
    let z = random(&[2, 5], 78);
    let target = random(&[2, 3], 79);
    let mut store = model.params().clone();
    let err = grad_check_params(
        &mut store,
        |tape, s| {
            let out = model.forward(tape, s, &z, &mut ForwardStats::default())?;
            loss(tape, out, &target)
        },
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn config_validation() {
    let bad = |c: ModelConfig| DtModel::new(c, tiny_dims(), 0).is_err();
    assert!(bad(ModelConfig {
        kv_groups: 3,
        ..ModelConfig::default()
    }));
    assert!(bad(ModelConfig {
        heads: 3,
        kv_groups: 1,
        ..ModelConfig::default()
    }));
    assert!(bad(ModelConfig {
        window: 0,
        ..ModelConfig::default()
    }));
    let empty = InputDims {
        power: vec![],
        voltage: vec![0],
        state_dim: 1,
    };
    assert!(DtModel::new(ModelConfig::default(), empty, 0).is_err());
    let model = DtModel::new(tiny_config(), tiny_dims(), 0).unwrap();
    assert!(model.estimate_voltages(&random(&[3, 5], 0)).is_err());
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        learning_rate: 1e-3,
        seed: 4,
        mask_alpha: Some(0.05),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_return_initial_model() {
    let data = small_dataset(40);
    let mut model = DtModel::for_dataset(ModelConfig::default(), &data, 1).unwrap();
    let before = model.clone();
    let report = train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 0,
            ..quick_train()
        },
    )
    .unwrap();
    assert!(report.history.is_empty());
    assert_eq!(report.updates, 0);
    assert_eq!(model, before);
}

#[test]
fn training_is_deterministic() {
    let data = small_dataset(60);
    let run = || {
        let mut model = DtModel::for_dataset(ModelConfig::default(), &data, 8).unwrap();
        let report = train(&mut model, &data, &quick_train()).unwrap();
        (model, report)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert_eq!(r1.history.len(), 2);
    assert!(r1.history.iter().all(|h| h.train.is_finite() && h.validation.unwrap().is_finite()));
    assert_eq!(r1.updates, 2 * window_ends(0..data.train_len(), 8).len());
}

#[test]
fn divergence_is_reported() {
    let data = small_dataset(30);
    let mut model = DtModel::new(ModelConfig::default(), InputDims::from_dataset(&data), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e150,
        ..quick_train()
    };
    assert!(matches!(train(&mut model, &data, &cfg), Err(ModelError::NonFiniteLoss { .. })));
}

#[test]
fn short_dataset_is_rejected() {
    let data = small_dataset(8);
    let mut model = DtModel::for_dataset(ModelConfig::default(), &data, 1).unwrap();
    assert!(matches!(train(&mut model, &data, &quick_train()), Err(ModelError::DatasetTooShort { .. })));
    assert!(train_on(&mut model, &data, &[], &[], &quick_train()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let data = small_dataset(30);
    let dir = tempfile::tempdir().unwrap();
    let model = DtModel::for_dataset(ModelConfig::default(), &data, 12).unwrap();
    let path = dir.path().join("dt.ckpt");
    model.save(&path).unwrap();
    let loaded = DtModel::load(&path).unwrap();
    assert_eq!(loaded.params().len(), model.params().len());
    let z = random(&[8, data.schema().len()], 5);
    assert_eq!(loaded.estimate_voltages(&z).unwrap(), model.estimate_voltages(&z).unwrap());
    assert!(matches!(ConcatModel::load(&path), Err(ModelError::Checkpoint(_))));

    let concat = ConcatModel::for_dataset(ModelConfig::default(), &data, 12).unwrap();
    let cpath = dir.path().join("concat.ckpt");
    concat.save(&cpath).unwrap();
    let back = ConcatModel::load(&cpath).unwrap();
    assert_eq!(back.estimate_voltages(&z).unwrap(), concat.estimate_voltages(&z).unwrap());
}

#[test]
fn ablation_is_smaller_and_trains() {
    let data = small_dataset(60);
    let dt = DtModel::for_dataset(ModelConfig::default(), &data, 3).unwrap();
    let mut ab = ConcatModel::for_dataset(ModelConfig::default(), &data, 3).unwrap();
    assert!(ab.params().scalar_count() < dt.params().scalar_count());
    let mut stats = ForwardStats::default();
    let mut tape = Tape::new();
    ab.forward(&mut tape, ab.params(), &random(&[8, data.schema().len()], 1), &mut stats).unwrap();
    assert_eq!(stats.kv_projections, 2 * 2);
    let report = train(&mut ab, &data, &quick_train()).unwrap();
    assert!(report.final_train_loss.is_finite());
}
