use std::path::Path;

use super::metrics::{compute_metrics, Method, MetricRecord, MetricsReport, TimeSeries, WlsFailures};
use super::report::{emit_report, write_history_csv};
use super::{io_error, BenchError, ExperimentConfig};
use crate::error::Error;
use crate::grid::{load_feeder, Feeder};
use crate::model::{
    estimate_series, step_mask, train, window_ends, ConcatModel, DtModel, Estimator, TrainReport, MASK_STREAM_EVAL,
};
use crate::telemetry::{build_dataset, daily_profiles, Dataset, MaskVector, MeasurementModel, StateLayout};
use crate::wls::{estimate_wls, WlsError, WlsProblem};

/// Feeder, dataset and the evaluation steps shared by every method.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feeder: Feeder,
    pub data: Dataset,
    pub measurement_model: MeasurementModel,
    /// Steps scored by the sweep: last rows of every window inside the held-out split.
    pub eval_steps: Vec<usize>,
}

impl Prepared {
    pub fn new(feeder: Feeder, data: Dataset, window: usize) -> Result<Prepared, Error> {
        let eval_steps = window_ends(data.train_len()..data.len(), window);
        if eval_steps.is_empty() {
            return Err(BenchError::Config(format!(
                "held-out split has {} steps, fewer than the window length {window}",
                data.len() - data.train_len()
            ))
            .into());
        }
        let measurement_model = MeasurementModel::new(&feeder, data.schema().clone());
        Ok(Prepared {
            feeder,
            data,
            measurement_model,
            eval_steps,
        })
    }

    fn truth(&self) -> Vec<Vec<f64>> {
        self.eval_steps.iter().map(|&s| self.data.samples()[s].x.clone()).collect()
    }

    /// Mask seen by every method at step `s` for evaluation seed `seed`,
    /// including gaps present in the source data.
    fn mask(&self, alpha: f64, seed: u64, s: usize) -> MaskVector {
        let alphas = vec![alpha; self.data.schema().len()];
        let mut mask = step_mask(&alphas, seed, MASK_STREAM_EVAL, s);
        for (m, &gap) in mask.missing.iter_mut().zip(&self.data.samples()[s].missing) {
            *m |= gap;
        }
        mask
    }
}

/// Loads the feeder and synthesizes the noisy dataset described by `cfg`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, Error> {
    let feeder = load_feeder(&cfg.feeder)?;
    let schema = cfg.metering.schema(&feeder)?;
    let profiles = daily_profiles(&feeder, feeder.nominal_load(), &cfg.profile, cfg.data_seed);
    let data = build_dataset(&feeder, &profiles, &schema, cfg.data_seed)?;
    Prepared::new(feeder, data, cfg.model.window)
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub dt: DtModel,
    pub dt_report: TrainReport,
    pub ablation: Option<(ConcatModel, TrainReport)>,
}

/// Trains the estimator (and the ablation when enabled) with the same data,
/// budget and seed.
pub fn train_models(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<TrainedModels, Error> {
    let data = &prepared.data;
    let mut dt = DtModel::for_dataset(cfg.model.clone(), data, cfg.train.seed)?;
    let dt_report = train(&mut dt, data, &cfg.train)?;
    let ablation = if cfg.ablation {
        let mut ab = ConcatModel::for_dataset(cfg.model.clone(), data, cfg.train.seed)?;
        let report = train(&mut ab, data, &cfg.train)?;
        Some((ab, report))
    } else {
        None
    };
    Ok(TrainedModels {
        dt,
        dt_report,
        ablation,
    })
}

struct WlsRun {
    estimates: Vec<Option<Vec<f64>>>,
    failures: WlsFailures,
}

fn run_wls(cfg: &ExperimentConfig, p: &Prepared, alpha: f64, seed: u64, steps: &[usize]) -> Result<WlsRun, Error> {
    let flat = StateLayout::new(&p.feeder).flat_start();
    let mut failures = WlsFailures {
        attempts: 0,
        rank_deficient: 0,
        no_convergence: 0,
    };
    let mut estimates = Vec::with_capacity(steps.len());
    for &s in steps {
        let problem = WlsProblem::new(
            p.measurement_model.clone(),
            p.data.samples()[s].z.clone(),
            Some(p.mask(alpha, seed, s)),
        )?;
        failures.attempts += 1;
        match estimate_wls(&problem, &flat, cfg.wls.tol, cfg.wls.max_iter) {
            Ok(est) => estimates.push(Some(est.x)),
            Err(WlsError::RankDeficient { .. }) => {
                failures.rank_deficient += 1;
                estimates.push(None);
            }
            Err(WlsError::NoConvergence { .. }) => {
                failures.no_convergence += 1;
                estimates.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(WlsRun { estimates, failures })
}

/// WLS outcome counts pooled over several seeds at one α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureFraction {
    pub alpha: f64,
    pub seeds: usize,
    pub attempts: usize,
    pub rank_deficient: usize,
    pub no_convergence: usize,
}

impl FailureFraction {
    pub fn rank_deficient_fraction(&self) -> f64 {
        self.rank_deficient as f64 / self.attempts.max(1) as f64
    }
}

/// Runs WLS on every evaluation step for each seed in `seeds` at missing
/// rate `alpha` and counts the failures.
pub fn wls_failure_fraction(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    alpha: f64,
    seeds: &[u64],
) -> Result<FailureFraction, Error> {
    let mut out = FailureFraction {
        alpha,
        seeds: seeds.len(),
        attempts: 0,
        rank_deficient: 0,
        no_convergence: 0,
    };
    for &seed in seeds {
        let run = run_wls(cfg, prepared, alpha, seed, &prepared.eval_steps)?;
        out.attempts += run.failures.attempts;
        out.rank_deficient += run.failures.rank_deficient;
        out.no_convergence += run.failures.no_convergence;
    }
    Ok(out)
}

#[derive(Default)]
struct PointResult {
    records: Vec<MetricRecord>,
    wls_failures: Option<WlsFailures>,
    timeseries: Option<TimeSeries>,
}

struct Methods<'a> {
    dt: Option<&'a DtModel>,
    ablation: Option<&'a ConcatModel>,
    wls: bool,
}

fn magnitude_at(x: &[f64], k: usize) -> f64 {
    let half = x.len() / 2;
    x[k].hypot(x[half + k])
}

fn eval_point(
    cfg: &ExperimentConfig,
    p: &Prepared,
    methods: &Methods<'_>,
    alpha: f64,
    seed: u64,
    trace_node: Option<usize>,
) -> Result<PointResult, Error> {
    let alphas = vec![alpha; p.data.schema().len()];
    let truth = p.truth();
    let mut out = PointResult::default();
    let mut record = |method, est: &[Vec<f64>], truth: &[Vec<f64>]| -> Result<(), Error> {
        out.records.push(MetricRecord {
            method,
            alpha,
            seed,
            metrics: compute_metrics(est, truth)?,
        });
        Ok(())
    };
    let mut dt_series = None;
    if let Some(dt) = methods.dt {
        let est = estimate_series(dt, &p.data, &p.eval_steps, &alphas, seed)?;
        record(Method::Dt, &est, &truth)?;
        dt_series = Some(est);
    }
    let mut wls_series = None;
    if methods.wls {
        let run = run_wls(cfg, p, alpha, seed, &p.eval_steps)?;
        let (est, tru): (Vec<Vec<f64>>, Vec<Vec<f64>>) = run
            .estimates
            .iter()
            .zip(&truth)
            .filter_map(|(e, t)| e.clone().map(|e| (e, t.clone())))
            .unzip();
        if !est.is_empty() {
            record(Method::Wls, &est, &tru)?;
        }
        out.wls_failures = Some(run.failures);
        wls_series = Some(run.estimates);
    }
    if let Some(ab) = methods.ablation {
        let est = estimate_series(ab, &p.data, &p.eval_steps, &alphas, seed)?;
        record(Method::Ablation, &est, &truth)?;
    }
    if let (Some(k), Some(dt)) = (trace_node, dt_series) {
        out.timeseries = Some(TimeSeries {
            node: cfg.timeseries_node.clone(),
            alpha,
            seed,
            steps: p.eval_steps.clone(),
            truth: truth.iter().map(|x| magnitude_at(x, k)).collect(),
            dt: dt.iter().map(|x| magnitude_at(x, k)).collect(),
            wls: match wls_series {
                Some(w) => w.iter().map(|e| e.as_ref().map(|x| magnitude_at(x, k))).collect(),
                None => vec![None; p.eval_steps.len()],
            },
        });
    }
    Ok(out)
}

fn trace_index(cfg: &ExperimentConfig, p: &Prepared) -> Result<usize, Error> {
    let name = format!("re:{}", cfg.timeseries_node);
    p.data
        .state_names()
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| BenchError::Config(format!("timeseries_node `{}` is not a state node", cfg.timeseries_node)).into())
}

/// Scores each method at every (α, seed) pair of `cfg`. Points are spread
/// over `cfg.jobs` threads and assembled in grid order, so the report does
/// not depend on the thread count. On failure the points finished before
/// the first failing one are returned with the error.
pub fn evaluate(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    dt: Option<&DtModel>,
    ablation: Option<&ConcatModel>,
    wls: bool,
) -> (MetricsReport, Option<Error>) {
    let trace = match trace_index(cfg, prepared) {
        Ok(k) => k,
        Err(e) => return (MetricsReport::default(), Some(e)),
    };
    let methods = Methods { dt, ablation, wls };
    let trace_alpha = cfg.eval_alphas.last().copied();
    let points: Vec<(f64, u64)> = cfg
        .eval_alphas
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let run = |i: usize| {
        let (alpha, seed) = points[i];
        let traced = Some(alpha) == trace_alpha && seed == cfg.seeds[0];
        eval_point(cfg, prepared, &methods, alpha, seed, traced.then_some(trace))
    };
    let jobs = cfg.jobs.clamp(1, points.len().max(1));
    let mut results: Vec<Option<Result<PointResult, Error>>> = (0..points.len()).map(|_| None).collect();
    if jobs == 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            let r = run(i);
            let failed = r.is_err();
            *slot = Some(r);
            if failed {
                break;
            }
        }
    } else {
        let n = points.len();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let run = &run;
                    scope.spawn(move || (j..n).step_by(jobs).map(|i| (i, run(i))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }

    let mut report = MetricsReport::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(Ok(point)) => {
                report.records.extend(point.records);
                if let Some(f) = point.wls_failures {
                    report.wls_failures.push((points[i].0, points[i].1, f));
                }
                if point.timeseries.is_some() {
                    report.timeseries = point.timeseries;
                }
            }
            Some(Err(e)) => return (report, Some(e)),
            None => break,
        }
    }
    (report, None)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: MetricsReport,
    pub dt_report: TrainReport,
    pub ablation_report: Option<TrainReport>,
    pub dt_parameters: usize,
    pub ablation_parameters: Option<usize>,
    /// WLS failure fractions over `wls.failure_seeds` seeds, per evaluation α.
    pub fragility: Vec<FailureFraction>,
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| io_error(path, e).into())
}

/// Writes `config.toml` (the resolved configuration) into the output directory.
pub fn echo_config(cfg: &ExperimentConfig) -> Result<(), Error> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| io_error(&cfg.out_dir, e))?;
    write_text(&cfg.out_dir.join("config.toml"), &cfg.to_toml_string())
}

/// Full protocol: data, training, evaluation grid, WLS fragility study and
/// report files under `cfg.out_dir`. Partial reports are written before an
/// evaluation error is returned.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome, Error> {
    cfg.validate()?;
    echo_config(cfg)?;
    let out = &cfg.out_dir;
    let prepared = prepare(cfg)?;
    let trained = train_models(cfg, &prepared)?;
    let mut histories = vec![("dt", &trained.dt_report)];
    if let Some((_, r)) = &trained.ablation {
        histories.push(("ablation", r));
    }
    write_history_csv(out.join("history.csv"), &histories)?;
    trained.dt.save(out.join("dt.ckpt"))?;
    if let Some((ab, _)) = &trained.ablation {
        ab.save(out.join("ablation.ckpt"))?;
    }
    let mut models = String::from("model,parameters,initial_train_loss,final_train_loss,updates\n");
    let mut model_line = |name: &str, params: usize, r: &TrainReport| {
        models.push_str(&format!(
            "{name},{params},{},{},{}\n",
            r.initial_train_loss, r.final_train_loss, r.updates
        ));
    };
    model_line("dt", trained.dt.params().scalar_count(), &trained.dt_report);
    if let Some((ab, r)) = &trained.ablation {
        model_line("ablation", ab.params().scalar_count(), r);
    }
    write_text(&out.join("models.csv"), &models)?;

    let (report, failure) = evaluate(
        cfg,
        &prepared,
        Some(&trained.dt),
        trained.ablation.as_ref().map(|(m, _)| m),
        cfg.wls.enabled,
    );
    emit_report(&report, out)?;
    if let Some(e) = failure {
        return Err(e);
    }

    let mut fragility = Vec::new();
    if cfg.wls.enabled && cfg.wls.failure_seeds > 0 {
        let seeds: Vec<u64> = (1..=cfg.wls.failure_seeds as u64).collect();
        let mut text = String::from("alpha,seeds,attempts,rank_deficient,no_convergence,rank_deficient_fraction\n");
        for &alpha in &cfg.eval_alphas {
            let f = wls_failure_fraction(cfg, &prepared, alpha, &seeds)?;
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.alpha,
                f.seeds,
                f.attempts,
                f.rank_deficient,
                f.no_convergence,
                f.rank_deficient_fraction()
            ));
            fragility.push(f);
        }
        write_text(&out.join("wls_fragility.csv"), &text)?;
    }

    Ok(SweepOutcome {
        report,
        dt_parameters: trained.dt.params().scalar_count(),
        ablation_parameters: trained.ablation.as_ref().map(|(m, _)| m.params().scalar_count()),
        dt_report: trained.dt_report,
        ablation_report: trained.ablation.map(|(_, r)| r),
        fragility,
    })
}
