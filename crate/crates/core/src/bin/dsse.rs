use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsse_twin::bench::{
    echo_config, emit_report, emit_summary, evaluate, parse_metrics_csv, prepare, run_sweep, train_models,
    write_history_csv, ExperimentConfig, Method, MetricsReport,
};
use dsse_twin::model::{ConcatModel, DtModel, Estimator};
use dsse_twin::Error;

/// Digital-twin state estimation experiments on a radial feeder.
#[derive(Parser)]
#[command(name = "dsse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the measurement and state time series as CSV.
    Gen(Common),
    /// Train the estimator and the ablation, writing checkpoints and loss history.
    Train(Common),
    /// Score saved checkpoints (and WLS) over the missing-rate grid.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding dt.ckpt and ablation.ckpt; defaults to the output directory.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Generate, train, evaluate and report in one run.
    Sweep(Common),
    /// Score only the WLS baseline over the missing-rate grid.
    Wls(Common),
    /// Rebuild summary.csv and sweep.svg from a metrics.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// metrics.csv to read; defaults to the one in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Evaluation seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Evaluation missing rates, comma separated.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Number of simulated time steps.
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.alphas {
            cfg.eval_alphas = v.clone();
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.data_seed {
            cfg.data_seed = v;
        }
        if let Some(v) = self.steps {
            cfg.profile.steps = v;
        }
        cfg.validate()?;
        echo_config(&cfg)?;
        Ok(cfg)
    }
}

fn print_summary(report: &MetricsReport) {
    for alpha in report.alphas() {
        let cells: Vec<String> = Method::ALL
            .iter()
            .filter_map(|&m| report.mean(m, alpha, "mae_mag_pu").map(|v| format!("{m} {v:.3e}")))
            .collect();
        println!("alpha {alpha:<4}  mean |V| MAE: {}", cells.join("  "));
    }
    for (alpha, seed, f) in &report.wls_failures {
        if f.rank_deficient + f.no_convergence > 0 {
            println!(
                "alpha {alpha:<4}  seed {seed}: WLS failed on {}/{} steps ({} rank deficient)",
                f.rank_deficient + f.no_convergence,
                f.attempts,
                f.rank_deficient
            );
        }
    }
}

fn finish(report: &MetricsReport, failure: Option<Error>, cfg: &ExperimentConfig) -> Result<(), Error> {
    emit_report(report, &cfg.out_dir)?;
    print_summary(report);
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(common) => {
            let cfg = common.load()?;
            let prepared = prepare(&cfg)?;
            let (m, s) = (cfg.out_dir.join("measurements.csv"), cfg.out_dir.join("states.csv"));
            prepared.data.export_csv(&m, &s)?;
            println!(
                "{} steps ({} for training), {} channels, {} states -> {}",
                prepared.data.len(),
                prepared.data.train_len(),
                prepared.data.schema().len(),
                prepared.data.state_dim(),
                cfg.out_dir.display()
            );
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            let prepared = prepare(&cfg)?;
            let trained = train_models(&cfg, &prepared)?;
            trained.dt.save(cfg.out_dir.join("dt.ckpt"))?;
            let mut histories = vec![("dt", &trained.dt_report)];
            if let Some((ab, r)) = &trained.ablation {
                ab.save(cfg.out_dir.join("ablation.ckpt"))?;
                histories.push(("ablation", r));
            }
            write_history_csv(cfg.out_dir.join("history.csv"), &histories)?;
            for (name, r) in &histories {
                let val = r.history.last().and_then(|h| h.validation);
                println!(
                    "{name}: train loss {:.3e} -> {:.3e}, validation {}, {} updates",
                    r.initial_train_loss,
                    r.final_train_loss,
                    val.map_or("n/a".into(), |v| format!("{v:.3e}")),
                    r.updates
                );
            }
        }
        Command::Eval { common, models } => {
            let mut cfg = common.load()?;
            let dir = models.unwrap_or_else(|| cfg.out_dir.clone());
            let dt = DtModel::load(dir.join("dt.ckpt"))?;
            let ablation = if cfg.ablation { Some(ConcatModel::load(dir.join("ablation.ckpt"))?) } else { None };
            cfg.model = dt.config().clone();
            let prepared = prepare(&cfg)?;
            let (report, failure) = evaluate(&cfg, &prepared, Some(&dt), ablation.as_ref(), cfg.wls.enabled);
            finish(&report, failure, &cfg)?;
        }
        Command::Sweep(common) => {
            let cfg = common.load()?;
            let out = run_sweep(&cfg)?;
            print_summary(&out.report);
            for f in &out.fragility {
                println!(
                    "alpha {:<4}  WLS rank deficient on {:.1}% of {} solves",
                    f.alpha,
                    100.0 * f.rank_deficient_fraction(),
                    f.attempts
                );
            }
            println!("reports written to {}", cfg.out_dir.display());
        }
        Command::Wls(common) => {
            let cfg = common.load()?;
            let prepared = prepare(&cfg)?;
            let (report, failure) = evaluate(&cfg, &prepared, None, None, true);
            finish(&report, failure, &cfg)?;
        }
        Command::Report { common, input } => {
            let cfg = common.load()?;
            let input = input.unwrap_or_else(|| cfg.out_dir.join("metrics.csv"));
            let report = MetricsReport {
                records: parse_metrics_csv(&input)?,
                ..MetricsReport::default()
            };
            emit_summary(&report, &cfg.out_dir)?;
            print_summary(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
