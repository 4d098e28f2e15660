//! The `cfol` command line: experiment files, dataset ingestion and run outputs.

mod dataset;
mod output;
mod spec;

pub use dataset::{
    generate_synthetic, load_csv, load_idx, DatasetSource, HardClass, SyntheticSpec,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use output::{
    snapshot_file_name, snapshot_step, write_history, write_per_class, write_run,
    AdversarySummary, MetricsFile, ReportPair, EARLY_CHECKPOINT, FINAL_CHECKPOINT, HISTORY_FILE,
    METRICS_FILE, PER_CLASS_FILE, REGRET_FILE, SNAPSHOT_DIR, SPEC_FILE,
};
pub use spec::{EmitFlags, ExperimentSpec, SweepGrid};

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    bound_monitor, ensemble_risk, evaluate, regret_check, split_dataset, theorem_bound_terms,
    train, Method, RegretStatus, RegretTrace, SnapshotStore,
};
use crate::learner::read_checkpoint;
use crate::rng::{derive_seed, SeededRng};

/// Exit code for bad flags, configs and specs.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running, including a failed diagnostic.
pub const EXIT_RUNTIME: i32 = 1;

const STREAM_EVALUATE: u64 = 5 << 20;
const STREAM_BOUND_CHECK: u64 = 6 << 20;

#[derive(Debug, Parser)]
#[command(name = "cfol", about = "Class-focused online learning for adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run and write its outputs.
    Train(RunArgs),
    /// Evaluate a checkpoint on the holdout split of an experiment.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every point of the experiment's sweep grid.
    Sweep(RunArgs),
    /// Check the Exp3 regret bound on a stored trace.
    RegretCheck {
        /// Run directory holding spec.json, metrics.json and regret.csv.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        arms: Option<usize>,
    },
    /// Compare the ensemble worst-class risk with the high-probability bound.
    BoundCheck {
        /// Stored run with snapshots; otherwise a fresh monitor run from --config.
        #[arg(long, conflicts_with = "config")]
        run: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training runs allowed while searching for a consistent mistake bound.
        #[arg(long, default_value_t = 4)]
        max_runs: usize,
    },
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        let run = &mut spec.run;
        if let Some(v) = self.seed {
            run.seed = v;
        }
        if let Some(v) = self.method {
            run.method = v;
        }
        if let Some(v) = self.gamma {
            run.gamma = Some(v);
        }
        if let Some(v) = self.eta {
            run.eta = Some(v);
        }
        if let Some(v) = self.alpha {
            run.alpha = Some(v);
        }
        if let Some(v) = self.epochs {
            run.epochs = v;
        }
        if let Some(v) = &self.out {
            spec.output_dir = v.clone();
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidHyperparameter(_)
        | Error::MistakeBoundTooSmall { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (program name first), runs the command and returns its exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}")?;
    Ok(())
}

/// Loads the spec, applies flag overrides and validates the run config.
fn load_spec(args: &RunArgs) -> Result<(ExperimentSpec, PathBuf)> {
    let (spec, base) = load_spec_unchecked(args)?;
    spec.run.validate()?;
    Ok((spec, base))
}

fn load_spec_unchecked(args: &RunArgs) -> Result<(ExperimentSpec, PathBuf)> {
    let (mut spec, base) = ExperimentSpec::load(&args.config)?;
    args.overrides.apply(&mut spec);
    Ok((spec.resolved(&base)?, base))
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Version => {
            println!("cfol {}", env!("CARGO_PKG_VERSION"));
            Ok(0)
        }
        Command::Train(args) => {
            let (spec, base) = load_spec(&args)?;
            let data = spec.dataset.load(&base, spec.run.seed)?;
            let result = train(&spec.run, &data)?;
            write_run(&result, &spec, &spec.output_dir)?;
            let last = result.final_record();
            log::info!(
                "final holdout robust: average {} worst class {}",
                last.holdout_robust.average,
                last.holdout_robust.worst_class
            );
            Ok(0)
        }
        Command::Sweep(args) => {
            let (spec, base) = load_spec(&args)?;
            let grid = spec.sweep.clone().unwrap_or_default();
            let runs = grid.expand(&spec.run);
            for run in &runs {
                run.validate()?;
            }
            fs::create_dir_all(&spec.output_dir)?;
            let mut summary = File::create(spec.output_dir.join("summary.csv"))?;
            writeln!(
                summary,
                "run,method,gamma,eta,alpha,seed,final_average_robust,final_tail_robust,final_worst_robust,early_average_robust,early_tail_robust,early_worst_robust"
            )?;
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
            for (i, run) in runs.iter().enumerate() {
                let run_spec = ExperimentSpec {
                    run: run.clone(),
                    output_dir: spec.output_dir.join(format!("run_{i:03}")),
                    sweep: None,
                    ..spec.clone()
                };
                let data = run_spec.dataset.load(&base, run.seed)?;
                let result = train(run, &data)?;
                write_run(&result, &run_spec, &run_spec.output_dir)?;
                let last = &result.final_record().holdout_robust;
                let early = &result.early_stopped_record().holdout_robust;
                writeln!(
                    summary,
                    "{i},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                    run.method,
                    opt(run.gamma),
                    opt(run.eta),
                    opt(run.alpha),
                    run.seed,
                    last.average,
                    last.tail_20pct,
                    last.worst_class,
                    early.average,
                    early.tail_20pct,
                    early.worst_class
                )?;
            }
            Ok(0)
        }
        Command::Evaluate { run, checkpoint } => {
            let (spec, base) = load_spec(&run)?;
            let data = spec.dataset.load(&base, spec.run.seed)?;
            let (_, holdout) = split_dataset(&spec.run, &data)?;
            let file = File::open(&checkpoint)
                .map_err(|e| Error::Io(format!("{}: {e}", checkpoint.display())))?;
            let model = read_checkpoint(BufReader::new(file))?;
            let (clean, robust) = evaluate(
                &model,
                &holdout,
                &spec.run.eval_attack,
                derive_seed(spec.run.seed, STREAM_EVALUATE),
            )?;
            let pair = ReportPair { clean, robust };
            if run.overrides.out.is_some() {
                fs::create_dir_all(&spec.output_dir)?;
                let text = serde_json::to_string_pretty(&pair).map_err(|e| Error::Io(e.to_string()))?;
                fs::write(spec.output_dir.join("evaluation.json"), text + "\n")?;
            }
            print_json(&pair)?;
            Ok(0)
        }
        Command::RegretCheck {
            run,
            trace,
            eta,
            gamma,
            arms,
        } => regret_command(run, trace, eta, gamma, arms),
        Command::BoundCheck {
            run,
            overrides,
            config,
            max_runs,
        } => match (run, config) {
            (Some(dir), None) => stored_bound_check(&dir),
            (None, Some(config)) => {
                // The monitor chooses eta and gamma itself.
                let args = RunArgs { config, overrides };
                let (spec, base) = load_spec_unchecked(&args)?;
                let data = spec.dataset.load(&base, spec.run.seed)?;
                let (report, _) = bound_monitor(&spec.run, &data, max_runs)?;
                print_json(&report)?;
                Ok(if report.holds { 0 } else { EXIT_RUNTIME })
            }
            _ => Err(Error::InvalidConfig("bound-check needs --run or --config".into())),
        },
    }
}

fn regret_command(
    run: Option<PathBuf>,
    trace: Option<PathBuf>,
    eta: Option<f64>,
    gamma: Option<f64>,
    arms: Option<usize>,
) -> Result<i32> {
    let stored = match &run {
        Some(dir) => Some(MetricsFile::read(&dir.join(METRICS_FILE))?),
        None => None,
    };
    let adversary = stored.as_ref().and_then(|m| m.adversary.clone());
    let missing = |what: &str| Error::InvalidConfig(format!("regret-check needs {what}"));
    let eta = eta
        .or(adversary.as_ref().map(|a| a.eta))
        .ok_or_else(|| missing("--eta"))?;
    let gamma = gamma
        .or(adversary.as_ref().map(|a| a.gamma))
        .ok_or_else(|| missing("--gamma"))?;
    let arms = arms
        .or(adversary.as_ref().map(|a| a.arms))
        .ok_or_else(|| missing("--arms"))?;
    let path = trace
        .or_else(|| run.map(|d| d.join(REGRET_FILE)))
        .ok_or_else(|| missing("--trace or --run"))?;
    let file = File::open(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let trace = RegretTrace::read_csv(arms, BufReader::new(file))?;
    let report = regret_check(&trace, eta, gamma, arms)?;
    print_json(&report)?;
    Ok(match report.status {
        RegretStatus::Fail => EXIT_RUNTIME,
        RegretStatus::Pass | RegretStatus::PreconditionViolated => 0,
    })
}

#[derive(Debug, Serialize)]
struct StoredBoundReport {
    mistake_bound: f64,
    total_steps: u64,
    snapshots: usize,
    ensemble_n: usize,
    ensemble_worst_class: f64,
    bound: crate::harness::TheoremBound,
    bound_total: f64,
    holds: bool,
}

/// Bound check on the snapshots of a finished run, with `C` the realized loss.
fn stored_bound_check(dir: &Path) -> Result<i32> {
    let (spec, base) = ExperimentSpec::load(&dir.join(SPEC_FILE))?;
    let metrics = MetricsFile::read(&dir.join(METRICS_FILE))?;
    let realized = metrics.realized_adversary_loss.ok_or_else(|| {
        Error::InvalidConfig("bound-check needs a run with a class adversary".into())
    })?;
    let data = spec.dataset.load(&base, spec.run.seed)?;
    let (train_data, _) = split_dataset(&spec.run, &data)?;

    let mut store = SnapshotStore::new();
    let snap_dir = dir.join(SNAPSHOT_DIR);
    let mut entries: Vec<(u64, PathBuf)> = fs::read_dir(&snap_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", snap_dir.display())))?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let step = snapshot_step(entry.file_name().to_str()?)?;
            Some((step, entry.path()))
        })
        .collect();
    entries.sort();
    for (step, path) in entries {
        let model = read_checkpoint(BufReader::new(File::open(&path)?))?;
        store.push(step, model)?;
    }

    let k = train_data.num_classes();
    let c = realized.max(k as f64 * (k as f64).ln());
    let n = spec.run.ensemble_n;
    let mut rng = SeededRng::new(derive_seed(spec.run.seed, STREAM_BOUND_CHECK));
    let ensemble = ensemble_risk(&store, n, &train_data, &spec.run.train_attack, &mut rng)?;
    let bound = theorem_bound_terms(c, k, metrics.total_steps, n, spec.run.failure_delta)?;
    let report = StoredBoundReport {
        mistake_bound: c,
        total_steps: metrics.total_steps,
        snapshots: store.len(),
        ensemble_n: n,
        ensemble_worst_class: ensemble.worst_class,
        bound_total: bound.total(),
        holds: ensemble.worst_class <= bound.total(),
        bound,
    };
    print_json(&report)?;
    Ok(if report.holds { 0 } else { EXIT_RUNTIME })
}
