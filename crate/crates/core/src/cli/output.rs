//! Files written for a finished run. Numbers use the shortest representation
//! that parses back to the same double.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Budget, EpochRecord, RunConfig, TrainResult};
use crate::learner::write_checkpoint;
use crate::metrics::MetricsReport;

use super::spec::{EmitFlags, ExperimentSpec};

pub const METRICS_FILE: &str = "metrics.json";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const HISTORY_FILE: &str = "adversary_history.csv";
pub const REGRET_FILE: &str = "regret.csv";
pub const SPEC_FILE: &str = "spec.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.bin";
pub const EARLY_CHECKPOINT: &str = "checkpoint_early.bin";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPair {
    pub clean: MetricsReport,
    pub robust: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarySummary {
    pub arms: usize,
    pub eta: f64,
    pub gamma: f64,
    pub final_p: Vec<f64>,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub version: String,
    pub config: RunConfig,
    pub num_classes: usize,
    pub train_size: usize,
    pub holdout_size: usize,
    pub total_steps: u64,
    pub early_stop_epoch: usize,
    pub final_holdout: ReportPair,
    pub early_stopped_holdout: ReportPair,
    pub epochs: Vec<EpochRecord>,
    pub budget_per_epoch: Vec<Budget>,
    pub adversary: Option<AdversarySummary>,
    /// Sum of the bounded losses fed to the adversary.
    pub realized_adversary_loss: Option<f64>,
}

impl MetricsFile {
    pub fn from_result(result: &TrainResult) -> Self {
        let pair = |r: &EpochRecord| ReportPair {
            clean: r.holdout_clean.clone(),
            robust: r.holdout_robust.clone(),
        };
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: result.config.clone(),
            num_classes: result.train_data.num_classes(),
            train_size: result.train_data.len(),
            holdout_size: result.holdout_data.len(),
            total_steps: result.total_steps,
            early_stop_epoch: result.early_stop_epoch,
            final_holdout: pair(result.final_record()),
            early_stopped_holdout: pair(result.early_stopped_record()),
            epochs: result.epochs.clone(),
            budget_per_epoch: result.budget_per_epoch.clone(),
            adversary: result.adversary.as_ref().map(|a| AdversarySummary {
                arms: a.num_arms(),
                eta: a.eta(),
                gamma: a.gamma(),
                final_p: a.p().weights().to_vec(),
            }),
            realized_adversary_loss: result.regret.as_ref().map(|t| t.total_loss()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_per_class<W: Write>(result: &TrainResult, mut out: W) -> Result<()> {
    writeln!(out, "class,final_clean,final_robust,early_clean,early_robust")?;
    let last = result.final_record();
    let early = result.early_stopped_record();
    for y in 0..result.train_data.num_classes() {
        writeln!(
            out,
            "{y},{:?},{:?},{:?},{:?}",
            last.holdout_clean.per_class_accuracy[y],
            last.holdout_robust.per_class_accuracy[y],
            early.holdout_clean.per_class_accuracy[y],
            early.holdout_robust.per_class_accuracy[y],
        )?;
    }
    Ok(())
}

/// `step,w0,...,w{m-1}`: one row per recorded adversary distribution.
pub fn write_history<W: Write>(result: &TrainResult, mut out: W) -> Result<()> {
    let m = result
        .adversary_history
        .first()
        .map_or(0, |row| row.weights.len());
    write!(out, "step")?;
    for i in 0..m {
        write!(out, ",w{i}")?;
    }
    writeln!(out)?;
    for row in &result.adversary_history {
        write!(out, "{}", row.step)?;
        for w in &row.weights {
            write!(out, ",{w:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes the run bundle into `dir` (created if needed).
pub fn write_run(result: &TrainResult, spec: &ExperimentSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let emit: EmitFlags = spec.emit;
    write_json(&dir.join(SPEC_FILE), spec)?;
    write_json(&dir.join(METRICS_FILE), &MetricsFile::from_result(result))?;

    let mut out = create(&dir.join(PER_CLASS_FILE))?;
    write_per_class(result, &mut out)?;
    out.flush()?;

    if emit.history && !result.adversary_history.is_empty() {
        let mut out = create(&dir.join(HISTORY_FILE))?;
        write_history(result, &mut out)?;
        out.flush()?;
    }
    if emit.regret {
        if let Some(trace) = &result.regret {
            let mut out = create(&dir.join(REGRET_FILE))?;
            trace.write_csv(&mut out)?;
            out.flush()?;
        }
    }
    if emit.checkpoints {
        let mut out = create(&dir.join(FINAL_CHECKPOINT))?;
        write_checkpoint(&result.final_model, &mut out)?;
        out.flush()?;
        let mut out = create(&dir.join(EARLY_CHECKPOINT))?;
        write_checkpoint(&result.early_stopped_model, &mut out)?;
        out.flush()?;
    }
    if emit.snapshots {
        let snap_dir = dir.join(SNAPSHOT_DIR);
        fs::create_dir_all(&snap_dir)?;
        for (step, model) in result.snapshots.entries() {
            let mut out = create(&snap_dir.join(snapshot_file_name(*step)))?;
            write_checkpoint(model, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn snapshot_file_name(step: u64) -> String {
    format!("step_{step:010}.bin")
}

/// Parses the step back out of a snapshot file name.
pub fn snapshot_step(name: &str) -> Option<u64> {
    name.strip_prefix("step_")?.strip_suffix(".bin")?.parse().ok()
}
