//! Training loops for ERM, CFOL, reweighted CFOL, FOL and LCVaR adversarial
//! training, plus evaluation and the convergence diagnostics.

mod bound;
mod config;
mod evaluate;
mod regret;
mod sampling;

pub use bound::{bound_monitor, BoundMonitorReport};
pub use config::{
    AdversaryLoss, EarlyStopMetric, Method, MethodSettings, OptimizerConfig, RunConfig,
    DEFAULT_GAMMA,
};
pub use evaluate::{
    class_robust_risk, ensemble_risk, ensemble_worstclass_loss, evaluate, evaluate_counts,
    select_early_stop, theorem_bound, theorem_bound_terms, EnsembleRisk, EvalCounts,
    SnapshotStore, TheoremBound,
};
pub use regret::{regret_check, RegretReport, RegretRow, RegretStatus, RegretTrace, REGRET_TOLERANCE};
pub use sampling::{Draw, SamplingScheme};

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryState;
use crate::attack::{perturb, AttackConfig};
use crate::cvar::lcvar_class_weights;
use crate::data::{ClassPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::learner::{
    accumulate_backward, clipped_cross_entropy, forward_logits, sgd_step, zero_one_loss,
    GradientBuffer, ModelParams,
};
use crate::metrics::MetricsReport;
use crate::rng::{derive_seed, SeededRng};

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SAMPLER: u64 = 3;
const STREAM_ATTACK: u64 = 4;
const STREAM_EVAL_HOLDOUT: u64 = 1 << 20;
const STREAM_EVAL_TRAIN: u64 = 2 << 20;

/// Default number of retained snapshots.
pub const MAX_DEFAULT_SNAPSHOTS: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the initialization.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub holdout_clean: MetricsReport,
    pub holdout_robust: MetricsReport,
    pub train_clean: Option<MetricsReport>,
    pub train_robust: Option<MetricsReport>,
    /// Mean cross-entropy on the attacked training examples of the epoch.
    pub mean_train_loss: Option<f64>,
}

/// Work done during one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub steps: u64,
    pub model_gradients: u64,
    pub attack_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub config: RunConfig,
    pub final_model: ModelParams,
    pub early_stopped_model: ModelParams,
    pub early_stop_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub budget_per_epoch: Vec<Budget>,
    /// Sampling distribution `p` (bandit methods) or class weights (LCVaR)
    /// at snapshot steps.
    pub adversary_history: Vec<HistoryRow>,
    pub regret: Option<RegretTrace>,
    pub snapshots: SnapshotStore,
    pub adversary: Option<AdversaryState>,
    pub train_data: LabeledDataset,
    pub holdout_data: LabeledDataset,
    pub total_steps: u64,
}

impl TrainResult {
    pub fn holdout_robust_reports(&self) -> Vec<MetricsReport> {
        self.epochs.iter().map(|e| e.holdout_robust.clone()).collect()
    }

    pub fn final_record(&self) -> &EpochRecord {
        self.epochs.last().expect("initialization record always exists")
    }

    pub fn early_stopped_record(&self) -> &EpochRecord {
        &self.epochs[self.early_stop_epoch]
    }
}

/// Batch sizes for one pass over `n` rows: `ceil(n / b)` batches, the last one
/// possibly smaller. Every method uses the same sizes.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    let full = n / batch_size;
    let mut sizes = vec![batch_size; full];
    if n % batch_size != 0 {
        sizes.push(n % batch_size);
    }
    sizes
}

pub fn default_snapshot_every(total_steps: u64) -> usize {
    total_steps.div_ceil(MAX_DEFAULT_SNAPSHOTS).max(1) as usize
}

fn bounded_loss(kind: AdversaryLoss, logits: &[f64], y: usize) -> f64 {
    match kind {
        AdversaryLoss::ZeroOne => zero_one_loss(logits, y),
        AdversaryLoss::ClippedCrossEntropy => clipped_cross_entropy(logits, y),
    }
}

struct Trainer<'a> {
    config: &'a RunConfig,
    train: &'a LabeledDataset,
    partition: ClassPartition,
    model: ModelParams,
    sampler_rng: SeededRng,
    attack_rng: SeededRng,
    budget: Budget,
    loss_sum: f64,
    loss_count: usize,
}

impl Trainer<'_> {
    fn attacked(&mut self, row: usize) -> Result<Vec<f64>> {
        let x = self.train.row(row);
        let y = self.train.label(row);
        let cfg: &AttackConfig = &self.config.train_attack;
        let delta = perturb(&self.model, x, y, cfg, &mut self.attack_rng)?;
        if cfg.enabled {
            self.budget.attack_steps += cfg.steps as u64;
        }
        Ok(delta.apply(x))
    }

    fn gradient(&mut self, x: &[f64], y: usize, weight: f64, grads: &mut GradientBuffer) -> Result<f64> {
        let loss = accumulate_backward(&self.model, x, y, weight, grads)?;
        self.budget.model_gradients += 1;
        self.loss_sum += loss;
        self.loss_count += 1;
        Ok(loss)
    }
}

/// Train / holdout split used by [`train`] for this config.
pub fn split_dataset(
    config: &RunConfig,
    dataset: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let root = SeededRng::new(config.seed);
    dataset.stratified_split(config.holdout_fraction, &mut root.substream(STREAM_SPLIT))
}

/// Runs the configured method for `epochs * ceil(N_train / B)` steps.
pub fn train(config: &RunConfig, dataset: &LabeledDataset) -> Result<TrainResult> {
    let settings = config.validate()?;
    let root = SeededRng::new(config.seed);
    let (train_data, holdout_data) = split_dataset(config, dataset)?;
    let partition = ClassPartition::new(&train_data)?;
    let n = train_data.len();
    let k = train_data.num_classes();
    let batches = batch_sizes(n, config.batch_size);
    let total_steps = (config.epochs * batches.len()) as u64;
    let snapshot_every = config
        .snapshot_every
        .unwrap_or_else(|| default_snapshot_every(total_steps)) as u64;

    let model = ModelParams::init(
        config.architecture,
        train_data.dim(),
        k,
        &mut root.substream(STREAM_INIT),
    )?;
    let mut opt = config.optimizer.build(n, config.batch_size)?;

    let (scheme, mut adversary) = match settings {
        MethodSettings::Bandit { eta, gamma } => {
            let scheme = SamplingScheme::try_from(config.method)?;
            let adv = AdversaryState::new(scheme.num_arms(&partition), eta, gamma)?;
            (Some(scheme), Some(adv))
        }
        _ => (None, None),
    };
    let lcvar_level = match settings {
        MethodSettings::Lcvar { .. } => Some(config.lcvar_level(k)?),
        _ => None,
    };
    let mut regret = adversary.as_ref().map(|a| RegretTrace::new(a.num_arms()));

    let mut t = Trainer {
        config,
        train: &train_data,
        partition,
        model,
        sampler_rng: root.substream(STREAM_SAMPLER),
        attack_rng: root.substream(STREAM_ATTACK),
        budget: Budget::default(),
        loss_sum: 0.0,
        loss_count: 0,
    };

    let evaluate_epoch = |model: &ModelParams, epoch: usize, step: u64, mean_loss: Option<f64>| -> Result<EpochRecord> {
        let (holdout_clean, holdout_robust) = evaluate(
            model,
            &holdout_data,
            &config.eval_attack,
            derive_seed(config.seed, STREAM_EVAL_HOLDOUT + epoch as u64),
        )?;
        let (train_clean, train_robust) = if config.train_metrics {
            let (c, r) = evaluate(
                model,
                &train_data,
                &config.eval_attack,
                derive_seed(config.seed, STREAM_EVAL_TRAIN + epoch as u64),
            )?;
            (Some(c), Some(r))
        } else {
            (None, None)
        };
        Ok(EpochRecord {
            epoch,
            step,
            holdout_clean,
            holdout_robust,
            train_clean,
            train_robust,
            mean_train_loss: mean_loss,
        })
    };

    let mut epochs = vec![evaluate_epoch(&t.model, 0, 0, None)?];
    let mut early_stopped_model = t.model.clone();
    let mut early_stop_epoch = 0;
    let mut budget_per_epoch = Vec::with_capacity(config.epochs);
    let mut history = Vec::new();
    let mut snapshots = SnapshotStore::new();
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        t.budget = Budget::default();
        t.loss_sum = 0.0;
        t.loss_count = 0;
        let order: Vec<usize> = if scheme.is_none() {
            let mut rows: Vec<usize> = (0..n).collect();
            t.sampler_rng.shuffle(&mut rows);
            rows
        } else {
            Vec::new()
        };
        let mut cursor = 0;
        for &size in &batches {
            let record_now = step % snapshot_every == 0;
            if record_now {
                snapshots.push(step, t.model.clone())?;
                if let Some(adv) = &adversary {
                    history.push(HistoryRow {
                        step,
                        weights: adv.p().weights().to_vec(),
                    });
                }
            }
            let mut grads = GradientBuffer::zeros_like(&t.model);
            match (scheme, lcvar_level) {
                (Some(scheme), _) => {
                    let adv = adversary.as_mut().expect("bandit methods carry an adversary");
                    let trace = regret.as_mut().expect("bandit methods carry a trace");
                    let sampling_state = adv.clone();
                    let mut observations = Vec::with_capacity(size);
                    for _ in 0..size {
                        let draw = scheme.draw(&sampling_state, &t.partition, &mut t.sampler_rng)?;
                        let y = t.train.label(draw.row);
                        let xa = t.attacked(draw.row)?;
                        let weight = scheme.gradient_weight(&sampling_state, draw.arm)?;
                        t.gradient(&xa, y, weight, &mut grads)?;
                        let logits = forward_logits(&t.model, &xa)?;
                        observations.push((draw.arm, bounded_loss(config.adversary_loss, &logits, y)));
                    }
                    for (arm, loss) in observations {
                        let estimate = scheme.estimate(&sampling_state, arm, loss)?;
                        trace.record(
                            step,
                            arm,
                            loss,
                            scheme.arm_probability(&sampling_state, arm),
                            adv.q(),
                            &estimate,
                        )?;
                        adv.exp3_update(&estimate)?;
                    }
                }
                (None, Some(level)) => {
                    let rows = &order[cursor..cursor + size];
                    let mut attacked = Vec::with_capacity(size);
                    let mut class_sum = vec![0.0; k];
                    let mut class_count = vec![0usize; k];
                    for &row in rows {
                        let y = t.train.label(row);
                        let xa = t.attacked(row)?;
                        let logits = forward_logits(&t.model, &xa)?;
                        class_sum[y] += clipped_cross_entropy(&logits, y);
                        class_count[y] += 1;
                        attacked.push((xa, y));
                    }
                    let present: Vec<usize> = (0..k).filter(|&y| class_count[y] > 0).collect();
                    let mut class_weight = vec![0.0; k];
                    if present.len() == 1 {
                        class_weight[present[0]] = 1.0;
                    } else {
                        let means: Vec<f64> = present
                            .iter()
                            .map(|&y| class_sum[y] / class_count[y] as f64)
                            .collect();
                        let sol = lcvar_class_weights(&means, level)?;
                        for (&y, &w) in present.iter().zip(sol.weights.weights()) {
                            class_weight[y] = w;
                        }
                    }
                    if record_now {
                        history.push(HistoryRow {
                            step,
                            weights: class_weight.clone(),
                        });
                    }
                    for (xa, y) in attacked {
                        let weight = size as f64 * class_weight[y] / class_count[y] as f64;
                        t.gradient(&xa, y, weight, &mut grads)?;
                    }
                }
                (None, None) => {
                    for &row in &order[cursor..cursor + size] {
                        let y = t.train.label(row);
                        let xa = t.attacked(row)?;
                        t.gradient(&xa, y, 1.0, &mut grads)?;
                    }
                }
            }
            cursor += size;
            grads.scale(1.0 / size as f64);
            sgd_step(&mut t.model, &grads, &mut opt, step)?;
            step += 1;
            t.budget.steps += 1;
            if !t.model.is_finite() {
                return Err(Error::Diverged(step));
            }
        }
        let mean_loss = (t.loss_count > 0).then(|| t.loss_sum / t.loss_count as f64);
        let record = evaluate_epoch(&t.model, epoch, step, mean_loss)?;
        epochs.push(record);
        let candidates: Vec<MetricsReport> =
            epochs[1..].iter().map(|r| r.holdout_robust.clone()).collect();
        if select_early_stop(&candidates, config.early_stop_metric)? + 1 == epoch {
            early_stop_epoch = epoch;
            early_stopped_model = t.model.clone();
        }
        budget_per_epoch.push(t.budget);
    }
    if let Some(adv) = &adversary {
        if history.last().map(|h| h.step) != Some(step) {
            history.push(HistoryRow {
                step,
                weights: adv.p().weights().to_vec(),
            });
        }
    }

    Ok(TrainResult {
        config: config.clone(),
        final_model: t.model,
        early_stopped_model,
        early_stop_epoch,
        epochs,
        budget_per_epoch,
        adversary_history: history,
        regret,
        snapshots,
        adversary,
        train_data,
        holdout_data,
        total_steps,
    })
}
