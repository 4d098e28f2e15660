use std::collections::btree_map::{BTreeMap, Entry};

use serde::{Deserialize, Serialize};

use crate::attack::{perturb, AttackConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::learner::{forward_logits, predict, ModelParams};
use crate::metrics::{compute_metrics, AccuracyKind, MetricsReport};
use crate::rng::{derive_seed, SeededRng};

use super::config::EarlyStopMetric;

/// Per-class correct counts on clean and attacked inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCounts {
    pub clean_correct: Vec<usize>,
    pub robust_correct: Vec<usize>,
    pub total: Vec<usize>,
    /// Gradient evaluations spent by the attack.
    pub attack_steps: u64,
}

/// Counts correct predictions on every row. Row `i` is attacked with its own
/// stream `derive_seed(seed, i)`, so results do not depend on evaluation order.
pub fn evaluate_counts(
    model: &ModelParams,
    dataset: &LabeledDataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<EvalCounts> {
    let k = dataset.num_classes();
    let mut counts = EvalCounts {
        clean_correct: vec![0; k],
        robust_correct: vec![0; k],
        total: vec![0; k],
        attack_steps: 0,
    };
    for i in 0..dataset.len() {
        let x = dataset.row(i);
        let y = dataset.label(i);
        counts.total[y] += 1;
        let clean_ok = predict(&forward_logits(model, x)?) == y;
        counts.clean_correct[y] += clean_ok as usize;
        let robust_ok = if attack.enabled {
            let mut rng = SeededRng::new(derive_seed(seed, i as u64));
            let delta = perturb(model, x, y, attack, &mut rng)?;
            counts.attack_steps += attack.steps as u64;
            predict(&forward_logits(model, &delta.apply(x))?) == y
        } else {
            clean_ok
        };
        counts.robust_correct[y] += robust_ok as usize;
    }
    Ok(counts)
}

/// Clean and robust reports for `model` on `dataset`.
pub fn evaluate(
    model: &ModelParams,
    dataset: &LabeledDataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<(MetricsReport, MetricsReport)> {
    let c = evaluate_counts(model, dataset, attack, seed)?;
    Ok((
        compute_metrics(&c.clean_correct, &c.total, AccuracyKind::Clean)?,
        compute_metrics(&c.robust_correct, &c.total, AccuracyKind::Robust)?,
    ))
}

/// Model copies kept during training, keyed by the step at which they were used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapshotStore {
    entries: Vec<(u64, ModelParams)>,
}

impl SnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, model: ModelParams) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if step <= *last {
                return Err(Error::InvalidArgument(format!(
                    "snapshot step {step} not after {last}"
                )));
            }
        }
        self.entries.push((step, model));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u64, ModelParams)] {
        &self.entries
    }

    pub fn steps(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(s, _)| *s)
    }
}

/// Per-class robust 0-1 risk `1 - robust accuracy`.
pub fn class_robust_risk(
    model: &ModelParams,
    dataset: &LabeledDataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let c = evaluate_counts(model, dataset, attack, seed)?;
    Ok(c.robust_correct
        .iter()
        .zip(&c.total)
        .map(|(&r, &t)| 1.0 - r as f64 / t as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRisk {
    /// Snapshot positions drawn, in draw order.
    pub drawn: Vec<usize>,
    /// Per-class risk averaged over the drawn snapshots.
    pub class_risk: Vec<f64>,
    pub worst_class: f64,
    pub average: f64,
}

/// Draws `n` snapshots uniformly with replacement and averages their per-class
/// robust risks; the loss values are averaged, never the parameters.
pub fn ensemble_risk(
    store: &SnapshotStore,
    n: usize,
    dataset: &LabeledDataset,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<EnsembleRisk> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
    }
    let eval_seed = rng.next_u64();
    let drawn: Vec<usize> = (0..n).map(|_| rng.below(store.len())).collect();
    let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let k = dataset.num_classes();
    let mut class_risk = vec![0.0; k];
    for &j in &drawn {
        let risk = match cache.entry(j) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(class_robust_risk(
                &store.entries[j].1,
                dataset,
                attack,
                derive_seed(eval_seed, j as u64),
            )?),
        };
        for (acc, r) in class_risk.iter_mut().zip(risk.iter()) {
            *acc += r;
        }
    }
    for r in &mut class_risk {
        *r /= n as f64;
    }
    let worst_class = class_risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let average = class_risk.iter().sum::<f64>() / k as f64;
    Ok(EnsembleRisk {
        drawn,
        class_risk,
        worst_class,
        average,
    })
}

/// `max_y (1/n) sum_j risk_y(theta_{t_j})` over `n` uniformly drawn snapshots.
pub fn ensemble_worstclass_loss(
    store: &SnapshotStore,
    n: usize,
    dataset: &LabeledDataset,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    Ok(ensemble_risk(store, n, dataset, attack, rng)?.worst_class)
}

/// The five terms of the high-probability worst-class bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBound {
    pub mistake_term: f64,
    pub deviation_term: f64,
    pub range_term: f64,
    pub ensemble_deviation_term: f64,
    pub ensemble_range_term: f64,
}

impl TheoremBound {
    pub fn total(&self) -> f64 {
        self.mistake_term
            + self.deviation_term
            + self.range_term
            + self.ensemble_deviation_term
            + self.ensemble_range_term
    }
}

/// `6C/T + sqrt(4k log(2k/d))/sqrt(T) + (1+2k) log(2k/d)/(3T)
///  + sqrt(2 log(2k/d))/sqrt(n) + 2 log(2k/d)/(3n)`.
pub fn theorem_bound_terms(c: f64, k: usize, t: u64, n: usize, delta: f64) -> Result<TheoremBound> {
    let kf = k as f64;
    if k < 2 || t == 0 || n == 0 || !(c > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "C {c}, k {k}, T {t}, n {n}, delta {delta}"
        )));
    }
    if c < kf * kf.ln() {
        return Err(Error::InvalidArgument(format!(
            "C {c} below k log k = {}",
            kf * kf.ln()
        )));
    }
    let tf = t as f64;
    let nf = n as f64;
    let log_term = (2.0 * kf / delta).ln();
    Ok(TheoremBound {
        mistake_term: 6.0 * c / tf,
        deviation_term: (4.0 * kf * log_term).sqrt() / tf.sqrt(),
        range_term: (1.0 + 2.0 * kf) * log_term / (3.0 * tf),
        ensemble_deviation_term: (2.0 * log_term).sqrt() / nf.sqrt(),
        ensemble_range_term: 2.0 * log_term / (3.0 * nf),
    })
}

pub fn theorem_bound(c: f64, k: usize, t: u64, n: usize, delta: f64) -> Result<f64> {
    Ok(theorem_bound_terms(c, k, t, n, delta)?.total())
}

/// Epoch maximizing the chosen robust holdout metric; the earliest wins ties.
pub fn select_early_stop(reports: &[MetricsReport], metric: EarlyStopMetric) -> Result<usize> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no epochs to select from".into()));
    }
    let score = |r: &MetricsReport| match metric {
        EarlyStopMetric::AverageRobust => r.average,
        EarlyStopMetric::WorstClassRobust => r.worst_class,
    };
    let mut best = 0;
    for (i, r) in reports.iter().enumerate().skip(1) {
        if score(r) > score(&reports[best]) {
            best = i;
        }
    }
    Ok(best)
}
