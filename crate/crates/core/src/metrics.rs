//! Per-class accuracy and its average / tail / worst-class aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of classes averaged for the tail aggregate.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyKind {
    Clean,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: AccuracyKind,
    pub per_class_accuracy: Vec<f64>,
    /// Unweighted mean of the per-class accuracies.
    pub average: f64,
    pub worst_class: f64,
    pub tail_20pct: f64,
}

impl MetricsReport {
    pub fn num_classes(&self) -> usize {
        self.per_class_accuracy.len()
    }
}

/// Number of classes in the tail: `ceil(fraction * k)`, at least one.
pub fn tail_size(k: usize, fraction: f64) -> usize {
    // Guard against 0.2 * 10 evaluating to 2.0000000000000004.
    let raw = fraction * k as f64;
    let rounded = raw.round();
    let n = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (n as usize).clamp(1, k)
}

pub fn compute_metrics(
    per_class_correct: &[usize],
    per_class_total: &[usize],
    kind: AccuracyKind,
) -> Result<MetricsReport> {
    compute_metrics_with_tail(per_class_correct, per_class_total, kind, DEFAULT_TAIL_FRACTION)
}

pub fn compute_metrics_with_tail(
    per_class_correct: &[usize],
    per_class_total: &[usize],
    kind: AccuracyKind,
    tail_fraction: f64,
) -> Result<MetricsReport> {
    if per_class_correct.len() != per_class_total.len() || per_class_total.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} correct counts vs {} totals",
            per_class_correct.len(),
            per_class_total.len()
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction {tail_fraction} not in (0, 1]"
        )));
    }
    let mut acc = Vec::with_capacity(per_class_total.len());
    for (y, (&c, &t)) in per_class_correct.iter().zip(per_class_total).enumerate() {
        if t == 0 {
            return Err(Error::ZeroTotal(y));
        }
        if c > t {
            return Err(Error::InvalidArgument(format!(
                "class {y}: {c} correct out of {t}"
            )));
        }
        acc.push(c as f64 / t as f64);
    }
    Ok(report_from_accuracies(acc, kind, tail_fraction))
}

pub(crate) fn report_from_accuracies(
    per_class_accuracy: Vec<f64>,
    kind: AccuracyKind,
    tail_fraction: f64,
) -> MetricsReport {
    let k = per_class_accuracy.len();
    let mut order: Vec<usize> = (0..k).collect();
    // Stable sort by (accuracy, class id).
    order.sort_by(|&a, &b| {
        per_class_accuracy[a]
            .total_cmp(&per_class_accuracy[b])
            .then(a.cmp(&b))
    });
    let n_tail = tail_size(k, tail_fraction);
    let tail = order[..n_tail]
        .iter()
        .map(|&y| per_class_accuracy[y])
        .sum::<f64>()
        / n_tail as f64;
    let average = per_class_accuracy.iter().sum::<f64>() / k as f64;
    let worst = per_class_accuracy[order[0]];
    MetricsReport {
        kind,
        average,
        worst_class: worst,
        // Summation order can put the tail mean an ulp outside [worst, average].
        tail_20pct: tail.clamp(worst, average.max(worst)),
        per_class_accuracy,
    }
}
