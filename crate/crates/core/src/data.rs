//! Labeled datasets and their per-class index sets.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Dense `N x d` feature matrix (row-major) with integer class labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
    d: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, k: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset("feature dimension must be >= 1".into()));
        }
        if k < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 classes, got {k}")));
        }
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if features.len() != labels.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of dimension {d}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidDataset(format!("label {bad} not in [0, {k})")));
        }
        Ok(Self {
            features,
            labels,
            k,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// New dataset holding the given rows, in order. Keeps `k`.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.k, self.d)
    }

    /// Stratified split into `(train, holdout)`. Each class keeps at least one
    /// training row; a class with two or more rows contributes at least one
    /// holdout row when `fraction > 0`.
    pub fn stratified_split(&self, fraction: f64, rng: &mut SeededRng) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction {fraction} not in [0, 1)"
            )));
        }
        let partition = ClassPartition::new(self)?;
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for class in partition.iter() {
            let mut rows = class.to_vec();
            rng.shuffle(&mut rows);
            let n = rows.len();
            let mut h = (fraction * n as f64).ceil() as usize;
            if fraction == 0.0 {
                h = 0;
            }
            h = h.min(n - 1);
            holdout.extend_from_slice(&rows[..h]);
            train.extend_from_slice(&rows[h..]);
        }
        train.sort_unstable();
        holdout.sort_unstable();
        let train = self.subset(&train)?;
        let holdout = if holdout.is_empty() {
            train.clone()
        } else {
            self.subset(&holdout)?
        };
        Ok((train, holdout))
    }
}

/// Row indices grouped by label. Every class is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    per_class: Vec<Vec<usize>>,
}

impl ClassPartition {
    pub fn new(dataset: &LabeledDataset) -> Result<Self> {
        partition_by_class(dataset)
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, y: usize) -> &[usize] {
        &self.per_class[y]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.per_class.iter().map(Vec::as_slice)
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }
}

pub fn partition_by_class(dataset: &LabeledDataset) -> Result<ClassPartition> {
    let mut per_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        per_class[y].push(i);
    }
    if let Some(y) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(y));
    }
    Ok(ClassPartition { per_class })
}

/// Uniform draw from the rows of class `y`.
pub fn sample_example(partition: &ClassPartition, y: usize, rng: &mut SeededRng) -> Result<usize> {
    let rows = partition.per_class.get(y).ok_or(Error::IndexOutOfRange {
        index: y,
        len: partition.per_class.len(),
    })?;
    Ok(rows[rng.below(rows.len())])
}
