//! Probability vectors and sampling from them.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Absolute tolerance on the sum of a probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexDistribution {
    weights: Vec<f64>,
}

impl SimplexDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("weight {w} is not a nonnegative real")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0);
        Self {
            weights: vec![1.0 / m as f64; m],
        }
    }

    /// `exp(v_i - max v) / sum_j exp(v_j - max v)`.
    pub fn softmax(values: &[f64]) -> Self {
        Self {
            weights: softmax(values),
        }
    }

    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.weights
    }
}

impl std::ops::Index<usize> for SimplexDistribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Draws index `i` with probability `dist[i]` by inverting the CDF.
pub fn sample_index(dist: &SimplexDistribution, rng: &mut SeededRng) -> usize {
    let u = rng.uniform() * dist.weights.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in dist.weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freqs(weights: Vec<f64>, draws: usize, seed: u64) -> Vec<f64> {
        let d = SimplexDistribution::new(weights).unwrap();
        let mut rng = SeededRng::new(seed);
        let mut counts = vec![0usize; d.len()];
        for _ in 0..draws {
            counts[sample_index(&d, &mut rng)] += 1;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn dirac_always_hits() {
        let d = SimplexDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = SeededRng::new(0);
        assert!((0..1000).all(|_| sample_index(&d, &mut rng) == 0));
        let d = SimplexDistribution::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!((0..1000).all(|_| sample_index(&d, &mut rng) == 2));
    }

    #[test]
    fn monte_carlo_frequencies() {
        let f = freqs(vec![0.5, 0.5], 100_000, 11);
        assert!((f[0] - 0.5).abs() <= 0.01);
        let w = vec![0.25, 0.25, 0.5];
        let f = freqs(w.clone(), 100_000, 12);
        for (a, b) in f.iter().zip(&w) {
            assert!((a - b).abs() <= 0.01, "{f:?}");
        }
    }

    #[test]
    fn validates_weights() {
        assert!(SimplexDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(SimplexDistribution::new(vec![]).is_err());
        assert!(SimplexDistribution::new(vec![0.3, 0.7 + 1e-12]).is_ok());
    }

    #[test]
    fn softmax_survives_large_negative_values() {
        let s = softmax(&[-1e6, -1e6 - 1.0]);
        assert!((s[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }
}
