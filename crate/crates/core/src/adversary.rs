//! Online-learning players over `m` arms.
//!
//! The adversary maximizes the loss it observes: the state keeps cumulative
//! step-size scaled losses `w`, the softmax `q = softmax(w)` and the mixed
//! sampling distribution `p = gamma/m + (1 - gamma) q`, so arms with high loss
//! gain mass. With `m = k` this is the class adversary;
//! with `m = N` it is the per-example (FOL) adversary.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::simplex::{sample_index, softmax, SimplexDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryState {
    w: Vec<f64>,
    q: SimplexDistribution,
    p: SimplexDistribution,
    eta: f64,
    gamma: f64,
}

/// Importance-weighted loss estimate with at most one nonzero entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimateVector {
    len: usize,
    entry: Option<(usize, f64)>,
}

impl LossEstimateVector {
    pub fn zero(len: usize) -> Self {
        Self { len, entry: None }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The nonzero `(arm, value)` pair, if any.
    pub fn entry(&self) -> Option<(usize, f64)> {
        self.entry
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.entry {
            Some((arm, v)) if arm == i => v,
            _ => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        if let Some((arm, value)) = self.entry {
            v[arm] = value;
        }
        v
    }

    fn single(len: usize, arm: usize, value: f64) -> Self {
        let entry = (value != 0.0).then_some((arm, value));
        Self { len, entry }
    }
}

fn check_loss(loss: f64) -> Result<()> {
    if (0.0..=1.0).contains(&loss) {
        Ok(())
    } else {
        Err(Error::LossOutOfRange(loss))
    }
}

fn check_arm(arm: usize, m: usize) -> Result<()> {
    if arm < m {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index: arm, len: m })
    }
}

impl AdversaryState {
    /// Uniform start: `w = 0`.
    pub fn new(m: usize, eta: f64, gamma: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidHyperparameter(format!("need at least 2 arms, got {m}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("eta must be positive, got {eta}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        let mut state = Self {
            w: vec![0.0; m],
            q: SimplexDistribution::uniform(m),
            p: SimplexDistribution::uniform(m),
            eta,
            gamma,
        };
        state.refresh();
        Ok(state)
    }

    pub fn num_arms(&self) -> usize {
        self.w.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn scores(&self) -> &[f64] {
        &self.w
    }

    /// Learned distribution `softmax(w)`.
    pub fn q(&self) -> &SimplexDistribution {
        &self.q
    }

    /// Mixed sampling distribution.
    pub fn p(&self) -> &SimplexDistribution {
        &self.p
    }

    /// Lower bound `gamma/m` on every entry of `p`.
    pub fn floor(&self) -> f64 {
        self.gamma / self.num_arms() as f64
    }

    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        sample_index(&self.p, rng)
    }

    /// Shifts every score by `c`. Leaves `q` and `p` unchanged up to rounding.
    pub fn shift_scores(&mut self, c: f64) {
        for w in &mut self.w {
            *w += c;
        }
        self.refresh();
    }

    fn refresh(&mut self) {
        let m = self.w.len() as f64;
        let q = softmax(&self.w);
        let p = q
            .iter()
            .map(|&qi| self.gamma / m + (1.0 - self.gamma) * qi)
            .collect();
        self.q = SimplexDistribution::from_raw(q);
        self.p = SimplexDistribution::from_raw(p);
    }

    /// `loss / p[arm]` at `arm`, zero elsewhere. The result is at most `m/gamma`.
    pub fn build_estimator(&self, arm: usize, observed_loss: f64) -> Result<LossEstimateVector> {
        check_arm(arm, self.num_arms())?;
        check_loss(observed_loss)?;
        Ok(LossEstimateVector::single(
            self.num_arms(),
            arm,
            observed_loss / self.p[arm],
        ))
    }

    /// Bandit update with a single-entry estimate.
    pub fn exp3_update(&mut self, estimate: &LossEstimateVector) -> Result<()> {
        if estimate.len() != self.num_arms() {
            return Err(Error::ShapeMismatch(format!(
                "estimate of length {} for {} arms",
                estimate.len(),
                self.num_arms()
            )));
        }
        if let Some((arm, value)) = estimate.entry() {
            self.w[arm] += self.eta * value;
            self.refresh();
        }
        Ok(())
    }

    /// `w <- w + eta * estimate` for an arbitrary dense nonnegative estimate.
    pub fn apply_estimate(&mut self, estimate: &[f64]) -> Result<()> {
        if estimate.len() != self.num_arms() {
            return Err(Error::ShapeMismatch(format!(
                "estimate of length {} for {} arms",
                estimate.len(),
                self.num_arms()
            )));
        }
        for (w, l) in self.w.iter_mut().zip(estimate) {
            *w += self.eta * l;
        }
        self.refresh();
        Ok(())
    }

    /// Full-information Hedge step on a loss vector in `[0, 1]^m`.
    pub fn hedge_full_info_update(&mut self, losses: &[f64]) -> Result<()> {
        for &l in losses {
            check_loss(l)?;
        }
        self.apply_estimate(losses)
    }

    /// `m * p[arm]`: scales a uniformly drawn arm's gradient to match sampling from `p`.
    pub fn reweight_factor(&self, arm: usize) -> Result<f64> {
        check_arm(arm, self.num_arms())?;
        Ok(self.num_arms() as f64 * self.p[arm])
    }
}

/// Estimate for a uniformly drawn arm: `loss * m` at `arm`.
pub fn reweighted_estimator(arm: usize, observed_loss: f64, m: usize) -> Result<LossEstimateVector> {
    check_arm(arm, m)?;
    check_loss(observed_loss)?;
    Ok(LossEstimateVector::single(m, arm, observed_loss * m as f64))
}

/// Step size `sqrt(ln k / (4 k C))` for a mistake bound `C >= k ln k`.
pub fn theoretical_eta(k: usize, mistake_bound: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 arms, got {k}")));
    }
    let kf = k as f64;
    let floor = kf * kf.ln();
    if !(mistake_bound >= floor) {
        return Err(Error::MistakeBoundTooSmall {
            c: mistake_bound,
            floor,
        });
    }
    Ok((kf.ln() / (4.0 * kf * mistake_bound)).sqrt())
}
