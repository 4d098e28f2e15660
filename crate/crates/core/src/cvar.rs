//! Conditional value at risk over a finite set of losses.
//!
//! `CVaR_alpha = max { sum_i p_i l_i : p in simplex, p_i <= 1/(alpha m) }`,
//! computed either by the sort-and-fill best response or by the dual
//! `min_lambda lambda + 1/(alpha m) sum_i (l_i - lambda)_+`.

use crate::error::{Error, Result};
use crate::simplex::SimplexDistribution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CVaRLevel(f64);

impl CVaRLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidArgument(format!("CVaR level {alpha} not in (0, 1]")))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    /// Per-item cap `1/(alpha m)`.
    pub fn cap(self, m: usize) -> f64 {
        1.0 / (self.0 * m as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVaRSolution {
    pub weights: SimplexDistribution,
    pub value: f64,
    /// Dual variable; `None` for the primal route.
    pub lambda: Option<f64>,
}

/// Indices sorted by descending loss, lower index first among ties.
fn descending_order(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    order
}

fn check_losses(losses: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("CVaR of an empty loss vector".into()));
    }
    if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite loss {l}")));
    }
    Ok(())
}

/// Worst-case weights under the cap: fill `1/(alpha m)` per item in descending
/// loss order until the unit mass is used up.
pub fn cvar_best_response(losses: &[f64], level: CVaRLevel) -> Result<CVaRSolution> {
    check_losses(losses)?;
    let m = losses.len();
    let cap = level.cap(m);
    let mut weights = vec![0.0; m];
    let mut remaining = 1.0f64;
    for i in descending_order(losses) {
        if remaining <= 0.0 {
            break;
        }
        let mass = cap.min(remaining);
        weights[i] = mass;
        remaining -= mass;
    }
    let value = weights.iter().zip(losses).map(|(w, l)| w * l).sum();
    Ok(CVaRSolution {
        weights: SimplexDistribution::new(weights)?,
        value,
        lambda: None,
    })
}

/// Dual route. The objective is piecewise linear and convex with breakpoints at
/// the losses; its minimum is attained at the `ceil(alpha m)`-th largest loss,
/// which is returned as `lambda`.
pub fn cvar_dual_value(losses: &[f64], level: CVaRLevel) -> Result<CVaRSolution> {
    check_losses(losses)?;
    let m = losses.len();
    let alpha_m = level.alpha() * m as f64;
    let order = descending_order(losses);
    // Smallest j (1-based) with j >= alpha m, i.e. #{l >= l_(j)} >= alpha m.
    let j = ((alpha_m - 1e-12).ceil() as usize).clamp(1, m);
    let lambda = losses[order[j - 1]];
    let excess: f64 = losses.iter().map(|&l| (l - lambda).max(0.0)).sum();
    let value = lambda + excess / alpha_m;

    // Primal weights recovered from lambda: cap above lambda, the rest on ties.
    let cap = level.cap(m);
    let mut weights = vec![0.0; m];
    let mut remaining = 1.0f64;
    for &i in order.iter().filter(|&&i| losses[i] > lambda) {
        weights[i] = cap.min(remaining);
        remaining -= weights[i];
    }
    for &i in order.iter().filter(|&&i| losses[i] == lambda) {
        if remaining <= 0.0 {
            break;
        }
        weights[i] = cap.min(remaining);
        remaining -= weights[i];
    }
    Ok(CVaRSolution {
        weights: SimplexDistribution::new(weights)?,
        value,
        lambda: Some(lambda),
    })
}

/// Dual objective `lambda + 1/(alpha m) sum (l - lambda)_+`.
pub fn cvar_dual_objective(losses: &[f64], level: CVaRLevel, lambda: f64) -> f64 {
    let alpha_m = level.alpha() * losses.len() as f64;
    lambda + losses.iter().map(|&l| (l - lambda).max(0.0)).sum::<f64>() / alpha_m
}

/// CVaR weights over classes (the LCVaR adversary).
pub fn lcvar_class_weights(class_losses: &[f64], level: CVaRLevel) -> Result<CVaRSolution> {
    if class_losses.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "LCVaR needs at least 2 classes, got {}",
            class_losses.len()
        )));
    }
    cvar_best_response(class_losses, level)
}

/// CVaR level whose cap equals the Exp3 mixing cap: `1/((1 - gamma) m + gamma)`.
pub fn alpha_from_gamma(gamma: f64, m: usize) -> Result<CVaRLevel> {
    check_gamma(gamma, m)?;
    CVaRLevel::new(1.0 / ((1.0 - gamma) * m as f64 + gamma))
}

/// Upper bound `1 - (m - 1) gamma / m` implied by the floor `gamma/m`.
pub fn mixing_cap(gamma: f64, m: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) || m < 2 {
        return Err(Error::InvalidArgument(format!("gamma {gamma}, m {m}")));
    }
    Ok(1.0 - (m as f64 - 1.0) * gamma / m as f64)
}

fn check_gamma(gamma: f64, m: usize) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 && m >= 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "need 0 < gamma < 1 and m >= 2, got gamma {gamma}, m {m}"
        )))
    }
}
