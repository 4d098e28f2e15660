//! l-infinity bounded adversarial perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{cross_entropy, forward_logits, input_gradient, zero_one_loss, Architecture, ModelParams};
use crate::rng::SeededRng;

/// Largest input dimension accepted by the exact vertex enumeration.
pub const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Box `[lo, hi]` applied to every feature of `x + delta`.
    pub clamp: Option<(f64, f64)>,
    /// Start from a uniform point in the ball instead of zero.
    pub random_start: bool,
    /// Return zero if the attack does not raise the loss, or if it turns a
    /// misclassified input into a correct one.
    pub fallback_to_clean: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::disabled()
    }
}

impl AttackConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            epsilon: 0.0,
            steps: 1,
            step_size: 0.0,
            clamp: None,
            random_start: true,
            fallback_to_clean: false,
        }
    }

    pub fn pgd(epsilon: f64, steps: usize, step_size: f64) -> Self {
        Self {
            enabled: true,
            epsilon,
            steps,
            step_size,
            clamp: None,
            random_start: true,
            fallback_to_clean: false,
        }
    }

    /// Training attack: 7 steps with step size `epsilon / 4`.
    pub fn train_default(epsilon: f64) -> Self {
        Self::pgd(epsilon, 7, epsilon / 4.0)
    }

    /// Evaluation attack: 20 steps with step size `2.5 epsilon / 20`.
    pub fn eval_default(epsilon: f64) -> Self {
        Self::pgd(epsilon, 20, 2.5 * epsilon / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("attack epsilon {} must be >= 0", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("attack steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "attack step size {} must be > 0",
                self.step_size
            )));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(Error::InvalidConfig(format!("clamp box [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Vec<f64>,
}

impl Perturbation {
    pub fn zero(d: usize) -> Self {
        Self { delta: vec![0.0; d] }
    }

    pub fn linf_norm(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.delta).map(|(a, b)| a + b).collect()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `delta` onto the ball and, if configured, keeps `x + delta` in the box.
fn project(delta: &mut [f64], x: &[f64], cfg: &AttackConfig) {
    for (d, &xi) in delta.iter_mut().zip(x) {
        *d = d.clamp(-cfg.epsilon, cfg.epsilon);
        if let Some((lo, hi)) = cfg.clamp {
            *d = (xi + *d).clamp(lo, hi) - xi;
        }
    }
}

fn check_enabled(cfg: &AttackConfig) -> Result<()> {
    if !cfg.enabled {
        return Err(Error::ConfigDisabled);
    }
    cfg.validate()
}

fn fallback(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    delta: Vec<f64>,
    cfg: &AttackConfig,
) -> Result<Perturbation> {
    if cfg.fallback_to_clean {
        let clean = forward_logits(model, x)?;
        let xs: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let attacked = forward_logits(model, &xs)?;
        let no_gain = cross_entropy(&attacked, y) <= cross_entropy(&clean, y);
        let fixes = zero_one_loss(&attacked, y) < zero_one_loss(&clean, y);
        if no_gain || fixes {
            return Ok(Perturbation::zero(x.len()));
        }
    }
    Ok(Perturbation { delta })
}

/// Projected sign-gradient ascent on the cross-entropy.
pub fn pgd_attack(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Perturbation> {
    check_enabled(cfg)?;
    let d = x.len();
    let mut delta = vec![0.0; d];
    if cfg.random_start && cfg.epsilon > 0.0 {
        for v in &mut delta {
            *v = rng.uniform_range(-cfg.epsilon, cfg.epsilon);
        }
    }
    project(&mut delta, x, cfg);
    if cfg.epsilon == 0.0 {
        return Ok(Perturbation::zero(d));
    }
    let mut point = vec![0.0; d];
    for _ in 0..cfg.steps {
        for ((p, xi), di) in point.iter_mut().zip(x).zip(&delta) {
            *p = xi + di;
        }
        let grad = input_gradient(model, &point, y)?;
        for (di, g) in delta.iter_mut().zip(&grad) {
            *di += cfg.step_size * sign(*g);
        }
        project(&mut delta, x, cfg);
    }
    fallback(model, x, y, delta, cfg)
}

/// One signed step of size `epsilon` from zero.
pub fn fgsm_attack(model: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<Perturbation> {
    check_enabled(cfg)?;
    let grad = input_gradient(model, x, y)?;
    let mut delta: Vec<f64> = grad.iter().map(|&g| cfg.epsilon * sign(g)).collect();
    project(&mut delta, x, cfg);
    fallback(model, x, y, delta, cfg)
}

/// Perturbation produced by `cfg` (zero when disabled).
pub fn perturb(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Perturbation> {
    if cfg.enabled {
        pgd_attack(model, x, y, cfg, rng)
    } else {
        Ok(Perturbation::zero(x.len()))
    }
}

/// Exact worst-case cross-entropy of a linear model over the `epsilon` box,
/// by enumerating its `2^d` vertices. The loss is convex in `delta`, so the
/// maximum sits on a vertex.
pub fn linear_worstcase(model: &ModelParams, x: &[f64], y: usize, epsilon: f64) -> Result<f64> {
    if model.architecture() != Architecture::Linear {
        return Err(Error::NotLinear);
    }
    let d = x.len();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::DimensionTooLarge(d));
    }
    forward_logits(model, x)?;
    if epsilon == 0.0 {
        return Ok(cross_entropy(&forward_logits(model, x)?, y));
    }
    let mut best = f64::NEG_INFINITY;
    let mut point = vec![0.0; d];
    for mask in 0u64..(1u64 << d) {
        for (j, p) in point.iter_mut().enumerate() {
            *p = x[j] + if mask >> j & 1 == 1 { epsilon } else { -epsilon };
        }
        best = best.max(cross_entropy(&forward_logits(model, &point)?, y));
    }
    Ok(best)
}

/// Closed form for two classes: the worst margin is the clean margin minus
/// `epsilon * ||w_y - w_other||_1`.
pub fn binary_linear_worstcase(model: &ModelParams, x: &[f64], y: usize, epsilon: f64) -> Result<f64> {
    if model.architecture() != Architecture::Linear {
        return Err(Error::NotLinear);
    }
    if model.num_classes() != 2 {
        return Err(Error::InvalidArgument("closed form needs exactly two classes".into()));
    }
    let logits = forward_logits(model, x)?;
    let layer = &model.layers()[0];
    let d = model.input_dim();
    let other = 1 - y;
    let l1: f64 = (0..d)
        .map(|j| (layer.weights[y * d + j] - layer.weights[other * d + j]).abs())
        .sum();
    let margin = logits[y] - logits[other] - epsilon * l1;
    // log(1 + exp(-margin)), stable for both signs.
    Ok(if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ModelParams;

    fn random_linear(d: usize, k: usize, seed: u64) -> ModelParams {
        let mut rng = SeededRng::new(seed);
        let mut m = ModelParams::init(Architecture::Linear, d, k, &mut rng).unwrap();
        for b in &mut m.layers_mut()[0].bias {
            *b = rng.uniform_range(-0.3, 0.3);
        }
        m
    }

    fn random_x(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
    }

    #[test]
    fn zero_radius_gives_zero_delta() {
        let m = random_linear(4, 3, 0);
        let x = random_x(4, 1);
        let cfg = AttackConfig::pgd(0.0, 5, 0.1);
        let p = pgd_attack(&m, &x, 1, &cfg, &mut SeededRng::new(3)).unwrap();
        assert_eq!(p.delta, vec![0.0; 4]);
        let p = fgsm_attack(&m, &x, 1, &cfg).unwrap();
        assert_eq!(p.delta, vec![0.0; 4]);
    }

    #[test]
    fn disabled_config_is_rejected() {
        let m = random_linear(2, 2, 0);
        let cfg = AttackConfig::disabled();
        assert_eq!(
            pgd_attack(&m, &[0.0, 0.0], 0, &cfg, &mut SeededRng::new(0)),
            Err(Error::ConfigDisabled)
        );
        assert_eq!(fgsm_attack(&m, &[0.0, 0.0], 0, &cfg), Err(Error::ConfigDisabled));
    }

    #[test]
    fn flat_gradient_coordinate_stays_zero() {
        let mut m = ModelParams::zeros(Architecture::Linear, 3, 2).unwrap();
        // Column 1 is zero for every class -> zero input gradient there.
        m.layers_mut()[0].weights = vec![1.0, 0.0, -1.0, -1.0, 0.0, 2.0];
        let cfg = AttackConfig::pgd(0.2, 1, 0.2);
        let p = fgsm_attack(&m, &[0.1, 0.2, 0.3], 0, &cfg).unwrap();
        assert_eq!(p.delta[1], 0.0);
        assert_eq!(p.delta[0].abs(), 0.2);
    }

    #[test]
    fn fgsm_equals_single_zero_start_pgd_step() {
        for seed in 0..10 {
            let m = random_linear(5, 3, seed);
            let x = random_x(5, seed + 100);
            let mut cfg = AttackConfig::pgd(0.3, 1, 0.3);
            cfg.random_start = false;
            let a = fgsm_attack(&m, &x, 2, &cfg).unwrap();
            let b = pgd_attack(&m, &x, 2, &cfg, &mut SeededRng::new(1)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn projection_and_box_hold() {
        let m = random_linear(6, 4, 9);
        let mut cfg = AttackConfig::pgd(0.25, 10, 0.1);
        cfg.clamp = Some((0.0, 1.0));
        let mut rng = SeededRng::new(4);
        for seed in 0..50 {
            let x: Vec<f64> = random_x(6, seed).iter().map(|v| v.abs()).collect();
            let p = pgd_attack(&m, &x, seed as usize % 4, &cfg, &mut rng).unwrap();
            assert!(p.linf_norm() <= 0.25 + 1e-12);
            assert!(p.apply(&x).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pgd_is_deterministic_for_a_seed() {
        let m = random_linear(4, 3, 2);
        let x = random_x(4, 3);
        let cfg = AttackConfig::eval_default(0.1);
        let a = pgd_attack(&m, &x, 0, &cfg, &mut SeededRng::new(8)).unwrap();
        let b = pgd_attack(&m, &x, 0, &cfg, &mut SeededRng::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn enumeration_matches_closed_form_for_two_classes() {
        for seed in 0..30 {
            let m = random_linear(8, 2, seed);
            let x = random_x(8, seed + 50);
            let y = seed as usize % 2;
            let eps = 0.05 * (1 + seed % 5) as f64;
            let a = linear_worstcase(&m, &x, y, eps).unwrap();
            let b = binary_linear_worstcase(&m, &x, y, eps).unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn worstcase_edge_cases() {
        let m = random_linear(3, 3, 1);
        let x = random_x(3, 2);
        let clean = cross_entropy(&forward_logits(&m, &x).unwrap(), 0);
        assert_eq!(linear_worstcase(&m, &x, 0, 0.0).unwrap(), clean);
        let mut last = clean;
        for i in 1..10 {
            let v = linear_worstcase(&m, &x, 0, 0.05 * i as f64).unwrap();
            assert!(v >= last);
            last = v;
        }
        let mlp = ModelParams::zeros(Architecture::Mlp { hidden: 2 }, 3, 3).unwrap();
        assert_eq!(linear_worstcase(&mlp, &x, 0, 0.1), Err(Error::NotLinear));
        let wide = random_linear(21, 2, 0);
        assert_eq!(
            linear_worstcase(&wide, &[0.0; 21], 0, 0.1),
            Err(Error::DimensionTooLarge(21))
        );
    }

    #[test]
    fn pgd_reaches_binary_worst_case() {
        for seed in 0..20 {
            let m = random_linear(6, 2, seed);
            let x = random_x(6, seed + 7);
            let eps = 0.2;
            let cfg = AttackConfig::pgd(eps, 50, eps);
            let p = pgd_attack(&m, &x, 1, &cfg, &mut SeededRng::new(seed)).unwrap();
            let attained = cross_entropy(&forward_logits(&m, &p.apply(&x)).unwrap(), 1);
            let exact = binary_linear_worstcase(&m, &x, 1, eps).unwrap();
            assert!((attained - exact).abs() <= 1e-9);
        }
    }

    #[test]
    fn fallback_never_helps_a_misclassified_point() {
        let m = random_linear(4, 3, 5);
        let mut cfg = AttackConfig::pgd(0.5, 3, 0.2);
        cfg.fallback_to_clean = true;
        cfg.random_start = false;
        for seed in 0..50 {
            let x = random_x(4, seed);
            for y in 0..3 {
                let clean = zero_one_loss(&forward_logits(&m, &x).unwrap(), y);
                let p = pgd_attack(&m, &x, y, &cfg, &mut SeededRng::new(seed)).unwrap();
                let robust = zero_one_loss(&forward_logits(&m, &p.apply(&x)).unwrap(), y);
                assert!(robust >= clean);
            }
        }
    }
}
