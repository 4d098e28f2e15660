use crate::error::{Error, Result};

use super::{GradientBuffer, Layer, ModelParams};

/// SGD with momentum and weight decay on a piecewise-constant learning rate.
///
/// `schedule` holds `(step, factor)` pairs; from `step` onward the base rate is
/// multiplied by `factor` (factors compound).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Vec<(u64, f64)>,
    velocity: Option<Vec<Layer>>,
}

impl OptimizerState {
    pub fn new(
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
        schedule: Vec<(u64, f64)>,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidHyperparameter(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        if let Some((_, f)) = schedule.iter().find(|(_, f)| !(*f > 0.0)) {
            return Err(Error::InvalidHyperparameter(format!(
                "schedule factor must be positive, got {f}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            schedule,
            velocity: None,
        })
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        self.schedule
            .iter()
            .filter(|(s, _)| step >= *s)
            .fold(self.learning_rate, |lr, (_, f)| lr * f)
    }
}

/// `v <- mu v + g + wd theta; theta <- theta - lr(step) v`.
pub fn sgd_step(
    model: &mut ModelParams,
    grads: &GradientBuffer,
    opt: &mut OptimizerState,
    step: u64,
) -> Result<()> {
    if !grads.congruent(&model.layers) {
        return Err(Error::ShapeMismatch("gradient buffer does not match model".into()));
    }
    let lr = opt.rate_at(step);
    let velocity = opt.velocity.get_or_insert_with(|| {
        model
            .layers
            .iter()
            .map(|l| Layer::zeros(l.rows, l.cols))
            .collect()
    });
    if velocity.len() != model.layers.len()
        || velocity.iter().zip(&model.layers).any(|(v, l)| !v.same_shape(l))
    {
        return Err(Error::ShapeMismatch("momentum buffers do not match model".into()));
    }
    for ((layer, grad), vel) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(velocity.iter_mut())
    {
        for ((p, g), v) in layer
            .values_mut()
            .zip(grad.values())
            .zip(vel.values_mut())
        {
            *v = opt.momentum * *v + g + opt.weight_decay * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}
