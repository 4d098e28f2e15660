//! Small differentiable classifiers with hand-written backpropagation.
//!
//! Two architectures: multinomial logistic regression (`z = W x + b`) and a
//! one-hidden-layer ReLU network (`z = W2 relu(W1 x + b1) + b2`).

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{sgd_step, OptimizerState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::simplex::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

/// Dense affine map with a row-major `rows x cols` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// `W^T v`.
    fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.weights.chunks_exact(self.cols).zip(v) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * vi;
            }
        }
        out
    }

    /// Adds `scale * delta input^T` to the weights and `scale * delta` to the bias.
    fn add_outer(&mut self, delta: &[f64], input: &[f64]) {
        for ((row, b), &di) in self
            .weights
            .chunks_exact_mut(self.cols)
            .zip(self.bias.iter_mut())
            .zip(delta)
        {
            if di == 0.0 {
                continue;
            }
            for (w, xi) in row.iter_mut().zip(input) {
                *w += di * xi;
            }
            *b += di;
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    layers: Vec<Layer>,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::ShapeMismatch(format!(
                "input dimension {input_dim}, {num_classes} classes"
            )));
        }
        let layers = match arch {
            Architecture::Linear => vec![Layer::zeros(num_classes, input_dim)],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::ShapeMismatch("hidden width must be >= 1".into()));
                }
                vec![Layer::zeros(hidden, input_dim), Layer::zeros(num_classes, hidden)]
            }
        };
        Ok(Self {
            arch,
            input_dim,
            num_classes,
            layers,
        })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut model = Self::zeros(arch, input_dim, num_classes)?;
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        Ok(model)
    }

    pub fn from_layers(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no layers".into()))?;
        let last = layers.last().unwrap();
        let template = Self::zeros(arch, first.cols, last.rows)?;
        let consistent = template.layers.len() == layers.len()
            && template
                .layers
                .iter()
                .zip(&layers)
                .all(|(t, l)| {
                    t.same_shape(l) && l.weights.len() == l.rows * l.cols && l.bias.len() == l.rows
                });
        if !consistent {
            return Err(Error::ShapeMismatch(format!(
                "layers do not match architecture {arch:?}"
            )));
        }
        if layers.iter().any(|l| l.values().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self {
            arch,
            input_dim: template.input_dim,
            num_classes: template.num_classes,
            layers,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major), then bias.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        for (p, v) in self.layers.iter_mut().flat_map(Layer::values_mut).zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.input_dim {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "input of dimension {} for a model expecting {}",
                x.len(),
                self.input_dim
            )))
        }
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y < self.num_classes {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: y,
                len: self.num_classes,
            })
        }
    }
}

/// Gradient with the same shapes as a model. `accumulated` is the total weight
/// of the examples summed into it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    layers: Vec<Layer>,
    pub accumulated: f64,
}

impl GradientBuffer {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
            accumulated: 0.0,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.layers.iter_mut().flat_map(Layer::values_mut) {
            *v *= factor;
        }
    }

    pub fn add(&mut self, other: &GradientBuffer) -> Result<()> {
        if !self.congruent(&other.layers) {
            return Err(Error::ShapeMismatch("gradient buffers differ in shape".into()));
        }
        for (a, b) in self
            .layers
            .iter_mut()
            .flat_map(Layer::values_mut)
            .zip(other.layers.iter().flat_map(Layer::values))
        {
            *a += b;
        }
        self.accumulated += other.accumulated;
        Ok(())
    }

    fn congruent(&self, layers: &[Layer]) -> bool {
        self.layers.len() == layers.len()
            && self.layers.iter().zip(layers).all(|(a, b)| a.same_shape(b))
    }
}

/// Activations kept from a forward pass.
struct Trace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_trace(model: &ModelParams, x: &[f64]) -> Trace {
    match model.arch {
        Architecture::Linear => Trace {
            hidden_pre: Vec::new(),
            hidden: Vec::new(),
            logits: model.layers[0].apply(x),
        },
        Architecture::Mlp { .. } => {
            let hidden_pre = model.layers[0].apply(x);
            let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
            let logits = model.layers[1].apply(&hidden);
            Trace {
                hidden_pre,
                hidden,
                logits,
            }
        }
    }
}

pub fn forward_logits(model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    Ok(forward_trace(model, x).logits)
}

/// `-log softmax(logits)[y]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[y]
}

/// Cross-entropy clipped to `[0, 1]`.
pub fn clipped_cross_entropy(logits: &[f64], y: usize) -> f64 {
    cross_entropy(logits, y).min(1.0)
}

/// Index of the largest logit; the lowest class id wins ties.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

/// `1[argmax(logits) != y]`.
pub fn zero_one_loss(logits: &[f64], y: usize) -> f64 {
    if predict(logits) == y {
        0.0
    } else {
        1.0
    }
}

/// Adds the gradient of `weight * CE(model(x), y)` into `grads` and returns the
/// unweighted loss.
pub fn accumulate_backward(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    weight: f64,
    grads: &mut GradientBuffer,
) -> Result<f64> {
    model.check_input(x)?;
    model.check_label(y)?;
    if !grads.congruent(&model.layers) {
        return Err(Error::ShapeMismatch("gradient buffer does not match model".into()));
    }
    let trace = forward_trace(model, x);
    let loss = cross_entropy(&trace.logits, y);
    grads.accumulated += weight;
    if weight == 0.0 {
        return Ok(loss);
    }
    let mut delta = softmax(&trace.logits);
    delta[y] -= 1.0;
    for d in &mut delta {
        *d *= weight;
    }
    match model.arch {
        Architecture::Linear => grads.layers[0].add_outer(&delta, x),
        Architecture::Mlp { .. } => {
            grads.layers[1].add_outer(&delta, &trace.hidden);
            let mut back = model.layers[1].transpose_apply(&delta);
            for (b, &a) in back.iter_mut().zip(&trace.hidden_pre) {
                if a <= 0.0 {
                    *b = 0.0;
                }
            }
            grads.layers[0].add_outer(&back, x);
        }
    }
    Ok(loss)
}

/// Gradient of `weight * CE(model(x), y)` with respect to every parameter.
pub fn backward(model: &ModelParams, x: &[f64], y: usize, weight: f64) -> Result<GradientBuffer> {
    if !(weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative gradient weight {weight}")));
    }
    let mut grads = GradientBuffer::zeros_like(model);
    accumulate_backward(model, x, y, weight, &mut grads)?;
    Ok(grads)
}

/// `d CE(model(x), y) / d x`.
pub fn input_gradient(model: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
    model.check_input(x)?;
    model.check_label(y)?;
    let trace = forward_trace(model, x);
    let mut delta = softmax(&trace.logits);
    delta[y] -= 1.0;
    Ok(match model.arch {
        Architecture::Linear => model.layers[0].transpose_apply(&delta),
        Architecture::Mlp { .. } => {
            let mut back = model.layers[1].transpose_apply(&delta);
            for (b, &a) in back.iter_mut().zip(&trace.hidden_pre) {
                if a <= 0.0 {
                    *b = 0.0;
                }
            }
            model.layers[0].transpose_apply(&back)
        }
    })
}
