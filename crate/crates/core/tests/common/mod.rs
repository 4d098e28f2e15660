#![allow(dead_code)]

use cfol::attack::AttackConfig;
use cfol::cli::{generate_synthetic, HardClass, SyntheticSpec};
use cfol::data::LabeledDataset;
use cfol::harness::{Method, RunConfig};
use cfol::learner::{cross_entropy, forward_logits, Architecture, ModelParams};
use cfol::rng::SeededRng;

pub const BENCH_EPSILON: f64 = 0.1;
pub const BENCH_ETA: f64 = 1e-3;

/// Three Gaussian classes in d=20; class 2 is moved 70% of the way to class 1.
pub fn benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        k: 3,
        d: 20,
        counts: vec![1000; 3],
        means: None,
        separation: 1.0,
        std: 0.6,
        hard_class: Some(HardClass {
            class: 2,
            target: 1,
            lambda: 0.7,
        }),
        seed: None,
    }
}

pub fn benchmark_data(seed: u64) -> LabeledDataset {
    generate_synthetic(&benchmark_spec(), &mut SeededRng::new(seed)).unwrap()
}

pub fn benchmark_config(method: Method, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        method,
        epochs: 10,
        batch_size: 32,
        seed,
        train_metrics: false,
        train_attack: AttackConfig::train_default(BENCH_EPSILON),
        eval_attack: AttackConfig::eval_default(BENCH_EPSILON),
        ..RunConfig::default()
    };
    cfg.optimizer.decay_epochs = vec![5, 7];
    if method.uses_bandit() {
        cfg.eta = Some(BENCH_ETA);
        cfg.gamma = Some(0.5);
    }
    cfg
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn random_vec(n: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()
}

/// Model with every weight and bias uniform in `[-scale, scale]`.
pub fn random_model(arch: Architecture, d: usize, k: usize, scale: f64, rng: &mut SeededRng) -> ModelParams {
    let mut m = ModelParams::zeros(arch, d, k).unwrap();
    let flat = random_vec(m.num_params(), scale, rng);
    m.set_flat(&flat).unwrap();
    m
}

pub fn loss_at(model: &ModelParams, x: &[f64], y: usize) -> f64 {
    cross_entropy(&forward_logits(model, x).unwrap(), y)
}

/// Smallest |pre-activation| of the hidden layer (infinite for linear models).
pub fn kink_distance(model: &ModelParams, x: &[f64]) -> f64 {
    match model.architecture() {
        Architecture::Linear => f64::INFINITY,
        Architecture::Mlp { .. } => {
            let layer = &model.layers()[0];
            layer
                .weights
                .chunks_exact(layer.cols)
                .zip(&layer.bias)
                .map(|(row, b)| (row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b).abs())
                .fold(f64::INFINITY, f64::min)
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Central differences of the loss with respect to every parameter.
pub fn numeric_param_gradient(model: &ModelParams, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    let base = model.flat();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.set_flat(&v).unwrap();
        let up = loss_at(&probe, x, y);
        v[i] = base[i] - h;
        probe.set_flat(&v).unwrap();
        let down = loss_at(&probe, x, y);
        out.push((up - down) / (2.0 * h));
    }
    out
}

pub fn numeric_input_gradient(model: &ModelParams, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            a[j] += h;
            let mut b = x.to_vec();
            b[j] -= h;
            (loss_at(model, &a, y) - loss_at(model, &b, y)) / (2.0 * h)
        })
        .collect()
}
