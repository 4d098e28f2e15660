//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use cfol::adversary::AdversaryState;
use cfol::attack::{binary_linear_worstcase, linear_worstcase, pgd_attack, AttackConfig};
use cfol::cli::{
    generate_synthetic, run_command, HardClass, SyntheticSpec, METRICS_FILE,
};
use cfol::cvar::{alpha_from_gamma, cvar_best_response, cvar_dual_value, mixing_cap, CVaRLevel};
use cfol::data::{partition_by_class, LabeledDataset};
use cfol::harness::{
    bound_monitor, regret_check, train, Draw, Method, RegretStatus, RegretTrace, RunConfig,
    SamplingScheme,
};
use cfol::learner::{
    backward, clipped_cross_entropy, forward_logits, input_gradient, Architecture,
};
use cfol::rng::SeededRng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Adversary with random scores, eta and gamma.
fn random_adversary(m: usize, rng: &mut SeededRng) -> AdversaryState {
    let gamma = rng.uniform_range(0.01, 0.99);
    let mut adv = AdversaryState::new(m, 1.0, gamma).unwrap();
    let scores = random_vec(m, 4.0, rng);
    adv.apply_estimate(&scores).unwrap();
    adv
}

fn estimator_unbiased() -> Outcome {
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let k = [2, 5, 10][i % 3];
        let adv = random_adversary(k, &mut rng);
        let losses: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        let mut expected = vec![0.0; k];
        for (y, &l) in losses.iter().enumerate() {
            let est = adv.build_estimator(y, l).unwrap().to_dense();
            for (e, v) in expected.iter_mut().zip(&est) {
                *e += adv.p()[y] * v;
            }
        }
        for (e, l) in expected.iter().zip(&losses) {
            worst = worst.max((e - l).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |E[est] - L| = {worst:.3e}"))
}

fn mixing_floor_and_cap() -> Outcome {
    let mut rng = SeededRng::new(202);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let m = 2 + rng.below(19);
        let gamma = rng.uniform_range(0.01, 0.99);
        let eta = rng.uniform_range(1e-3, 2.0);
        let mut adv = AdversaryState::new(m, eta, gamma).unwrap();
        let (floor, cap) = (gamma / m as f64, mixing_cap(gamma, m).unwrap());
        for _ in 0..20 {
            let arm = adv.sample(&mut rng);
            let est = adv.build_estimator(arm, rng.uniform()).unwrap();
            adv.exp3_update(&est).unwrap();
            for &p in adv.p().weights() {
                worst = worst.max(floor - p).max(p - cap);
            }
        }
    }
    outcome(worst <= 1e-12, format!("max violation = {worst:.3e}"))
}

fn regret_bound() -> Outcome {
    let (m, gamma, steps) = (10usize, 0.5, 10_000u64);
    let eta = gamma / m as f64;
    let mut failures = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..100u64 {
        let mut rng = SeededRng::new(3000 + seed);
        let means: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
        let mut adv = AdversaryState::new(m, eta, gamma).unwrap();
        let mut trace = RegretTrace::new(m);
        for t in 0..steps {
            let arm = adv.sample(&mut rng);
            let loss = match seed % 5 {
                0 => 1.0,
                1 => means[arm],
                2 => {
                    let top = adv
                        .q()
                        .weights()
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, &v)| if v > adv.q()[b] { i } else { b });
                    if arm == top {
                        1.0
                    } else {
                        0.0
                    }
                }
                3 => {
                    if rng.uniform() < means[arm] {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => {
                    if arm == (t / 1000) as usize % m {
                        0.0
                    } else {
                        1.0
                    }
                }
            };
            let est = adv.build_estimator(arm, loss).unwrap();
            trace.record(t, arm, loss, adv.p()[arm], adv.q(), &est).unwrap();
            adv.exp3_update(&est).unwrap();
        }
        let report = regret_check(&trace, eta, gamma, m).unwrap();
        if report.status != RegretStatus::Pass {
            failures += 1;
        }
        worst_margin = worst_margin.min(report.rhs - report.max_regret());
    }
    outcome(
        failures == 0,
        format!("{failures}/100 failed; smallest rhs - regret = {worst_margin:.3}"),
    )
}

/// Maximum of `<p, l>` over the vertices of `{p in simplex : p_i <= cap}`:
/// every vertex has items at 0 or at the cap, plus at most one in between.
fn brute_force_cvar(losses: &[f64], level: CVaRLevel) -> f64 {
    let m = losses.len();
    let cap = level.cap(m);
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << m) {
        let full = mask.count_ones() as f64;
        let rest = 1.0 - full * cap;
        if rest < -1e-12 {
            continue;
        }
        let base: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| cap * losses[i]).sum();
        if rest.abs() <= 1e-12 {
            best = best.max(base);
            continue;
        }
        if rest > cap + 1e-12 {
            continue;
        }
        for j in (0..m).filter(|j| mask >> j & 1 == 0) {
            best = best.max(base + rest * losses[j]);
        }
    }
    best
}

fn cvar_duality() -> Outcome {
    let mut rng = SeededRng::new(404);
    let mut worst_dual = 0.0f64;
    for i in 0..10_000 {
        let m = 1 + rng.below(1000);
        let alpha = if i % 10 == 0 { 1.0 } else { rng.uniform_range(1e-3, 1.0) };
        let level = CVaRLevel::new(alpha).unwrap();
        let ties = i % 4 == 0;
        let losses: Vec<f64> = (0..m)
            .map(|_| {
                let l = rng.uniform_range(-5.0, 5.0);
                if ties {
                    l.round()
                } else {
                    l
                }
            })
            .collect();
        let primal = cvar_best_response(&losses, level).unwrap().value;
        let dual = cvar_dual_value(&losses, level).unwrap().value;
        worst_dual = worst_dual.max((primal - dual).abs());
    }
    let mut worst_brute = 0.0f64;
    for i in 0..5000 {
        let m = 1 + rng.below(8);
        let alpha = match i % 5 {
            0 => 1.0,
            1 => 1.0 / m as f64,
            _ => rng.uniform_range(1.0 / m as f64, 1.0),
        };
        let level = CVaRLevel::new(alpha).unwrap();
        let losses: Vec<f64> = (0..m).map(|_| rng.uniform_range(0.0, 3.0)).collect();
        let oracle = brute_force_cvar(&losses, level);
        let primal = cvar_best_response(&losses, level).unwrap().value;
        let dual = cvar_dual_value(&losses, level).unwrap().value;
        worst_brute = worst_brute.max((primal - oracle).abs()).max((dual - oracle).abs());
    }
    outcome(
        worst_dual <= 1e-9 && worst_brute <= 1e-6,
        format!("max |primal - dual| = {worst_dual:.3e}; max vs vertex enumeration = {worst_brute:.3e}"),
    )
}

fn alpha_correspondence() -> Outcome {
    let mut mismatched = 0;
    let mut cap_exact = 0;
    let mut worst_cap = 0.0f64;
    for m in 2..=10_000usize {
        let level = alpha_from_gamma(0.5, m).unwrap();
        if level.alpha().to_bits() != (2.0 / (m as f64 + 1.0)).to_bits() {
            mismatched += 1;
        }
        let lhs = 1.0 / (level.alpha() * m as f64);
        let cap = mixing_cap(0.5, m).unwrap();
        if lhs == cap {
            cap_exact += 1;
        }
        worst_cap = worst_cap.max((lhs - cap).abs() / cap);
    }
    outcome(
        mismatched == 0 && worst_cap <= 4.0 * f64::EPSILON,
        format!(
            "alpha bit-exact for all but {mismatched} m; cap identity bit-exact for {cap_exact}/9999, max relative gap {worst_cap:.1e}"
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = SeededRng::new(606);
    let h = 1e-5;
    let mut worst_param = 0.0f64;
    let mut worst_input = 0.0f64;
    for i in 0..100 {
        let d = 1 + rng.below(6);
        let k = 2 + rng.below(4);
        let arch = if i % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp {
                hidden: 2 + rng.below(7),
            }
        };
        let (model, x) = loop {
            let model = random_model(arch, d, k, 1.0, &mut rng);
            let x = random_vec(d, 1.0, &mut rng);
            if kink_distance(&model, &x) > 1e-3 {
                break (model, x);
            }
        };
        let y = rng.below(k);
        let analytic = backward(&model, &x, y, 1.0).unwrap().flat();
        let numeric = numeric_param_gradient(&model, &x, y, h);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst_param = worst_param.max(relative_error(*a, *n));
        }
        let analytic = input_gradient(&model, &x, y).unwrap();
        let numeric = numeric_input_gradient(&model, &x, y, h);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst_input = worst_input.max(relative_error(*a, *n));
        }
    }
    outcome(
        worst_param <= 1e-5 && worst_input <= 1e-5,
        format!("max relative error: parameters {worst_param:.2e}, inputs {worst_input:.2e}"),
    )
}

fn pgd_tightness() -> Outcome {
    let mut rng = SeededRng::new(707);
    let mut worst_ratio = f64::INFINITY;
    let mut closed_form_gap = 0.0f64;
    for _ in 0..50 {
        let d = 1 + rng.below(12);
        let model = random_model(Architecture::Linear, d, 2, 1.0, &mut rng);
        let x = random_vec(d, 1.0, &mut rng);
        let y = rng.below(2);
        let eps = rng.uniform_range(0.05, 0.5);
        let clean = loss_at(&model, &x, y);
        let exact = linear_worstcase(&model, &x, y, eps).unwrap();
        closed_form_gap = closed_form_gap
            .max((exact - binary_linear_worstcase(&model, &x, y, eps).unwrap()).abs());
        let cfg = AttackConfig::eval_default(eps);
        let delta = pgd_attack(&model, &x, y, &cfg, &mut rng).unwrap();
        let attacked = loss_at(&model, &delta.apply(&x), y);
        worst_ratio = worst_ratio.min((attacked - clean) / (exact - clean));
    }
    outcome(
        worst_ratio >= 0.99,
        format!(
            "min PGD gap / exact gap = {worst_ratio:.6}; enumeration vs closed form {closed_form_gap:.1e}"
        ),
    )
}

fn sampling_equivalence() -> Outcome {
    let mut rng = SeededRng::new(808);
    let mut worst_grad = 0.0f64;
    let mut worst_est = 0.0f64;
    let mut worst_mass = 0.0f64;
    for _ in 0..200 {
        let k = 2 + rng.below(4);
        let n = k + rng.below(51 - k);
        let d = 1 + rng.below(4);
        let mut labels: Vec<usize> = (0..k).chain((k..n).map(|_| rng.below(k))).collect();
        rng.shuffle(&mut labels);
        let data = LabeledDataset::new(random_vec(n * d, 2.0, &mut rng), labels, k, d).unwrap();
        let partition = partition_by_class(&data).unwrap();
        let model = random_model(Architecture::Linear, d, k, 1.0, &mut rng);
        let adv = random_adversary(k, &mut rng);
        let losses: Vec<f64> = (0..n)
            .map(|i| clipped_cross_entropy(&forward_logits(&model, data.row(i)).unwrap(), data.label(i)))
            .collect();
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|i| backward(&model, data.row(i), data.label(i), 1.0).unwrap().flat())
            .collect();
        let dim = grads[0].len();

        // Class-mean loss and gradient, weighted by p.
        let mut class_loss = vec![0.0; k];
        let mut target_grad = vec![0.0; dim];
        for (y, rows) in partition.iter().enumerate() {
            let ny = rows.len() as f64;
            for &i in rows {
                class_loss[y] += losses[i] / ny;
                for (t, g) in target_grad.iter_mut().zip(&grads[i]) {
                    *t += adv.p()[y] * g / ny;
                }
            }
        }

        let mut expect = |scheme: SamplingScheme| {
            let mut grad = vec![0.0; dim];
            let mut est = vec![0.0; k];
            let mut mass = 0.0;
            for y in 0..k {
                for i in 0..n {
                    let prob = scheme.draw_probability(&adv, &partition, data.labels(), Draw { arm: y, row: i });
                    if prob == 0.0 {
                        continue;
                    }
                    mass += prob;
                    let w = scheme.gradient_weight(&adv, y).unwrap();
                    for (a, g) in grad.iter_mut().zip(&grads[i]) {
                        *a += prob * w * g;
                    }
                    let e = scheme.estimate(&adv, y, losses[i]).unwrap().to_dense();
                    for (a, v) in est.iter_mut().zip(&e) {
                        *a += prob * v;
                    }
                }
            }
            worst_mass = worst_mass.max((mass - 1.0f64).abs());
            (grad, est)
        };
        let (g_cfol, e_cfol) = expect(SamplingScheme::ClassAdaptive);
        let (g_rw, e_rw) = expect(SamplingScheme::ClassReweighted);
        for ((a, b), t) in g_cfol.iter().zip(&g_rw).zip(&target_grad) {
            worst_grad = worst_grad.max((a - b).abs()).max((a - t).abs());
        }
        for ((a, b), t) in e_cfol.iter().zip(&e_rw).zip(&class_loss) {
            worst_est = worst_est.max((a - b).abs()).max((a - t).abs());
        }
    }
    outcome(
        worst_grad <= 1e-10 && worst_est <= 1e-10 && worst_mass <= 1e-12,
        format!("max gradient gap {worst_grad:.2e}, estimator gap {worst_est:.2e}, mass error {worst_mass:.1e}"),
    )
}

/// (worst-class, average) holdout robust accuracy of the final model.
fn benchmark_run(method: Method, gamma: Option<f64>, seed: u64) -> (f64, f64) {
    let data = benchmark_data(seed);
    let mut cfg = benchmark_config(method, seed);
    if gamma.is_some() {
        cfg.gamma = gamma;
    }
    let result = train(&cfg, &data).unwrap();
    let robust = &result.final_record().holdout_robust;
    (robust.worst_class, robust.average)
}

struct BenchmarkMedians {
    erm: (f64, f64),
    cfol_05: (f64, f64),
    cfol_09: (f64, f64),
}

fn benchmark_medians() -> BenchmarkMedians {
    let collect = |method, gamma| {
        let runs: Vec<(f64, f64)> = (0..5).map(|s| benchmark_run(method, gamma, s)).collect();
        (
            median(runs.iter().map(|r| r.0).collect()),
            median(runs.iter().map(|r| r.1).collect()),
        )
    };
    BenchmarkMedians {
        erm: collect(Method::Erm, None),
        cfol_05: collect(Method::Cfol, Some(0.5)),
        cfol_09: collect(Method::Cfol, Some(0.9)),
    }
}

fn worst_class_improvement(b: &BenchmarkMedians) -> Outcome {
    let (ew, ea) = b.erm;
    let (cw, ca) = b.cfol_05;
    outcome(
        cw >= ew + 0.03 && (ca - ea).abs() <= 0.05,
        format!("median worst-class erm {ew:.4} cfol {cw:.4}; median average erm {ea:.4} cfol {ca:.4}"),
    )
}

fn gamma_interpolation(b: &BenchmarkMedians) -> Outcome {
    let (w5, a5) = b.cfol_05;
    let (w9, a9) = b.cfol_09;
    outcome(
        a9 >= a5 && w5 >= w9,
        format!("average gamma=0.9 {a9:.4} vs 0.5 {a5:.4}; worst-class gamma=0.5 {w5:.4} vs 0.9 {w9:.4}"),
    )
}

fn bound_monitor_runs() -> Outcome {
    let spec = SyntheticSpec {
        k: 5,
        d: 10,
        counts: vec![40; 5],
        means: None,
        separation: 1.0,
        std: 0.6,
        hard_class: Some(HardClass {
            class: 4,
            target: 3,
            lambda: 0.5,
        }),
        seed: None,
    };
    let mut holds = 0;
    let mut slack = Vec::new();
    for seed in 0..100u64 {
        let data = generate_synthetic(&spec, &mut SeededRng::new(seed)).unwrap();
        let cfg = RunConfig {
            method: Method::Cfol,
            epochs: 10,
            batch_size: 1,
            holdout_fraction: 0.0,
            seed,
            snapshot_every: Some(1),
            ensemble_n: 50,
            failure_delta: 0.05,
            train_metrics: false,
            train_attack: AttackConfig::train_default(0.1),
            eval_attack: AttackConfig::train_default(0.1),
            ..RunConfig::default()
        };
        let (report, _) = bound_monitor(&cfg, &data, 4).unwrap();
        assert_eq!(report.total_steps, 2000);
        if report.holds {
            holds += 1;
        }
        slack.push(report.bound_total - report.ensemble_worst_class);
    }
    outcome(
        holds >= 95,
        format!("bound held in {holds}/100 runs; median slack {:.3}", median(slack)),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.json");
    let spec = r#"{
  "run": {
    "method": "cfol",
    "eta": 0.01,
    "gamma": 0.5,
    "epochs": 3,
    "batch_size": 16,
    "seed": 17,
    "train_attack": {"enabled": true, "epsilon": 0.1, "steps": 3, "step_size": 0.05},
    "eval_attack": {"enabled": true, "epsilon": 0.1, "steps": 5, "step_size": 0.03}
  },
  "dataset": {"synthetic": {"k": 3, "d": 5, "counts": [60, 60, 60], "std": 0.5}}
}"#;
    fs::write(&config, spec).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let code = run_command([
            "cfol",
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        if code != 0 {
            return outcome(false, format!("train exited with {code}"));
        }
        outputs.push(fs::read(out.join(METRICS_FILE)).unwrap());
    }
    outcome(
        outputs[0] == outputs[1],
        format!("metrics.json {} bytes, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = result.pass && in_time;
    println!(
        "[{}] {id:>2} {name}: {} ({:.2}s, limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        result.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
    );
    pass
}

fn main() {
    let s = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "estimator unbiasedness", s(1), estimator_unbiased);
    ok &= report(2, "mixing floor and cap", s(10), mixing_floor_and_cap);
    ok &= report(3, "exp3 regret bound", s(30), regret_bound);
    ok &= report(4, "cvar primal/dual agreement", s(30), cvar_duality);
    ok &= report(5, "alpha correspondence", s(1), alpha_correspondence);
    ok &= report(6, "gradient correctness", s(10), gradient_check);
    ok &= report(7, "pgd tightness on linear models", s(30), pgd_tightness);
    ok &= report(8, "sampling/reweighting equivalence", s(10), sampling_equivalence);

    let start = Instant::now();
    let medians = benchmark_medians();
    let shared = start.elapsed();
    ok &= report(9, "worst-class improvement", s(300), || {
        let mut o = worst_class_improvement(&medians);
        o.detail += &format!("; benchmark {:.1}s", shared.as_secs_f64());
        o.pass &= shared <= s(300);
        o
    });
    ok &= report(10, "gamma interpolation", s(600), || gamma_interpolation(&medians));
    ok &= report(11, "bound monitor", s(600), bound_monitor_runs);
    ok &= report(12, "train determinism", s(60), cli_determinism);

    if !ok {
        std::process::exit(1);
    }
}
