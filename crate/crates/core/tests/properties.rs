mod common;

use proptest::prelude::*;

use cfol::adversary::{theoretical_eta, AdversaryState};
use cfol::attack::{pgd_attack, AttackConfig};
use cfol::cvar::{cvar_best_response, cvar_dual_objective, cvar_dual_value, mixing_cap, CVaRLevel};
use cfol::harness::{batch_sizes, RegretTrace};
use cfol::learner::{read_checkpoint, write_checkpoint, Architecture};
use cfol::metrics::{compute_metrics, tail_size, AccuracyKind};
use cfol::rng::SeededRng;

use common::*;

fn losses() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..60)
}

proptest! {
    #[test]
    fn exp3_keeps_p_inside_the_mixing_band(
        m in 2usize..12,
        gamma in 0.01f64..0.99,
        eta in 1e-3f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut adv = AdversaryState::new(m, eta, gamma).unwrap();
        let mut rng = SeededRng::new(seed);
        let cap = mixing_cap(gamma, m).unwrap();
        for _ in 0..50 {
            let arm = adv.sample(&mut rng);
            let est = adv.build_estimator(arm, rng.uniform()).unwrap();
            prop_assert!(est.get(arm) <= m as f64 / gamma + 1e-12);
            adv.exp3_update(&est).unwrap();
            let p = adv.p().weights();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= gamma / m as f64 - 1e-12 && v <= cap + 1e-12));
        }
    }

    #[test]
    fn shifting_scores_leaves_p_unchanged(m in 2usize..10, c in -50.0f64..50.0, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut adv = AdversaryState::new(m, 1.0, 0.3).unwrap();
        adv.apply_estimate(&random_vec(m, 3.0, &mut rng)).unwrap();
        let before = adv.p().weights().to_vec();
        adv.shift_scores(c);
        for (a, b) in before.iter().zip(adv.p().weights()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_weights_respect_the_cap(l in losses(), alpha in 0.001f64..=1.0) {
        let level = CVaRLevel::new(alpha).unwrap();
        let sol = cvar_best_response(&l, level).unwrap();
        let w = sol.weights.weights();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&v| v >= 0.0 && v <= level.cap(l.len()) + 1e-12));
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(sol.value >= mean - 1e-9 && sol.value <= max + 1e-9);
    }

    #[test]
    fn cvar_grows_as_alpha_shrinks(l in losses(), a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let v_lo = cvar_best_response(&l, CVaRLevel::new(lo).unwrap()).unwrap().value;
        let v_hi = cvar_best_response(&l, CVaRLevel::new(hi).unwrap()).unwrap().value;
        prop_assert!(v_lo >= v_hi - 1e-9);
    }

    #[test]
    fn dual_lambda_minimizes_the_dual(l in losses(), alpha in 0.001f64..=1.0, probe in -12.0f64..12.0) {
        let level = CVaRLevel::new(alpha).unwrap();
        let sol = cvar_dual_value(&l, level).unwrap();
        prop_assert!(sol.value <= cvar_dual_objective(&l, level, probe) + 1e-9);
    }

    #[test]
    fn checkpoints_round_trip_bit_for_bit(d in 1usize..6, k in 2usize..5, hidden in 0usize..5, seed in any::<u64>()) {
        let arch = if hidden == 0 { Architecture::Linear } else { Architecture::Mlp { hidden } };
        let model = random_model(arch, d, k, 3.0, &mut SeededRng::new(seed));
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(back.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        model.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, model);
    }

    #[test]
    fn regret_trace_csv_round_trips(m in 2usize..6, steps in 1u64..80, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut adv = AdversaryState::new(m, 0.05, 0.5).unwrap();
        let mut trace = RegretTrace::new(m);
        for t in 0..steps {
            let arm = adv.sample(&mut rng);
            let loss = rng.uniform();
            let est = adv.build_estimator(arm, loss).unwrap();
            trace.record(t, arm, loss, adv.p()[arm], adv.q(), &est).unwrap();
            adv.exp3_update(&est).unwrap();
        }
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        prop_assert_eq!(RegretTrace::read_csv(m, buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn metrics_are_ordered(counts in prop::collection::vec((0usize..50, 1usize..50), 2..12)) {
        let correct: Vec<usize> = counts.iter().map(|&(c, t)| c.min(t)).collect();
        let total: Vec<usize> = counts.iter().map(|&(_, t)| t).collect();
        let r = compute_metrics(&correct, &total, AccuracyKind::Clean).unwrap();
        prop_assert!(r.worst_class <= r.tail_20pct + 1e-12);
        prop_assert!(r.tail_20pct <= r.average + 1e-12);
        prop_assert!(tail_size(total.len(), 0.2) >= 1);
    }

    #[test]
    fn batches_cover_every_row(n in 1usize..500, b in 1usize..64) {
        let sizes = batch_sizes(n, b);
        prop_assert_eq!(sizes.len(), n.div_ceil(b));
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().all(|&s| s >= 1 && s <= b));
    }

    #[test]
    fn pgd_stays_in_the_ball(d in 1usize..8, eps in 0.001f64..1.0, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let model = random_model(Architecture::Mlp { hidden: 4 }, d, 3, 1.0, &mut rng);
        let x = random_vec(d, 0.5, &mut rng);
        let mut cfg = AttackConfig::pgd(eps, 5, eps / 2.0);
        cfg.clamp = Some((-0.5, 0.5));
        let delta = pgd_attack(&model, &x, 1, &cfg, &mut rng).unwrap();
        prop_assert!(delta.linf_norm() <= eps + 1e-12);
        prop_assert!(delta.apply(&x).iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn theoretical_eta_matches_its_formula(k in 2usize..50, extra in 0.0f64..1e6) {
        let kf = k as f64;
        let c = kf * kf.ln() + extra;
        let eta = theoretical_eta(k, c).unwrap();
        prop_assert!((eta - (kf.ln() / (4.0 * kf * c)).sqrt()).abs() <= 1e-15 * eta.max(1.0));
    }
}
