//! Randomized invariants.

use harvest_core::analytic::{characteristic_roots, gi_eval, quartic_coefficients, xi_threshold, Example1Params};
use harvest_core::ctmc::validate_generator;
use harvest_core::model::{generator_apply, uniform_grid, GridFunction, ModelSpec, YieldFunction};
use harvest_core::payoff::{estimate_j, path_payoff, McConfig};
use harvest_core::simulate::{simulate_harvested, SimConfig};
use harvest_core::strategies::{chattering_schedule, StrategySpec};
use harvest_core::ctmc::GeneratorMatrix;
use proptest::prelude::*;

/// Parameters with `μ₁ < r < ξ < μ₂`.
fn case3_params() -> impl Strategy<Value = Example1Params> {
    (0.02..0.2f64, 0.005..0.1f64, 0.1..0.6f64, 0.1..0.6f64, 0.2..3.0f64, 0.2..3.0f64, 0.005..0.4f64).prop_map(
        |(r, d1, s1, s2, l1, l2, d2)| {
            let base = Example1Params { mu: [r - d1, r], sigma: [s1, s2], lambda: [l1, l2], r };
            let xi = xi_threshold(&base).unwrap();
            Example1Params { mu: [r - d1, xi + d2], ..base }
        },
    )
}

fn horner(c: &[f64; 5], x: f64) -> f64 {
    c.iter().fold(0.0, |v, ci| v * x + ci)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generators_with_nonnegative_rates_validate(rates in prop::collection::vec(0.0..5.0f64, 6), pos in 0usize..6) {
        let m = 3;
        let mut rows = vec![vec![0.0; m]; m];
        let mut k = 0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    rows[i][j] = rates[k] + if k == pos { 0.1 } else { 0.0 } + 1e-3;
                    k += 1;
                }
            }
            rows[i][i] = -rows[i].iter().sum::<f64>();
        }
        let q = validate_generator(&rows).unwrap();
        for i in 0..m {
            let s: f64 = (0..m).map(|j| q.rate(i, j)).sum();
            prop_assert!(s.abs() <= 1e-12);
        }
        rows[0][1] = -rows[0][1];
        prop_assert!(validate_generator(&rows).is_err());
    }

    #[test]
    fn case3_roots_are_real_ordered_and_accurate(p in case3_params()) {
        let roots = characteristic_roots(&p).unwrap();
        let c = quartic_coefficients(&p);
        let [b1, b2, b3, b4] = roots.beta;
        prop_assert!(b1 > b2 && b2 > 0.0 && 0.0 > b3 && b3 > b4);
        prop_assert!(b2 < 1.0);
        for b in roots.beta {
            prop_assert!(horner(&c, b).abs() < 1e-9, "h({b}) = {}", horner(&c, b));
            let direct = gi_eval(&p, 0, b).unwrap() * gi_eval(&p, 1, b).unwrap() - p.lambda[0] * p.lambda[1];
            prop_assert!(direct.abs() < 1e-8);
        }
    }

    #[test]
    fn generator_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, k in 0.5..2.5f64, r in 0.0..0.5f64) {
        let model = ModelSpec::gbm(&[0.05, 0.2], &[0.3, 0.4]).unwrap();
        let q = GeneratorMatrix::two_state(1.0, 0.5).unwrap();
        let grid = uniform_grid(0.2, 4.0, 40);
        let u = GridFunction::from_fn(grid.clone(), 2, |x, j| x.powf(k) + j as f64).unwrap();
        let v = GridFunction::from_fn(grid.clone(), 2, |x, j| (x * (j + 1) as f64).ln()).unwrap();
        let w = GridFunction::from_fn(grid, 2, |x, j| a * (x.powf(k) + j as f64) + b * (x * (j + 1) as f64).ln()).unwrap();
        let (lu, lv, lw) = (
            generator_apply(&u, &model, &q, r).unwrap(),
            generator_apply(&v, &model, &q, r).unwrap(),
            generator_apply(&w, &model, &q, r).unwrap(),
        );
        for j in 0..2 {
            for i in 0..lw.len() {
                let combo = a * lu.values[j][i] + b * lv.values[j][i];
                prop_assert!((lw.values[j][i] - combo).abs() < 1e-9 * (1.0 + combo.abs()));
            }
        }
    }

    #[test]
    fn power_decay_price_is_nonincreasing(gamma in 0.01..0.99f64, x in 0.0..50.0f64, dx in 0.0..10.0f64) {
        let f = YieldFunction::PowerDecay { gamma };
        let a = harvest_core::model::yield_eval(&f, x, 0).unwrap();
        let b = harvest_core::model::yield_eval(&f, x + dx, 0).unwrap();
        prop_assert!(b <= a && a <= 1.0 && b > 0.0);
    }

    #[test]
    fn chattering_schedule_steps_down_evenly(x0 in 0.1..10.0f64, frac in 0.0..1.0f64, n in 1u32..40) {
        let target = x0 * frac;
        let s = chattering_schedule(x0, target, n, 10.0).unwrap();
        prop_assert_eq!(s.times.len(), n as usize);
        prop_assert_eq!(*s.levels.last().unwrap(), target);
        prop_assert!(s.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.levels.windows(2).all(|w| w[1] <= w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn harvested_paths_respect_invariants(
        seed in any::<u64>(),
        b in 0.5..3.0f64,
        x0 in 0.2..4.0f64,
        which in 0usize..4,
    ) {
        let model = ModelSpec::gbm(&[0.05, 0.3], &[0.3, 0.5]).unwrap();
        let q = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let f = YieldFunction::PowerDecay { gamma: 0.6 };
        let strategy = match which {
            0 => StrategySpec::Barrier { b, rho: None },
            1 => StrategySpec::Chattering { n: 4, target: 0.5 * x0 },
            2 => StrategySpec::ThresholdExport { level: b, regime: 1 },
            _ => StrategySpec::composite(StrategySpec::Chattering { n: 3, target: b.min(x0) }, b.min(x0), StrategySpec::Barrier { b: b.min(x0), rho: None }),
        };
        let cfg = SimConfig::new(1e-2, 3.0, seed);
        let path = simulate_harvested(&model, &q, &strategy, &f, x0, 0, &cfg).unwrap();
        prop_assert!(path.x.iter().all(|&x| x >= 0.0));
        prop_assert!(path.z_cum.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(path.times.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(path.harvests.iter().all(|h| h.amount > 0.0));
        let total: f64 = path.harvests.iter().map(|h| h.amount).sum();
        prop_assert!((total - path.z_cum.last().unwrap()).abs() <= 1e-12 * (1.0 + total));
        if which == 0 {
            prop_assert!(path.x.iter().skip(1).all(|&x| x <= b * (1.0 + 1e-12)));
        }
        // single-path estimate reproduces the recorded path's payoff
        let mc = McConfig { n_paths: 1, base_seed: 0, antithetic: false };
        let cfg1 = SimConfig { seed: harvest_core::rng::path_seed(0, 0), ..cfg };
        let p1 = simulate_harvested(&model, &q, &strategy, &f, x0, 0, &cfg1).unwrap();
        let est = estimate_j(&model, &q, &strategy, &f, 0.1, x0, 0, &cfg1, &mc).unwrap();
        let direct = path_payoff(&p1, &f, 0.1);
        prop_assert!((est.mean - direct).abs() <= 1e-12 * (1.0 + direct.abs()), "{} vs {direct}", est.mean);
    }
}
