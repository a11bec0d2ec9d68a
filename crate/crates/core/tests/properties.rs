use distort_stop::embedding::{barycenter, exit_rule, invert_barycenter};
use distort_stop::model::{expected_shape, transform_payoff, DistortionFn, PayoffFn, Shape};
use distort_stop::oracle::{decompose_n_step, decompose_three_step, reconstructs, StepCdf, StepQuantile};
use distort_stop::quantile::{choquet_value_dist, choquet_value_quantile, left_inverse, Cdf, QuantileFn};
use distort_stop::solver::{solve_transformed, SolverOptions};
use num::{BigRational, ToPrimitive};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Positive increasing points and nondecreasing levels in (0, 1).
fn step_cdf() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|k| {
        (
            prop::collection::vec(0.05f64..2.0, k),
            prop::collection::vec(0.01f64..0.99, k - 1),
            0.05f64..2.0,
        )
            .prop_map(|(gaps, mut levels, start)| {
                let mut x = start;
                let points = gaps
                    .iter()
                    .map(|g| {
                        let p = x;
                        x += g;
                        p
                    })
                    .collect();
                levels.sort_by(f64::total_cmp);
                (points, levels)
            })
    })
}

fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(p.into(), q.into())
}

/// Rational step CDF with `k` distinct integer points and levels in
/// hundredths.
fn rational_step_cdf(k: std::ops::Range<usize>) -> impl Strategy<Value = StepCdf> {
    k.prop_flat_map(|k| {
        (
            prop::collection::btree_set(1i64..60, k),
            prop::collection::vec(1i64..100, k - 1),
        )
            .prop_map(|(pts, mut lv)| {
                lv.sort();
                StepCdf::new(
                    pts.into_iter().map(|p| rat(p, 4)).collect(),
                    lv.into_iter().map(|c| rat(c, 100)).collect(),
                )
                .unwrap()
            })
    })
}

fn catalog_distortions() -> Vec<DistortionFn> {
    vec![
        DistortionFn::Identity,
        DistortionFn::Power { alpha: 0.6 },
        DistortionFn::Power { alpha: 1.8 },
        DistortionFn::ReverseSQuadratic,
        DistortionFn::SQuadratic { q: 0.4 },
    ]
}

fn catalog_payoffs() -> Vec<PayoffFn> {
    vec![
        PayoffFn::Power { gamma: 0.5 },
        PayoffFn::Power { gamma: 0.8 },
        PayoffFn::Log,
        PayoffFn::Exponential { alpha: 0.7 },
        PayoffFn::Call { strike: 1.0 },
        PayoffFn::SPower {
            alpha1: 2.0,
            alpha2: 0.5,
            k: 1.0,
        },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn duality_on_random_step_cdfs((points, levels) in step_cdf(), which in 0usize..5) {
        let f = Cdf::steps(&points, &levels).unwrap();
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let w = &catalog_distortions()[which];
        let jd = choquet_value_dist(&f, &u, w).unwrap();
        let jq = choquet_value_quantile(&left_inverse(&f), &u, w).unwrap();
        prop_assert!((jd - jq).abs() < 1e-9, "{jd} {jq}");
    }

    #[test]
    fn stochastically_larger_laws_are_worth_more((points, levels) in step_cdf(), shrink in 0.3f64..1.0, which in 0usize..5) {
        // scaling the points down makes the CDF pointwise larger
        let f = Cdf::steps(&points, &levels).unwrap();
        let small: Vec<f64> = points.iter().map(|p| p * shrink).collect();
        let g = Cdf::steps(&small, &levels).unwrap();
        let u = transform_payoff(&PayoffFn::Log, 1.0).unwrap();
        let w = &catalog_distortions()[which];
        prop_assert!(choquet_value_dist(&f, &u, w).unwrap() >= choquet_value_dist(&g, &u, w).unwrap() - 1e-12);
    }

    #[test]
    fn quantile_budget_is_the_integrated_tail((points, levels) in step_cdf()) {
        let f = Cdf::steps(&points, &levels).unwrap();
        let mut tail = points[0];
        for (i, c) in levels.iter().enumerate() {
            tail += (1.0 - c) * (points[i + 1] - points[i]);
        }
        prop_assert!((left_inverse(&f).budget() - tail).abs() < 1e-10 * tail.max(1.0));
    }

    #[test]
    fn identity_distortion_is_the_plain_mean(levels in prop::collection::vec(0.01f64..5.0, 1..10)) {
        let mut levels = levels;
        levels.sort_by(f64::total_cmp);
        let g = QuantileFn::uniform_steps(&levels).unwrap();
        let u = transform_payoff(&PayoffFn::Log, 1.0).unwrap();
        let mean = levels.iter().map(|&x| u.eval(x)).sum::<f64>() / levels.len() as f64;
        let j = choquet_value_quantile(&g, &u, &DistortionFn::Identity).unwrap();
        prop_assert!((j - mean).abs() < 1e-12);
    }

    #[test]
    fn distortions_fix_the_endpoints(which in 0usize..5, p in 0.001f64..0.999) {
        let w = &catalog_distortions()[which];
        prop_assert_eq!(w.eval(0.0), 0.0);
        prop_assert_eq!(w.eval(1.0), 1.0);
        if (p - 0.5).abs() > 1e-6 || !matches!(w, DistortionFn::ReverseSQuadratic) {
            prop_assert!(w.deriv(p) > 0.0);
        }
    }

    #[test]
    fn transform_shape_matches_catalog(which in 0usize..6, beta in prop_oneof![-3.0f64..-0.05, 0.05f64..3.0]) {
        let payoff = &catalog_payoffs()[which];
        let expected = expected_shape(payoff, beta).unwrap();
        let u = transform_payoff(payoff, beta).unwrap();
        prop_assert_eq!(u.shape(), expected);
        // nondecreasing exactly when beta > 0
        let xs: Vec<f64> = (1..200).map(|i| 0.05 * i as f64).collect();
        let increasing = xs.windows(2).all(|p| u.eval(p[1]) >= u.eval(p[0]) - 1e-12);
        prop_assert_eq!(increasing, beta > 0.0);
        prop_assert_eq!(expected == Shape::Nonincreasing, beta < 0.0);
    }

    #[test]
    fn exit_laws_have_mean_s(a in 0.05f64..1.0, s_frac in 0.0f64..1.0, b_extra in 0.01f64..5.0) {
        let b = 1.0 + b_extra;
        let s = a + s_frac * (b - a);
        let (_, law) = exit_rule(a, b, s).unwrap();
        prop_assert!((law.mean() - s).abs() < 1e-12 * s);
    }

    #[test]
    fn barycenter_dominates_and_inverts((points, levels) in step_cdf()) {
        let f = Cdf::steps(&points, &levels).unwrap();
        let s = f.mean();
        let psi = barycenter(&f, s).unwrap();
        let (lo, hi) = (f.support_min(), f.support_max());
        if hi > lo {
            prop_assert!((psi.eval(lo) - s).abs() < 1e-9 * s);
            for i in 1..50 {
                let x = lo + (hi - lo) * i as f64 / 50.0;
                prop_assert!(psi.eval(x) >= x - 1e-9 * x);
            }
            for i in 1..20 {
                let m = s + (hi - s) * i as f64 / 20.0;
                let l = invert_barycenter(&psi, m);
                prop_assert!(psi.eval(l) <= m + 1e-9 * m);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn three_step_decomposition_is_exact(f in rational_step_cdf(3..4)) {
        if f.jumps() == 3 {
            let (f1, f2, theta) = decompose_three_step(&f).unwrap();
            let one = rat(1, 1);
            let parts = vec![(f1.clone(), theta.clone()), (f2.clone(), &one - &theta)];
            prop_assert!(reconstructs(&f, &parts));
            prop_assert_eq!(f1.mean(), f.mean());
            prop_assert_eq!(f2.mean(), f.mean());
            prop_assert!(f1.jumps() <= 2 && f2.jumps() <= 2);
        }
    }

    #[test]
    fn n_step_decomposition_is_exact_and_convexity_holds(f in rational_step_cdf(1..9), alpha in 1.0f64..4.0) {
        let parts = decompose_n_step(&f).unwrap();
        prop_assert!(reconstructs(&f, &parts));
        let total: BigRational = parts.iter().map(|(_, t)| t.clone()).sum();
        prop_assert_eq!(total, rat(1, 1));
        for (g, t) in &parts {
            prop_assert_eq!(g.mean(), f.mean());
            prop_assert!(g.jumps() <= 2);
            prop_assert!(t.to_f64().unwrap() > 0.0);
        }
        let w = DistortionFn::Power { alpha };
        let u = |x: f64| x.sqrt();
        let best = parts.iter().map(|(g, _)| g.choquet(u, &w)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f.choquet(u, &w) <= best + 1e-12);
    }
}

/// Nondecreasing random atoms rescaled to budget `s`.
fn random_feasible(rng: &mut ChaCha8Rng, n: usize, s: f64) -> StepQuantile {
    let spread = rng.random_range(0.1..6.0);
    let mut atoms: Vec<f64> = (0..n).map(|_| (spread * rng.random::<f64>()).exp()).collect();
    atoms.sort_by(f64::total_cmp);
    let mean = atoms.iter().sum::<f64>() / n as f64;
    let scale = s / mean * rng.random_range(0.8..=1.0);
    StepQuantile {
        atoms: atoms.iter().map(|a| a * scale).collect(),
    }
}

#[test]
fn no_random_feasible_quantile_beats_the_solver() {
    let instances = [
        (PayoffFn::Power { gamma: 0.5 }, DistortionFn::Power { alpha: 0.75 }),
        (PayoffFn::Power { gamma: 0.3 }, DistortionFn::ReverseSQuadratic),
        (PayoffFn::Power { gamma: 0.5 }, DistortionFn::SQuadratic { q: 0.5 }),
        (PayoffFn::Log, DistortionFn::Power { alpha: 1.5 }),
        (PayoffFn::Exponential { alpha: 1.0 }, DistortionFn::Power { alpha: 0.7 }),
    ];
    let s = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (payoff, w) in &instances {
        let u = transform_payoff(payoff, 1.0).unwrap();
        let sol = solve_transformed(&u, w, s, &SolverOptions::default()).unwrap();
        let v = sol.value.as_f64();
        if let Some(g) = &sol.g_star {
            assert!(g.budget() <= s * (1.0 + 1e-9), "{payoff:?} {w:?}");
            let j = choquet_value_quantile(&g.clone(), &u, w).unwrap() + sol.offset;
            assert!((j / v - 1.0).abs() < 1e-6, "{payoff:?} {w:?}: {j} vs {v}");
            if let Some(f) = &sol.f_star {
                let jd = choquet_value_dist(f, &u, w).unwrap() + sol.offset;
                assert!((jd - j).abs() < 1e-8 * j.abs().max(1.0), "{jd} {j}");
            }
        }
        for _ in 0..10_000 {
            let n = rng.random_range(1..=12);
            let q = random_feasible(&mut rng, n, s);
            let j = q.value(&u, w);
            assert!(j <= v + 1e-9 * v.abs().max(1.0), "{payoff:?} {w:?}: {q:?} gives {j} > {v}");
        }
    }
}

#[test]
fn identity_distortion_turns_drawdown_into_stop_now() {
    let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
    let opts = SolverOptions::default();
    let distorted = solve_transformed(&u, &DistortionFn::Power { alpha: 0.75 }, 1.0, &opts).unwrap();
    assert!(matches!(
        distorted.rule.kind,
        distort_stop::embedding::RuleKind::DrawdownFraction { eta } if eta < 1.0
    ));
    let plain = solve_transformed(&u, &DistortionFn::Identity, 1.0, &opts).unwrap();
    assert_eq!(plain.rule.kind, distort_stop::embedding::RuleKind::StopNow);
}
