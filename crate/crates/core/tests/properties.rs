mod common;

use proptest::prelude::*;

use drd_opf::ambiguity::{chi2_divergence, worst_case_expectation, AmbiguitySpec};
use drd_opf::opf::{solve_single_stage, stage_cost, StageState};
use drd_opf::sim::{build_reference, SamplePool, SamplingModel};
use drd_opf::value::{eval_quadratic, fit_quadratic, InterpolationGrid, QuadraticValue};

use common::load;

/// Probability vectors from positive weights; the last entry absorbs
/// rounding so the vector sums to one.
fn simplex(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut q: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let last = q.len() - 1;
    q[last] = 1.0 - q[..last].iter().sum::<f64>();
    q
}

fn reference_and_costs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=10).prop_flat_map(|m| {
        (
            prop::collection::vec(0.01f64..1.0, m).prop_map(simplex),
            prop::collection::vec(-100.0f64..100.0, m),
        )
    })
}

fn psd_quadratic(n: usize) -> impl Strategy<Value = QuadraticValue> {
    (
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), 1..=n),
        prop::collection::vec(-5.0f64..5.0, n),
        -10.0f64..10.0,
    )
        .prop_map(move |(f, b, c)| QuadraticValue {
            stage: 0,
            scenario: 0,
            a: (0..n)
                .map(|i| (0..n).map(|j| f.iter().map(|r| r[i] * r[j]).sum()).collect())
                .collect(),
            b,
            c,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn worst_case_stays_in_the_ball((q, z) in reference_and_costs(), gamma in 0.0f64..5.0) {
        let spec = AmbiguitySpec::new(q.clone(), gamma).unwrap();
        let wc = worst_case_expectation(&z, &spec).unwrap();
        let total: f64 = wc.p_star.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(wc.p_star.iter().all(|p| *p >= -1e-9));
        prop_assert!(chi2_divergence(&wc.p_star, &q).unwrap() <= gamma + 1e-6);
        let attained: f64 = wc.p_star.iter().zip(&z).map(|(p, z)| p * z).sum();
        prop_assert!((attained - wc.value).abs() <= 1e-8 * (1.0 + wc.value.abs()));
    }

    #[test]
    fn worst_case_dominates_the_reference((q, z) in reference_and_costs(), gamma in 0.0f64..5.0) {
        let spec = AmbiguitySpec::new(q, gamma).unwrap();
        let wc = worst_case_expectation(&z, &spec).unwrap();
        prop_assert!(wc.value >= spec.expectation(&z) - 1e-8);
    }

    #[test]
    fn worst_case_grows_with_the_radius((q, z) in reference_and_costs(), g1 in 0.0f64..5.0, g2 in 0.0f64..5.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let small = worst_case_expectation(&z, &AmbiguitySpec::new(q.clone(), lo).unwrap()).unwrap();
        let large = worst_case_expectation(&z, &AmbiguitySpec::new(q, hi).unwrap()).unwrap();
        prop_assert!(small.value <= large.value + 1e-8);
    }

    #[test]
    fn surrogates_are_convex(
        v in psd_quadratic(4),
        x1 in prop::collection::vec(-10.0f64..10.0, 4),
        x2 in prop::collection::vec(-10.0f64..10.0, 4),
        lambda in 0.0f64..=1.0,
    ) {
        let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let lhs = eval_quadratic(&v, &mid);
        let rhs = lambda * eval_quadratic(&v, &x1) + (1.0 - lambda) * eval_quadratic(&v, &x2);
        prop_assert!(lhs <= rhs + 1e-8 * (1.0 + rhs.abs()));
    }

    #[test]
    fn histogram_mass_is_exactly_one(
        samples in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 3), 1..200),
        bins in 1usize..12,
    ) {
        let pool = SamplePool {
            paths: samples.into_iter().map(|s| vec![s]).collect(),
            seed: 0,
            model: SamplingModel::default(),
        };
        let set = build_reference(&pool, bins).unwrap();
        prop_assert_eq!(set.stage(0).q.iter().sum::<f64>(), 1.0);
        prop_assert!(set.stage(0).len() <= bins);
    }
}

proptest! {
    // Each case solves a conic program.
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_beats_feasible_perturbations(
        targets in prop::collection::vec(-50.0f64..50.0, 9),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let points: Vec<Vec<f64>> = (0..3)
            .flat_map(|i| (0..3).map(move |j| vec![i as f64 * 10.0, j as f64 * 5.0]))
            .collect();
        let grid = InterpolationGrid::from_points(points.clone()).unwrap();
        let fit = fit_quadratic(&grid, &targets).unwrap();
        let residual = |v: &QuadraticValue| -> f64 {
            points
                .iter()
                .zip(&targets)
                .map(|(x, f)| (eval_quadratic(v, x) - f).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let base = residual(&fit.value);
        prop_assert!((base - fit.residual_norm).abs() <= 1e-6 * (1.0 + base));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let mut p = fit.value.clone();
            // Adding a PSD rank-one term keeps A feasible.
            let u = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            for i in 0..2 {
                for j in 0..2 {
                    p.a[i][j] += u[i] * u[j];
                }
                p.b[i] += rng.random_range(-0.5..0.5);
            }
            p.c += rng.random_range(-1.0..1.0);
            prop_assert!(base <= residual(&p) + 1e-6 * (1.0 + base));
        }
    }

    #[test]
    fn desk3_stage_is_always_feasible(
        t in 0usize..3,
        x1 in 10.0f64..100.0,
        x2 in 0.0f64..80.0,
        xi in 0.0f64..200.0,
    ) {
        let case = load("desk3.case");
        let state = StageState { t, x_prev: vec![x1, x2], xi: vec![0.0, 0.0, xi] };
        let d = solve_single_stage(&case, &state).unwrap();
        prop_assert!(d.cost >= 0.0);
    }

    #[test]
    fn stage_cost_is_monotone_in_shedding_and_curtailment(
        bump in 0.0f64..50.0,
        bus in 0usize..3,
        curtail in any::<bool>(),
    ) {
        let case = load("desk3.case");
        let state = StageState { t: 1, x_prev: vec![40.0, 10.0], xi: vec![0.0, 0.0, 25.0] };
        let d = solve_single_stage(&case, &state).unwrap();
        let mut more = d.clone();
        if curtail {
            more.curtail[bus] += bump;
        } else {
            more.shed[bus] += bump;
        }
        prop_assert!(stage_cost(&case, &more) >= stage_cost(&case, &d));
    }
}
