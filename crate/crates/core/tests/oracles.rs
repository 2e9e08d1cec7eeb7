//! Library results against independently coded reference computations.

mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use drd_opf::ambiguity::{dual_worst_case, worst_case_expectation, AmbiguitySpec};
use drd_opf::grid::parse_case;
use drd_opf::opf::{flow_from_angles, solve_single_stage, StageState};
use drd_opf::sim::{build_reference, sample_pool, PolicyStats, SamplingModel};
use drd_opf::value::{eval_quadratic, fit_quadratic, InterpolationGrid, QuadraticValue};

use common::{duplicate_stats, load};

/// Worst case of `z = [0, 1]` under `q = [½, ½]`, `γ = ½`, from bisection on
/// the boundary of the divergence ball.
const TWO_POINT_WORST_CASE: f64 = 0.7886751345948129;

#[test]
fn flows_match_dense_incidence_product() {
    let case = load("desk6.case");
    let net = case.index().unwrap();
    let (nl, nb) = (case.num_lines(), case.num_buses());
    let pos = |id: &str| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut incidence = DMatrix::<f64>::zeros(nl, nb);
    let mut susceptance = DMatrix::<f64>::zeros(nl, nl);
    for (l, line) in case.lines.iter().enumerate() {
        incidence[(l, pos(&line.from_bus))] = 1.0;
        incidence[(l, pos(&line.to_bus))] = -1.0;
        susceptance[(l, l)] = 1.0 / line.reactance;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let theta: Vec<f64> = (0..nb).map(|_| rng.random_range(-0.5..0.5)).collect();
        let dense = &susceptance * &incidence * DVector::from_vec(theta.clone());
        let flows = flow_from_angles(&case, &net, &theta);
        for l in 0..nl {
            assert!((flows[l] - dense[l]).abs() <= 1e-9 * (1.0 + dense[l].abs()), "line {l}");
        }
    }
}

fn one_bus(demand: f64, gen: &str) -> drd_opf::grid::GridCase {
    parse_case(&format!(
        "[meta]\nhorizon = 1\nreference_bus = a\n[buses]\na, -1, 1, 1500, 1500, {demand}\n\
         [generators]\ng, a, {gen}\n[lines]\n"
    ))
    .unwrap()
}

/// Single-bus cases solved by hand from the optimality conditions.
#[test]
fn single_bus_kkt_cases() {
    // (demand, ξ, x_prev, generator row, optimal x, optimal cost)
    let cases = [
        // Surplus renewable with p_min = 0: everything is curtailed.
        (0.0, 7.0, 0.0, "0, 50, 100, 100, 0, 20, 0", 0.0, 7.0 * 1500.0),
        // Interior optimum: demand met exactly by the unit.
        (10.0, 0.0, 10.0, "0, 50, 100, 100, 0.5, 20, 0", 10.0, 0.5 * 100.0 + 200.0),
        // Capacity binds: the rest is shed.
        (60.0, 0.0, 50.0, "0, 50, 100, 100, 0, 20, 0", 50.0, 1000.0 + 10.0 * 1500.0),
        // Ramp binds from a cold start.
        (10.0, 0.0, 0.0, "0, 50, 5, 5, 0, 20, 0", 5.0, 100.0 + 5.0 * 1500.0),
        // p_min above net demand: the excess is curtailed.
        (4.0, 0.0, 10.0, "10, 50, 100, 100, 0, 20, 3", 10.0, 203.0 + 6.0 * 1500.0),
        // Renewable covers part of the load.
        (30.0, 12.0, 18.0, "0, 50, 100, 100, 0.1, 2, 0", 18.0, 0.1 * 324.0 + 36.0),
    ];
    for (i, (demand, xi, x_prev, gen, x_opt, cost)) in cases.into_iter().enumerate() {
        let case = one_bus(demand, gen);
        let state = StageState {
            t: 0,
            x_prev: vec![x_prev],
            xi: vec![xi],
        };
        let d = solve_single_stage(&case, &state).unwrap();
        assert!((d.x[0] - x_opt).abs() <= 1e-5, "case {i}: x {}", d.x[0]);
        assert!((d.cost - cost).abs() <= 1e-6 * (1.0 + cost), "case {i}: cost {} vs {cost}", d.cost);
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn two_point_worst_case_by_bisection() {
    let (q, gamma) = (0.5, 0.5);
    // Divergence of (1 − p, p) from (q, 1 − q) minus the radius; the
    // worst case puts as much mass on the costly scenario as the ball allows.
    let excess = |p: f64| (1.0 - p - q).powi(2) / (1.0 - p) + (p - (1.0 - q)).powi(2) / p - gamma;
    let p = bisect(0.5, 1.0 - 1e-15, excess);
    assert!((p - TWO_POINT_WORST_CASE).abs() <= 1e-12);

    let spec = AmbiguitySpec::new(vec![q, 1.0 - q], gamma).unwrap();
    let primal = worst_case_expectation(&[0.0, 1.0], &spec).unwrap();
    assert!((primal.value - TWO_POINT_WORST_CASE).abs() <= 1e-9);
    let (dual, _) = dual_worst_case(&[0.0, 1.0], &spec).unwrap();
    assert!((dual - TWO_POINT_WORST_CASE).abs() <= 1e-5);
}

/// Concave targets on {−1, 0, 1}: the PSD constraint binds. A dense sweep
/// over (a ≥ 0, b, c) bounds the achievable sum of squares from above.
#[test]
fn concave_targets_match_parameter_sweep() {
    let xs = [-1.0, 0.0, 1.0];
    let targets: Vec<f64> = xs.iter().map(|x| -x * x).collect();
    let sse = |a: f64, b: f64, c: f64| -> f64 {
        xs.iter()
            .zip(&targets)
            .map(|(x, f)| (a * x * x + 2.0 * b * x + c - f).powi(2))
            .sum()
    };
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for ia in 0..=100 {
        let a = ia as f64 * 0.01;
        for ib in -50..=50 {
            let b = ib as f64 * 0.01;
            for ic in -150..=50 {
                let c = ic as f64 * 0.01;
                let s = sse(a, b, c);
                if s < best.0 {
                    best = (s, a, b, c);
                }
            }
        }
    }
    let grid = InterpolationGrid::from_points(xs.iter().map(|&x| vec![x]).collect()).unwrap();
    let fit = fit_quadratic(&grid, &targets).unwrap();
    let v = &fit.value;
    let achieved = sse(v.a[0][0], v.b[0], v.c);
    assert!(v.a[0][0] >= -1e-8);
    assert!(achieved <= best.0 + 1e-7, "fit {achieved} vs sweep {}", best.0);
    assert!((fit.residual_norm.powi(2) - achieved).abs() <= 1e-6);
    // The sweep optimum sits on its grid within one step of the fit.
    assert!((v.a[0][0] - best.1).abs() <= 0.011);
    assert!((v.b[0] - best.2).abs() <= 0.011);
    assert!((v.c - best.3).abs() <= 0.011);
}

#[test]
fn quadratic_evaluation_matches_matrix_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(1..7);
        let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = f.transpose() * &f;
        let b = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let c = rng.random_range(-10.0..10.0);
        let x = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let v = QuadraticValue {
            stage: 0,
            scenario: 0,
            a: (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect(),
            b: b.iter().copied().collect(),
            c,
        };
        let expected = (x.transpose() * &a * &x)[(0, 0)] + 2.0 * b.dot(&x) + c;
        let got = eval_quadratic(&v, x.as_slice());
        assert!((got - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }
}

#[test]
fn histogram_frequencies_match_a_counting_pass() {
    let case = load("desk3.case");
    let pool = sample_pool(&case, SamplingModel::default(), 500, 99).unwrap();
    let bins = 5;
    let set = build_reference(&pool, bins).unwrap();
    for t in 0..case.horizon {
        let totals: Vec<f64> = pool.paths.iter().map(|p| p[t].iter().sum()).collect();
        let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for s in &totals {
            let mut b = 0;
            while b + 1 < bins && *s >= lo + width * (b + 1) as f64 {
                b += 1;
            }
            counts[b] += 1;
        }
        let freqs: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / 500.0).collect();
        let stage = set.stage(t);
        assert_eq!(stage.q.len(), freqs.len());
        for (q, f) in stage.q.iter().zip(&freqs) {
            assert!((q - f).abs() <= 1e-15, "stage {t}: {q} vs {f}");
        }
        assert_eq!(stage.q.iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn truncated_normal_mean_matches_the_model() {
    let (mu, sigma) = (2.0, 3.0);
    let case = parse_case(&format!(
        "[meta]\nhorizon = 1\nreference_bus = a\n[buses]\na, -1, 1, 1500, 1500, 5\n\
         [generators]\ng, a, 0, 50, 50, 50, 0, 1, 0\n[lines]\n[renewables]\na, {sigma}, {mu}\n"
    ))
    .unwrap();
    let n = 100_000;
    let pool = sample_pool(&case, SamplingModel::default(), n, 17).unwrap();
    let mean = pool.paths.iter().map(|p| p[0][0]).sum::<f64>() / n as f64;

    let std = Normal::new(0.0, 1.0).unwrap();
    let alpha = -mu / sigma;
    let lambda = std.pdf(alpha) / (1.0 - std.cdf(alpha));
    let model_mean = mu + sigma * lambda;
    let model_var = sigma * sigma * (1.0 + alpha * lambda - lambda * lambda);
    let se = (model_var / n as f64).sqrt();
    assert!((mean - model_mean).abs() <= 3.0 * se, "{mean} vs {model_mean} ± {se}");
}

#[test]
fn statistics_match_a_duplicate_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1, 2, 7, 10, 999, 1000] {
        let costs: Vec<f64> = (0..n).map(|_| rng.random_range(1e5..3e5)).collect();
        let stats = PolicyStats::from_costs(&costs).unwrap();
        let (mean, sd, p90) = duplicate_stats(&costs);
        assert!((stats.mean - mean).abs() <= 1e-12 * mean.abs());
        assert!((stats.std_dev - sd).abs() <= 1e-12 * sd.abs().max(1.0));
        assert_eq!(stats.p90, p90);
    }
}
