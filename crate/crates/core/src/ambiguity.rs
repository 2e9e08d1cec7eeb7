//! χ²-divergence ambiguity sets around a reference distribution.
//!
//! The set is `{p ≥ 0 : Σp = 1, Σ (p_j − q_j)²/p_j ≤ γ}`. Two independent
//! routes to the worst-case expectation `max_p pᵀz` live here:
//!
//! * [`worst_case_expectation`] works on `p` directly through its optimality
//!   conditions and a scalar root search;
//! * [`add_dual_epigraph`] emits the second-order-cone dual in the variables
//!   `(β, σ, y, z)`, which is what the stage problems embed.

use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, ConicProblem, LinExpr, Var, DEFAULT_TOL};
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    q: Vec<f64>,
    gamma: f64,
}

impl AmbiguitySpec {
    pub fn new(q: Vec<f64>, gamma: f64) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Domain("reference distribution is empty".into()));
        }
        if q.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain("reference probabilities must be nonnegative".into()));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("reference probabilities sum to {total}, not 1")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("divergence radius {gamma} must be nonnegative")));
        }
        Ok(AmbiguitySpec { q, gamma })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Radius zero: the set is the single point `q`.
    pub fn is_expectation(&self) -> bool {
        self.gamma == 0.0
    }

    pub fn expectation(&self, z: &[f64]) -> f64 {
        self.q.iter().zip(z).map(|(q, z)| q * z).sum()
    }
}

/// `Σ (p_j − q_j)² / p_j`.
pub fn chi2_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("p has {} entries, q has {}", p.len(), q.len())));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL || v.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Domain(format!("{name} is not a probability vector")));
        }
    }
    let mut acc = 0.0;
    for (j, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj == 0.0 {
            if qj != 0.0 {
                return Err(Error::Domain(format!("p[{j}] = 0 while q[{j}] = {qj}")));
            }
            continue;
        }
        acc += (pj - qj) * (pj - qj) / pj;
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub value: f64,
    pub p_star: Vec<f64>,
}

/// `max { pᵀz : p in the ambiguity set }` solved on the primal side.
///
/// Writing the divergence as `Σ q_j²/p_j − 1`, stationarity gives
/// `p_j = √β·q_j / √(s − z_j)` on the support of `q` for a level `s` above
/// every cost, with `β` fixed by the active divergence constraint. The
/// remaining normalization `Σp = 1` is monotone in `s` and is solved by
/// bisection. Scenarios with `q_j = 0` may only receive mass when they carry
/// the largest cost.
pub fn worst_case_expectation(z: &[f64], spec: &AmbiguitySpec) -> Result<WorstCase> {
    let q = spec.q();
    if z.len() != q.len() {
        return Err(Error::Dimension(format!("z has {} entries, q has {}", z.len(), q.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("costs must be finite".into()));
    }
    if spec.is_expectation() {
        return Ok(WorstCase {
            value: spec.expectation(z),
            p_star: q.to_vec(),
        });
    }
    let gamma = spec.gamma();
    let support: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    let zero_mass: Vec<usize> = (0..q.len()).filter(|&j| q[j] == 0.0).collect();
    let top_support = support.iter().map(|&j| z[j]).fold(f64::NEG_INFINITY, f64::max);
    let low_support = support.iter().map(|&j| z[j]).fold(f64::INFINITY, f64::min);
    let top_free = zero_mass.iter().map(|&j| z[j]).fold(f64::NEG_INFINITY, f64::max);

    if top_support == low_support && top_free <= top_support {
        return Ok(WorstCase {
            value: top_support,
            p_star: q.to_vec(),
        });
    }

    // Work in units of the cost spread for conditioning.
    let floor = top_support.max(top_free);
    let spread = (floor - low_support).max(f64::MIN_POSITIVE);
    let gap = |u: f64, j: usize| ((u * spread + floor - z[j]) / spread).sqrt();
    // Σ_S p_j as a function of the level u = (s − floor)/spread.
    let mass = |u: f64| {
        let (mut a, mut b) = (0.0, 0.0);
        for &j in &support {
            let s = gap(u, j);
            a += q[j] * s;
            b += q[j] / s;
        }
        a * b / (1.0 + gamma)
    };

    let mut p = vec![0.0; q.len()];
    let level = if top_free > top_support && mass(0.0) <= 1.0 {
        0.0
    } else {
        let mut hi = 1.0;
        while mass(hi) > 1.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Domain("worst-case level search diverged".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if mass(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };

    let root_beta: f64 = support.iter().map(|&j| q[j] * gap(level, j)).sum::<f64>() / (1.0 + gamma);
    for &j in &support {
        p[j] = root_beta * q[j] / gap(level, j);
    }
    let placed: f64 = p.iter().sum();
    if placed < 1.0 {
        let winners: Vec<usize> = zero_mass.iter().copied().filter(|&j| z[j] == top_free).collect();
        let share = (1.0 - placed) / winners.len().max(1) as f64;
        for j in winners {
            p[j] = share;
        }
    }
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    let value = p.iter().zip(z).map(|(p, z)| p * z).sum();
    Ok(WorstCase { value, p_star: p })
}

/// Dual multipliers of the ambiguity set plus the continuation epigraphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualBlock {
    pub sigma: f64,
    pub beta: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl DualBlock {
    /// `βγ − σ − 2qᵀy + 2β`.
    pub fn objective(&self, spec: &AmbiguitySpec) -> f64 {
        let qy: f64 = spec.q().iter().zip(&self.y).map(|(q, y)| q * y).sum();
        self.beta * spec.gamma() - self.sigma - 2.0 * qy + 2.0 * self.beta
    }

    /// Largest violation of the cone and linear constraints.
    pub fn max_violation(&self) -> f64 {
        let mut worst = (-self.beta).max(0.0);
        for (&y, &z) in self.y.iter().zip(&self.z) {
            let w = z + self.sigma;
            let cone = (4.0 * y * y + w * w).sqrt() - (2.0 * self.beta - w);
            worst = worst.max(cone).max(w - self.beta);
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct RobustVars {
    pub beta: Var,
    pub sigma: Var,
    pub y: Vec<Var>,
}

/// Handles of the dual fragment inside a problem.
#[derive(Clone, Debug)]
pub struct DualVars {
    /// Continuation epigraph per scenario; left free for the caller to bound
    /// from below.
    pub z: Vec<Var>,
    /// Absent when the radius is zero and the fragment reduces to `qᵀz`.
    pub robust: Option<RobustVars>,
}

impl DualVars {
    pub fn block(&self, point: &crate::conic::OptimalPoint) -> Option<DualBlock> {
        self.robust.as_ref().map(|r| DualBlock {
            sigma: point.value(r.sigma),
            beta: point.value(r.beta),
            y: point.values(&r.y),
            z: point.values(&self.z),
        })
    }
}

/// Adds `βγ − σ − 2qᵀy + 2β` to the objective together with
/// `√(4y_j² + (z_j+σ)²) ≤ 2β − z_j − σ`, `z_j + σ ≤ β` and `β ≥ 0`.
///
/// With `γ = 0` the dual infimum is not attained (β runs off to infinity);
/// the fragment then emits the limit `qᵀz` directly.
pub fn add_dual_epigraph(problem: &mut ConicProblem, spec: &AmbiguitySpec, tag: &str) -> DualVars {
    let m = spec.len();
    let z = problem.add_vars(&format!("{tag}z"), m);
    if spec.is_expectation() {
        problem.minimize(LinExpr::dot(&z, spec.q()));
        return DualVars { z, robust: None };
    }
    let beta = problem.add_var(format!("{tag}beta"));
    let sigma = problem.add_var(format!("{tag}sigma"));
    let y = problem.add_vars(&format!("{tag}y"), m);

    problem.minimize(beta * (spec.gamma() + 2.0) - sigma);
    problem.minimize(LinExpr::dot(&y, &spec.q().iter().map(|q| -2.0 * q).collect::<Vec<_>>()));
    problem.ge(beta, 0.0);
    for j in 0..m {
        let shifted = z[j] + sigma;
        problem.le(shifted.clone() - beta, 0.0);
        let head = beta * 2.0 - z[j] - sigma;
        problem.soc(head, vec![y[j] * 2.0, shifted]);
    }
    DualVars {
        z,
        robust: Some(RobustVars { beta, sigma, y }),
    }
}

/// Standalone dual fragment.
pub fn dual_epigraph(spec: &AmbiguitySpec) -> (ConicProblem, DualVars) {
    let mut problem = ConicProblem::new();
    let vars = add_dual_epigraph(&mut problem, spec, "");
    (problem, vars)
}

/// Minimizes the dual fragment with `z` pinned to the given costs.
pub fn dual_worst_case(z: &[f64], spec: &AmbiguitySpec) -> Result<(f64, Option<DualBlock>)> {
    if z.len() != spec.len() {
        return Err(Error::Dimension(format!("z has {} entries, q has {}", z.len(), spec.len())));
    }
    let (mut problem, vars) = dual_epigraph(spec);
    for (&v, &c) in vars.z.iter().zip(z) {
        problem.eq(v, c);
    }
    let point = solve_conic(&problem, DEFAULT_TOL)?.into_optimal(|| "ambiguity dual".into())?;
    let block = vars.block(&point);
    Ok((point.objective, block))
}
