//! Single-period DC optimal power flow: feasible region, stage cost and a
//! post-solve physics checker that every dispatch in the crate goes through.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic_relaxing, ConicProblem, LinExpr, OptimalPoint, Var, DEFAULT_TOL, RELAXED_TOL};
use crate::error::{Error, Result};
use crate::grid::{GridCase, NetworkIndex};

/// Absolute tolerance (MW, rad) of the physics checker.
pub const PHYSICS_TOL: f64 = 1e-6;

/// Information available when stage `t` (0-based) is dispatched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub t: usize,
    /// Dispatch of the previous stage, per generator.
    pub x_prev: Vec<f64>,
    /// Realized renewable output per bus.
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDispatch {
    pub x: Vec<f64>,
    pub delta_x: Vec<f64>,
    pub flow: Vec<f64>,
    pub theta: Vec<f64>,
    pub shed: Vec<f64>,
    pub curtail: Vec<f64>,
    pub cost: f64,
}

/// Variable handles of one stage inside a larger problem.
#[derive(Clone, Debug)]
pub struct StageVars {
    pub x: Vec<Var>,
    pub delta_x: Vec<Var>,
    pub flow: Vec<Var>,
    pub theta: Vec<Var>,
    pub shed: Vec<Var>,
    pub curtail: Vec<Var>,
}

fn check_dims(case: &GridCase, state: &StageState) -> Result<()> {
    if state.t >= case.horizon {
        return Err(Error::Dimension(format!(
            "stage {} outside horizon {}",
            state.t, case.horizon
        )));
    }
    if state.x_prev.len() != case.num_generators() {
        return Err(Error::Dimension(format!(
            "x_prev has {} entries for {} generators",
            state.x_prev.len(),
            case.num_generators()
        )));
    }
    if state.xi.len() != case.num_buses() {
        return Err(Error::Dimension(format!(
            "xi has {} entries for {} buses",
            state.xi.len(),
            case.num_buses()
        )));
    }
    if state.xi.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("renewable output must be nonnegative".into()));
    }
    Ok(())
}

/// Declares one stage's variables in `problem` and adds nodal balance,
/// capacity, ramping, reference angle, angle bounds, line limits and the
/// flow–angle coupling. The objective is left untouched.
pub fn add_stage(
    problem: &mut ConicProblem,
    case: &GridCase,
    net: &NetworkIndex,
    state: &StageState,
    tag: &str,
) -> Result<StageVars> {
    check_dims(case, state)?;
    let ng = case.num_generators();
    let nb = case.num_buses();
    let nl = case.num_lines();
    let vars = StageVars {
        x: problem.add_vars(&format!("{tag}x"), ng),
        delta_x: problem.add_vars(&format!("{tag}dx"), ng),
        flow: problem.add_vars(&format!("{tag}flow"), nl),
        theta: problem.add_vars(&format!("{tag}theta"), nb),
        shed: problem.add_vars(&format!("{tag}shed"), nb),
        curtail: problem.add_vars(&format!("{tag}curtail"), nb),
    };

    // Σ x + inflow − outflow + shed − curtail = D − ξ
    let mut balance: Vec<LinExpr> = (0..nb)
        .map(|n| vars.shed[n] - vars.curtail[n])
        .collect();
    for (i, &n) in net.generator_bus.iter().enumerate() {
        balance[n].add_term(vars.x[i], 1.0);
    }
    for l in 0..nl {
        balance[net.line_to[l]].add_term(vars.flow[l], 1.0);
        balance[net.line_from[l]].add_term(vars.flow[l], -1.0);
    }
    for (n, expr) in balance.into_iter().enumerate() {
        problem.eq(expr, case.buses[n].demand[state.t] - state.xi[n]);
    }

    for (i, g) in case.generators.iter().enumerate() {
        problem.bound(vars.x[i], g.p_min, g.p_max);
        problem.eq(vars.delta_x[i] - vars.x[i], -state.x_prev[i]);
        problem.le(vars.delta_x[i], g.ramp_up);
        problem.ge(vars.delta_x[i], -g.ramp_down);
    }

    problem.eq(vars.theta[net.reference], 0.0);
    for (n, b) in case.buses.iter().enumerate() {
        problem.bound(vars.theta[n], b.theta_min, b.theta_max);
        problem.ge(vars.shed[n], 0.0);
        problem.ge(vars.curtail[n], 0.0);
    }

    for (l, line) in case.lines.iter().enumerate() {
        problem.bound(vars.flow[l], -line.capacity, line.capacity);
        // X·p = θ_from − θ_to
        let coupling = vars.flow[l] * line.reactance - vars.theta[net.line_from[l]]
            + vars.theta[net.line_to[l]];
        problem.eq(coupling, 0.0);
    }
    Ok(vars)
}

/// Standalone fragment holding a single stage.
pub fn build_stage_constraints(case: &GridCase, state: &StageState) -> Result<(ConicProblem, StageVars)> {
    let net = case.index()?;
    let mut problem = ConicProblem::new();
    let vars = add_stage(&mut problem, case, &net, state, "")?;
    Ok((problem, vars))
}

/// Adds `weight × stage cost` of `vars` to the objective.
pub fn add_stage_cost(problem: &mut ConicProblem, case: &GridCase, vars: &StageVars, weight: f64) {
    let mut lin = LinExpr::zero();
    for (i, g) in case.generators.iter().enumerate() {
        problem.add_quadratic(vars.x[i], vars.x[i], weight * g.cost_quad);
        lin.add_term(vars.x[i], weight * g.cost_lin);
        lin.constant += weight * g.cost_const;
    }
    for (n, b) in case.buses.iter().enumerate() {
        lin.add_term(vars.shed[n], weight * b.shed_penalty);
        lin.add_term(vars.curtail[n], weight * b.curtail_penalty);
    }
    problem.minimize(lin);
}

/// Fuel plus shedding and curtailment penalties.
pub fn stage_cost(case: &GridCase, d: &StageDispatch) -> f64 {
    let fuel: f64 = case
        .generators
        .iter()
        .zip(&d.x)
        .map(|(g, &x)| g.fuel_cost(x))
        .sum();
    let penalty: f64 = case
        .buses
        .iter()
        .enumerate()
        .map(|(n, b)| b.shed_penalty * d.shed[n] + b.curtail_penalty * d.curtail[n])
        .sum();
    fuel + penalty
}

/// `(θ_from − θ_to) / X` per line.
pub fn flow_from_angles(case: &GridCase, net: &NetworkIndex, theta: &[f64]) -> Vec<f64> {
    case.lines
        .iter()
        .enumerate()
        .map(|(l, line)| (theta[net.line_from[l]] - theta[net.line_to[l]]) / line.reactance)
        .collect()
}

/// Reads a stage dispatch out of a solved problem.
///
/// Interior-point iterates satisfy the equalities only to solver tolerance,
/// so the raw point is cleaned: angles are clipped to their bounds, flows are
/// recomputed from the angles, generation is clipped to its capacity and ramp
/// window, and shedding/curtailment absorb the remaining nodal imbalance.
/// The result then goes through [`check_dispatch`].
pub fn extract_dispatch(
    case: &GridCase,
    net: &NetworkIndex,
    state: &StageState,
    vars: &StageVars,
    point: &OptimalPoint,
) -> Result<StageDispatch> {
    let mut theta = point.values(&vars.theta);
    for (n, b) in case.buses.iter().enumerate() {
        theta[n] = theta[n].clamp(b.theta_min, b.theta_max);
    }
    theta[net.reference] = 0.0;
    let flow = flow_from_angles(case, net, &theta);

    let x: Vec<f64> = case
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let prev = state.x_prev[i];
            let lo = g.p_min.max(prev - g.ramp_down);
            let hi = g.p_max.min(prev + g.ramp_up);
            point.value(vars.x[i]).clamp(lo, hi)
        })
        .collect();
    let delta_x = x.iter().zip(&state.x_prev).map(|(a, b)| a - b).collect();

    let injection = net_injection(case, net, &x, &flow);
    let mut shed = vec![0.0; case.num_buses()];
    let mut curtail = vec![0.0; case.num_buses()];
    for (n, b) in case.buses.iter().enumerate() {
        let gap = b.demand[state.t] - state.xi[n] - injection[n];
        if gap >= 0.0 {
            shed[n] = gap;
        } else {
            curtail[n] = -gap;
        }
    }

    let mut d = StageDispatch {
        x,
        delta_x,
        flow,
        theta,
        shed,
        curtail,
        cost: 0.0,
    };
    d.cost = stage_cost(case, &d);
    enforce_physics(case, net, state, &d)?;
    Ok(d)
}

/// Generation plus net line inflow per bus.
fn net_injection(case: &GridCase, net: &NetworkIndex, x: &[f64], flow: &[f64]) -> Vec<f64> {
    let mut inj = vec![0.0; case.num_buses()];
    for (i, &n) in net.generator_bus.iter().enumerate() {
        inj[n] += x[i];
    }
    for (l, &p) in flow.iter().enumerate() {
        inj[net.line_to[l]] += p;
        inj[net.line_from[l]] -= p;
    }
    inj
}

/// Every physical constraint the dispatch breaks by more than `tol`.
pub fn check_dispatch(
    case: &GridCase,
    net: &NetworkIndex,
    state: &StageState,
    d: &StageDispatch,
    tol: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let injection = net_injection(case, net, &d.x, &d.flow);
    for (n, b) in case.buses.iter().enumerate() {
        let residual = injection[n] + d.shed[n] - d.curtail[n] - (b.demand[state.t] - state.xi[n]);
        if !(residual.abs() <= tol) {
            out.push(format!("bus {}: balance residual {residual:e} MW", b.id));
        }
        if !(d.shed[n] >= -tol && d.curtail[n] >= -tol) {
            out.push(format!("bus {}: negative shed/curtail", b.id));
        }
        if !(d.theta[n] >= b.theta_min - tol && d.theta[n] <= b.theta_max + tol) {
            out.push(format!("bus {}: angle {} outside bounds", b.id, d.theta[n]));
        }
    }
    if !(d.theta[net.reference].abs() <= tol) {
        out.push("reference angle is not zero".into());
    }
    let implied = flow_from_angles(case, net, &d.theta);
    for (l, line) in case.lines.iter().enumerate() {
        if !(d.flow[l].abs() <= line.capacity + tol) {
            out.push(format!("line #{}: flow {} exceeds capacity {}", l + 1, d.flow[l], line.capacity));
        }
        if !((d.flow[l] - implied[l]).abs() <= tol) {
            out.push(format!("line #{}: flow disagrees with angles", l + 1));
        }
    }
    for (i, g) in case.generators.iter().enumerate() {
        if !(d.x[i] >= g.p_min - tol && d.x[i] <= g.p_max + tol) {
            out.push(format!("generator {}: output {} outside [{}, {}]", g.id, d.x[i], g.p_min, g.p_max));
        }
        let step = d.x[i] - state.x_prev[i];
        if !((step - d.delta_x[i]).abs() <= tol) {
            out.push(format!("generator {}: delta_x inconsistent", g.id));
        }
        if !(step <= g.ramp_up + tol && -step <= g.ramp_down + tol) {
            out.push(format!("generator {}: ramp {step} outside limits", g.id));
        }
    }
    out
}

static CHECKED: AtomicU64 = AtomicU64::new(0);
static VIOLATED: AtomicU64 = AtomicU64::new(0);

/// Process-wide counters of the post-solve checker: (dispatches checked,
/// dispatches that failed).
pub fn physics_audit() -> (u64, u64) {
    (CHECKED.load(Ordering::Relaxed), VIOLATED.load(Ordering::Relaxed))
}

fn enforce_physics(case: &GridCase, net: &NetworkIndex, state: &StageState, d: &StageDispatch) -> Result<()> {
    CHECKED.fetch_add(1, Ordering::Relaxed);
    let problems = check_dispatch(case, net, state, d, PHYSICS_TOL);
    if problems.is_empty() {
        Ok(())
    } else {
        VIOLATED.fetch_add(1, Ordering::Relaxed);
        Err(Error::Physics(format!("stage {}: {}", state.t, problems.join("; "))))
    }
}

/// Myopic optimum of one stage (no continuation value).
pub fn solve_single_stage(case: &GridCase, state: &StageState) -> Result<StageDispatch> {
    let net = case.index()?;
    let mut problem = ConicProblem::new();
    let vars = add_stage(&mut problem, case, &net, state, "")?;
    add_stage_cost(&mut problem, case, &vars, 1.0);
    let point = solve_conic_relaxing(&problem, DEFAULT_TOL, RELAXED_TOL)?
        .into_optimal(|| format!("single stage t={}", state.t))?;
    extract_dispatch(case, &net, state, &vars, &point)
}

/// Stage optimum with generation pinned to `x_fixed`; used by open-loop
/// schedules.
pub fn solve_fixed_generation(case: &GridCase, state: &StageState, x_fixed: &[f64]) -> Result<StageDispatch> {
    let net = case.index()?;
    let mut problem = ConicProblem::new();
    let vars = add_stage(&mut problem, case, &net, state, "")?;
    for (&v, &x) in vars.x.iter().zip(x_fixed) {
        problem.eq(v, x);
    }
    add_stage_cost(&mut problem, case, &vars, 1.0);
    let point = solve_conic_relaxing(&problem, DEFAULT_TOL, RELAXED_TOL)?
        .into_optimal(|| format!("fixed-generation stage t={}", state.t))?;
    extract_dispatch(case, &net, state, &vars, &point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;

    fn one_bus(demand: f64, p_min: f64, p_max: f64) -> GridCase {
        parse_case(&format!(
            "[meta]\nhorizon = 1\nreference_bus = b\n[buses]\nb, -1, 1, 1500, 1500, {demand}\n\
             [generators]\ng, b, {p_min}, {p_max}, 1000, 1000, 0, 1, 0\n[lines]\n"
        ))
        .unwrap()
    }

    fn state(case: &GridCase, xi: Vec<f64>) -> StageState {
        StageState {
            t: 0,
            x_prev: vec![0.0; case.num_generators()],
            xi,
        }
    }

    #[test]
    fn cheap_generation_beats_shedding() {
        let case = one_bus(10.0, 0.0, 50.0);
        let d = solve_single_stage(&case, &state(&case, vec![0.0])).unwrap();
        assert!((d.x[0] - 10.0).abs() < 1e-6);
        assert!((d.cost - 10.0).abs() < 1e-6);
    }

    #[test]
    fn zero_capacity_forces_shedding() {
        let case = one_bus(10.0, 0.0, 0.0);
        let d = solve_single_stage(&case, &state(&case, vec![0.0])).unwrap();
        assert!((d.shed[0] - 10.0).abs() < 1e-6);
        assert!((d.cost - 15000.0).abs() < 1e-6);
    }

    #[test]
    fn surplus_renewable_is_curtailed() {
        let case = one_bus(0.0, 0.0, 50.0);
        let d = solve_single_stage(&case, &state(&case, vec![7.0])).unwrap();
        assert!(d.x[0].abs() < 1e-6);
        assert!((d.curtail[0] - 7.0).abs() < 1e-6);
        assert!((d.cost - 10500.0).abs() < 1e-5);
    }

    #[test]
    fn degenerate_network_fragment() {
        let case = one_bus(10.0, 0.0, 50.0);
        let (p, vars) = build_stage_constraints(&case, &state(&case, vec![0.0])).unwrap();
        // x=4, shed=6: feasible; x=4, shed=5: balance broken
        let mut pt = vec![0.0; p.num_vars()];
        pt[vars.x[0].index()] = 4.0;
        pt[vars.delta_x[0].index()] = 4.0;
        pt[vars.shed[0].index()] = 6.0;
        assert!(p.max_violation(&pt) < 1e-12);
        pt[vars.shed[0].index()] = 5.0;
        assert!(p.max_violation(&pt) > 1e-3);
    }

    #[test]
    fn stage_cost_direct_evaluation() {
        let mut case = one_bus(0.0, 0.0, 50.0);
        case.generators[0].cost_quad = 0.1;
        case.generators[0].cost_lin = 5.0;
        let mut d = StageDispatch {
            x: vec![0.0],
            delta_x: vec![0.0],
            flow: vec![],
            theta: vec![0.0],
            shed: vec![0.0],
            curtail: vec![0.0],
            cost: 0.0,
        };
        assert_eq!(stage_cost(&case, &d), 0.0);
        d.x[0] = 10.0;
        assert!((stage_cost(&case, &d) - 60.0).abs() < 1e-12);
        d.x[0] = 0.0;
        d.shed[0] = 2.0;
        assert_eq!(stage_cost(&case, &d), 3000.0);
    }

    #[test]
    fn flow_is_angle_difference_over_reactance() {
        let case = parse_case(
            "[meta]\nhorizon = 1\nreference_bus = a\n[buses]\na, -1, 1, 1, 1, 0\nb, -1, 1, 1, 1, 0\n\
             [generators]\n[lines]\na, b, 0.5, 10\n",
        )
        .unwrap();
        let net = case.index().unwrap();
        assert_eq!(flow_from_angles(&case, &net, &[0.3, 0.3]), vec![0.0]);
        let f = flow_from_angles(&case, &net, &[0.1, 0.0]);
        assert!((f[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let case = one_bus(10.0, 0.0, 50.0);
        let bad = StageState {
            t: 0,
            x_prev: vec![0.0, 0.0],
            xi: vec![0.0],
        };
        assert!(matches!(build_stage_constraints(&case, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn ramp_window_binds() {
        let mut case = one_bus(30.0, 0.0, 50.0);
        case.generators[0].ramp_up = 12.0;
        let d = solve_single_stage(&case, &state(&case, vec![0.0])).unwrap();
        assert!((d.x[0] - 12.0).abs() < 1e-6);
        assert!((d.shed[0] - 18.0).abs() < 1e-6);
    }
}
