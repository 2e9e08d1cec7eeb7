//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use drd_opf::conic::{solve_conic, ConicProblem, LinExpr, Var};
use drd_opf::grid::{load_case, GridCase};
use drd_opf::sim::ScenarioSet;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

pub fn load(name: &str) -> GridCase {
    load_case(case_path(name)).expect("bundled case loads")
}

/// Expected cost of the full scenario tree as one convex program.
///
/// Every node (a prefix of scenario indices) owns its own dispatch; its
/// ramping couples it to its parent's dispatch. Flows are written as
/// `(θ_from − θ_to)/X` directly, without flow variables, so the network
/// model is coded independently of the stage builder.
pub fn scenario_tree_value(case: &GridCase, scenarios: &ScenarioSet, tol: f64) -> f64 {
    let mut p = ConicProblem::new();
    let init = case.initial_state();
    let parent: Vec<LinExpr> = init.iter().map(|&v| LinExpr::constant(v)).collect();
    add_subtree(&mut p, case, scenarios, 0, &parent, 1.0);
    let sol = solve_conic(&p, tol).unwrap();
    sol.into_optimal(|| "scenario tree".into()).unwrap().objective
}

fn bus_of(case: &GridCase, id: &str) -> usize {
    case.buses.iter().position(|b| b.id == id).unwrap()
}

fn add_subtree(p: &mut ConicProblem, case: &GridCase, set: &ScenarioSet, t: usize, parent: &[LinExpr], prob: f64) {
    if t == case.horizon {
        return;
    }
    let stage = set.stage(t);
    for (j, xi) in stage.xi.iter().enumerate() {
        let weight = prob * stage.q[j];
        let x: Vec<Var> = p.add_vars(&format!("x{t}_{j}"), case.num_generators());
        let theta: Vec<Var> = p.add_vars(&format!("th{t}_{j}"), case.num_buses());
        let shed: Vec<Var> = p.add_vars(&format!("sh{t}_{j}"), case.num_buses());
        let curt: Vec<Var> = p.add_vars(&format!("cu{t}_{j}"), case.num_buses());

        let mut balance: Vec<LinExpr> = (0..case.num_buses()).map(|n| shed[n] - curt[n]).collect();
        for (i, g) in case.generators.iter().enumerate() {
            balance[bus_of(case, &g.bus)].add_term(x[i], 1.0);
            p.bound(x[i], g.p_min, g.p_max);
            let step = LinExpr::from(x[i]) - parent[i].clone();
            p.le(step.clone(), g.ramp_up);
            p.ge(step, -g.ramp_down);
            p.add_quadratic(x[i], x[i], weight * g.cost_quad);
            p.minimize(LinExpr::term(x[i], weight * g.cost_lin) + weight * g.cost_const);
        }
        for line in &case.lines {
            let (f, to) = (bus_of(case, &line.from_bus), bus_of(case, &line.to_bus));
            let flow = (theta[f] - theta[to]) * (1.0 / line.reactance);
            p.le(flow.clone(), line.capacity);
            p.ge(flow.clone(), -line.capacity);
            balance[to] += flow.clone();
            balance[f] += -flow;
        }
        for (n, b) in case.buses.iter().enumerate() {
            p.eq(balance[n].clone(), b.demand[t] - xi[n]);
            p.bound(theta[n], b.theta_min, b.theta_max);
            p.ge(shed[n], 0.0);
            p.ge(curt[n], 0.0);
            p.minimize(LinExpr::term(shed[n], weight * b.shed_penalty) + LinExpr::term(curt[n], weight * b.curtail_penalty));
        }
        p.eq(theta[bus_of(case, &case.reference_bus)], 0.0);

        let here: Vec<LinExpr> = x.iter().map(|&v| LinExpr::from(v)).collect();
        add_subtree(p, case, set, t + 1, &here, weight);
    }
}

/// Mean, n−1 standard deviation and nearest-rank 90th percentile, coded
/// with a different accumulation order from the library.
pub fn duplicate_stats(costs: &[f64]) -> (f64, f64, f64) {
    let n = costs.len();
    let mut sum = 0.0;
    for c in costs.iter().rev() {
        sum += c;
    }
    let mean = sum / n as f64;
    let sd = if n > 1 {
        let ss: f64 = costs.iter().map(|c| (c - mean) * (c - mean)).sum();
        (ss / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = costs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.9 * n as f64) - 1e-12).ceil().max(1.0) as usize;
    (mean, sd, sorted[rank - 1])
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}
