// Clarabel translation: every constraint becomes rows of `A x + s = b` with
// `s` in the matching cone. Equalities and inequalities are gathered into one
// zero cone and one nonnegative cone ahead of the second-order and PSD blocks.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{triu_index, ConicProblem, Constraint, LinExpr, SolveStatus};
use crate::error::{Error, Result};

// Linking the system BLAS/LAPACK used by the PSD cone.
extern crate openblas_src as _;

pub(super) struct RawSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub iterations: u32,
}

#[derive(Default)]
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the row `s = b − a·x` carrying `sign·expr`.
    fn push(&mut self, expr: &LinExpr, sign: f64) {
        let row = self.b.len();
        for &(var, c) in &expr.terms {
            self.i.push(row);
            self.j.push(var.index());
            self.v.push(-sign * c);
        }
        self.b.push(sign * expr.constant);
    }
}

pub(super) fn solve(problem: &ConicProblem, tol: f64, careful: bool) -> Result<RawSolution> {
    let n = problem.num_vars();
    let mut rows = Rows::default();
    let mut cones = Vec::new();

    // expr = 0  ⇔  s = −expr ∈ {0}
    let zeros = problem
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::Zero(e) => Some(e),
            _ => None,
        })
        .fold(0, |count, e| {
            rows.push(e, -1.0);
            count + 1
        });
    if zeros > 0 {
        cones.push(SupportedConeT::ZeroConeT(zeros));
    }

    // expr ≤ 0  ⇔  s = −expr ≥ 0
    let nonneg = problem
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::NonPositive(e) => Some(e),
            _ => None,
        })
        .fold(0, |count, e| {
            rows.push(e, -1.0);
            count + 1
        });
    if nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg));
    }

    for c in problem.constraints() {
        if let Constraint::SecondOrder(exprs) = c {
            for e in exprs {
                rows.push(e, 1.0);
            }
            cones.push(SupportedConeT::SecondOrderConeT(exprs.len()));
        }
    }

    for c in problem.constraints() {
        if let Constraint::Psd { dim, upper } = c {
            // Clarabel's triangle cone scales off-diagonal entries by √2.
            for j in 0..*dim {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                    rows.push(&upper[triu_index(i, j)], scale);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(*dim));
        }
    }

    let m = rows.b.len();
    let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);

    let mut q = vec![0.0; n];
    for &(v, c) in &problem.objective().terms {
        q[v.index()] += c;
    }
    // ½ xᵀPx with P upper triangular.
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for &(a_var, b_var, c) in problem.quadratic_terms() {
        let (r, s) = if a_var.index() <= b_var.index() {
            (a_var.index(), b_var.index())
        } else {
            (b_var.index(), a_var.index())
        };
        pi.push(r);
        pj.push(s);
        pv.push(if r == s { 2.0 * c } else { c });
    }
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: tol,
        tol_gap_rel: tol,
        tol_feas: tol,
        max_iter: 200,
        ..DefaultSettings::default()
    };
    let settings = if careful {
        // Shorter steps and more refinement of each linear solve. Slower, but
        // keeps the iterates feasible where the default settings lose
        // primal feasibility in the last few iterations.
        DefaultSettings {
            max_step_fraction: 0.9,
            iterative_refinement_max_iter: 50,
            iterative_refinement_reltol: 1e-15,
            iterative_refinement_abstol: 1e-15,
            ..settings
        }
    } else {
        settings
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings)
        .map_err(|e| Error::MalformedProblem(format!("solver rejected problem data: {e}")))?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        // AlmostSolved only meets Clarabel's reduced tolerances, so it is not
        // optimal at `tol`.
        _ => SolveStatus::NumericalFailure,
    };
    Ok(RawSolution {
        status,
        x: solver.solution.x.clone(),
        iterations: solver.solution.iterations,
    })
}
