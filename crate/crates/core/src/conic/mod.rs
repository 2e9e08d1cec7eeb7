//! Solver-neutral conic problem description.
//!
//! Problems are stated over named scalar variables with an objective made of a
//! linear part and an optional convex quadratic part, subject to any mix of
//! linear equalities, linear inequalities, second-order cones and
//! positive-semidefinite cones over symmetric matrices of affine expressions.
//! The rest of the crate builds [`ConicProblem`]s and never talks to a solver
//! directly; [`solve_conic`] is the single entry point.

mod backend;
mod cbf;

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cbf::write_cbf;

/// Default relative tolerance for every solve in the crate.
pub const DEFAULT_TOL: f64 = 1e-8;

/// The backend measures feasibility on an equilibrated copy of the problem,
/// so residuals recomputed on the original data may exceed `tol` by a
/// bounded factor. Solutions beyond `RESIDUAL_SLACK * tol` are rejected.
pub const RESIDUAL_SLACK: f64 = 1e3;

/// Loosest tolerance [`solve_conic_relaxing`] falls back to by default.
pub const RELAXED_TOL: f64 = 1e-6;

/// Handle to a declared scalar variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ cᵢ·xᵢ + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(v: Var, c: f64) -> Self {
        LinExpr {
            terms: vec![(v, c)],
            constant: 0.0,
        }
    }

    /// `Σ cᵢ·vᵢ` over the zipped slices.
    pub fn dot(vars: &[Var], coefs: &[f64]) -> Self {
        LinExpr {
            terms: vars.iter().copied().zip(coefs.iter().copied()).collect(),
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: Var, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((v, c));
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    /// Magnitude used to normalize residuals of this expression at `x`.
    fn scale_at(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant.abs(), |acc, &(v, c)| acc.max((c * x[v.0]).abs()))
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        self += rhs.into();
        self
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: T) -> LinExpr {
        self += -rhs.into();
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self.constant *= k;
        self
    }
}

impl Add<f64> for Var {
    type Output = LinExpr;
    fn add(self, rhs: f64) -> LinExpr {
        LinExpr::from(self) + rhs
    }
}

impl Add<Var> for Var {
    type Output = LinExpr;
    fn add(self, rhs: Var) -> LinExpr {
        LinExpr::from(self) + rhs
    }
}

impl Sub<Var> for Var {
    type Output = LinExpr;
    fn sub(self, rhs: Var) -> LinExpr {
        LinExpr::from(self) - rhs
    }
}

impl Mul<f64> for Var {
    type Output = LinExpr;
    fn mul(self, k: f64) -> LinExpr {
        LinExpr::term(self, k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// `expr = 0`
    Zero(LinExpr),
    /// `expr ≤ 0`
    NonPositive(LinExpr),
    /// `‖(e₁,…,e_d)‖₂ ≤ e₀`
    SecondOrder(Vec<LinExpr>),
    /// Symmetric `dim × dim` matrix, given by its upper triangle stored column
    /// by column (`(0,0), (0,1), (1,1), (0,2), …`) must be PSD.
    Psd { dim: usize, upper: Vec<LinExpr> },
}

/// Position of entry `(i, j)`, `i ≤ j`, in the column-wise upper triangle.
pub fn triu_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

#[derive(Clone, Debug, Default)]
pub struct ConicProblem {
    names: Vec<String>,
    objective: LinExpr,
    /// Terms `c·xᵢ·xⱼ` of the quadratic objective.
    quadratic: Vec<(Var, Var, f64)>,
    constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        Var(self.names.len() - 1)
    }

    pub fn add_vars(&mut self, prefix: &str, n: usize) -> Vec<Var> {
        (0..n).map(|i| self.add_var(format!("{prefix}[{i}]"))).collect()
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn quadratic_terms(&self) -> &[(Var, Var, f64)] {
        &self.quadratic
    }

    /// Adds `expr` to the minimized objective.
    pub fn minimize(&mut self, expr: impl Into<LinExpr>) {
        self.objective += expr.into();
    }

    /// Adds `c·a·b` to the objective. The caller keeps the quadratic form PSD.
    pub fn add_quadratic(&mut self, a: Var, b: Var, c: f64) {
        if c != 0.0 {
            self.quadratic.push((a, b, c));
        }
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// `lhs = rhs`
    pub fn eq(&mut self, lhs: impl Into<LinExpr>, rhs: f64) {
        self.add(Constraint::Zero(lhs.into() - rhs));
    }

    /// `lhs ≤ rhs`
    pub fn le(&mut self, lhs: impl Into<LinExpr>, rhs: f64) {
        self.add(Constraint::NonPositive(lhs.into() - rhs));
    }

    /// `lhs ≥ rhs`
    pub fn ge(&mut self, lhs: impl Into<LinExpr>, rhs: f64) {
        self.add(Constraint::NonPositive(-lhs.into() + rhs));
    }

    /// `lo ≤ v ≤ hi`; infinite sides are skipped.
    pub fn bound(&mut self, v: Var, lo: f64, hi: f64) {
        if lo.is_finite() {
            self.ge(v, lo);
        }
        if hi.is_finite() {
            self.le(v, hi);
        }
    }

    /// `‖u‖₂ ≤ t`
    pub fn soc(&mut self, t: impl Into<LinExpr>, u: Vec<LinExpr>) {
        let mut rows = Vec::with_capacity(u.len() + 1);
        rows.push(t.into());
        rows.extend(u);
        self.add(Constraint::SecondOrder(rows));
    }

    /// `‖u‖₂² ≤ v`, written as `‖(u, (v−1)/2)‖₂ ≤ (v+1)/2`.
    pub fn squared_norm_le(&mut self, u: Vec<LinExpr>, v: LinExpr) {
        self.squared_norm_le_scaled(u, v, 1.0);
    }

    /// `‖u‖₂² ≤ v`, written as `‖(√w·u, (v−w)/2)‖₂ ≤ (v+w)/2`. Choosing `w`
    /// near the expected size of `v` keeps the cone well balanced when `v`
    /// is large.
    pub fn squared_norm_le_scaled(&mut self, u: Vec<LinExpr>, v: LinExpr, w: f64) {
        assert!(w > 0.0 && w.is_finite(), "cone scale must be positive");
        let t = (v.clone() + w) * 0.5;
        let root = w.sqrt();
        let mut rows: Vec<LinExpr> = u.into_iter().map(|e| e * root).collect();
        rows.push((v - w) * 0.5);
        self.soc(t, rows);
    }

    pub fn psd(&mut self, dim: usize, upper: Vec<LinExpr>) {
        self.add(Constraint::Psd { dim, upper });
    }

    /// Checks that every constraint references only declared variables and
    /// that cone dimensions are consistent.
    pub fn check(&self) -> Result<()> {
        let n = self.num_vars();
        let check_expr = |e: &LinExpr, what: &str| -> Result<()> {
            for &(v, c) in &e.terms {
                if v.0 >= n {
                    return Err(Error::MalformedProblem(format!(
                        "{what} references undeclared variable #{}",
                        v.0
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::MalformedProblem(format!(
                        "{what} has non-finite coefficient on `{}`",
                        self.names[v.0]
                    )));
                }
            }
            if !e.constant.is_finite() {
                return Err(Error::MalformedProblem(format!("{what} has non-finite constant")));
            }
            Ok(())
        };
        check_expr(&self.objective, "objective")?;
        for &(a, b, c) in &self.quadratic {
            if a.0 >= n || b.0 >= n || !c.is_finite() {
                return Err(Error::MalformedProblem("bad quadratic objective term".into()));
            }
        }
        for (i, con) in self.constraints.iter().enumerate() {
            let what = format!("constraint #{i}");
            match con {
                Constraint::Zero(e) | Constraint::NonPositive(e) => check_expr(e, &what)?,
                Constraint::SecondOrder(rows) => {
                    if rows.is_empty() {
                        return Err(Error::MalformedProblem(format!("{what}: empty cone")));
                    }
                    rows.iter().try_for_each(|e| check_expr(e, &what))?;
                }
                Constraint::Psd { dim, upper } => {
                    if *dim == 0 || upper.len() != dim * (dim + 1) / 2 {
                        return Err(Error::MalformedProblem(format!(
                            "{what}: PSD block of dim {dim} needs {} entries, got {}",
                            dim * (dim + 1) / 2,
                            upper.len()
                        )));
                    }
                    upper.iter().try_for_each(|e| check_expr(e, &what))?;
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.quadratic
            .iter()
            .fold(self.objective.eval(x), |acc, &(a, b, c)| acc + c * x[a.0] * x[b.0])
    }

    /// Largest constraint violation at `x`, each measured relative to
    /// `1 + max(‖x‖∞, magnitude of the constraint's terms)`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let xnorm = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let rel = |viol: f64, scale: f64| viol.max(0.0) / (1.0 + xnorm.max(scale));
        self.constraints
            .iter()
            .map(|con| match con {
                Constraint::Zero(e) => rel(e.eval(x).abs(), e.scale_at(x)),
                Constraint::NonPositive(e) => rel(e.eval(x), e.scale_at(x)),
                Constraint::SecondOrder(rows) => {
                    let t = rows[0].eval(x);
                    let norm = rows[1..]
                        .iter()
                        .map(|e| e.eval(x).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let scale = rows.iter().map(|e| e.scale_at(x)).fold(0.0, f64::max);
                    rel(norm - t, scale)
                }
                Constraint::Psd { dim, upper } => {
                    let m = sym_from_upper(*dim, &upper.iter().map(|e| e.eval(x)).collect::<Vec<_>>());
                    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                    let min_eig = SymmetricEigen::new(m).eigenvalues.min();
                    rel(-min_eig, scale)
                }
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn sym_from_upper(dim: usize, upper: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..=j {
            let v = upper[triu_index(i, j)];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical failure",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Present iff `status == Optimal`.
    pub x: Option<Vec<f64>>,
    pub objective: f64,
    /// Achieved relative primal residual (see [`ConicProblem::max_violation`]).
    pub residual: f64,
    /// Tolerance the solve was run at.
    pub tolerance: f64,
    pub iterations: u32,
}

impl ConicSolution {
    /// Primal values, or a solver error carrying `context`.
    pub fn into_optimal(self, context: impl FnOnce() -> String) -> Result<OptimalPoint> {
        match (self.status, self.x) {
            (SolveStatus::Optimal, Some(x)) => Ok(OptimalPoint {
                x,
                objective: self.objective,
            }),
            (status, _) => Err(Error::Solver {
                status,
                context: context(),
            }),
        }
    }
}

/// Primal solution of a successful solve.
#[derive(Clone, Debug)]
pub struct OptimalPoint {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl OptimalPoint {
    pub fn value(&self, v: Var) -> f64 {
        self.x[v.0]
    }

    pub fn values(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.x[v.0]).collect()
    }
}

/// Solves `problem` to relative tolerance `tol`.
///
/// A solution is only reported optimal when its independently recomputed
/// constraint residual is within `RESIDUAL_SLACK * tol`; anything else is downgraded to
/// `NumericalFailure`. A numerical failure is retried once with more
/// conservative interior-point settings before it is reported.
pub fn solve_conic(problem: &ConicProblem, tol: f64) -> Result<ConicSolution> {
    problem.check()?;
    let sol = attempt(problem, tol, false)?;
    if sol.status == SolveStatus::NumericalFailure {
        return attempt(problem, tol, true);
    }
    Ok(sol)
}

fn attempt(problem: &ConicProblem, tol: f64, careful: bool) -> Result<ConicSolution> {
    let raw = backend::solve(problem, tol, careful)?;
    let mut sol = ConicSolution {
        status: raw.status,
        x: None,
        objective: f64::NAN,
        residual: f64::INFINITY,
        tolerance: tol,
        iterations: raw.iterations,
    };
    if raw.status == SolveStatus::Optimal {
        let residual = problem.max_violation(&raw.x);
        sol.residual = residual;
        if residual <= RESIDUAL_SLACK * tol && raw.x.iter().all(|v| v.is_finite()) {
            sol.objective = problem.objective_value(&raw.x);
            sol.x = Some(raw.x);
        } else {
            sol.status = SolveStatus::NumericalFailure;
        }
    }
    Ok(sol)
}

/// Like [`solve_conic`], but after a numerical failure retries with the
/// tolerance loosened tenfold at a time, down to `max_tol`. Interior-point
/// iterates on badly scaled problems can stall just short of a tight target
/// while a slightly looser one is met cleanly. The achieved tolerance is in
/// [`ConicSolution::tolerance`]; infeasible and unbounded verdicts are
/// returned at once.
pub fn solve_conic_relaxing(problem: &ConicProblem, tol: f64, max_tol: f64) -> Result<ConicSolution> {
    let mut current = tol;
    loop {
        let sol = solve_conic(problem, current)?;
        if sol.status != SolveStatus::NumericalFailure || current >= max_tol {
            return Ok(sol);
        }
        current = (current * 10.0).min(max_tol);
    }
}
