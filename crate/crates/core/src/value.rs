//! Interpolation grids over dispatch space and convex quadratic surrogates
//! `xᵀAx + 2Bᵀx + C` fitted to sampled cost-to-go values by PSD-constrained
//! least squares.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic_relaxing, sym_from_upper, triu_index, ConicProblem, LinExpr, DEFAULT_TOL, RELAXED_TOL};
use crate::error::{Error, Result};
use crate::grid::GridCase;

/// Default cap on the number of interpolation points.
pub const DEFAULT_GRID_CAP: usize = 200_000;

/// Relative slack on the optimal residual within which the second fitting
/// pass looks for the minimum-norm parameters.
const FIT_RESIDUAL_SLACK: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationGrid {
    points: Vec<Vec<f64>>,
    pieces: usize,
}

impl InterpolationGrid {
    /// Grid from explicit points (all of equal dimension).
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.is_empty() || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension("grid points must be nonempty and of equal dimension".into()));
        }
        Ok(InterpolationGrid { points, pieces: 0 })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Pieces per generator for grids built by [`make_grid`], 0 otherwise.
    pub fn pieces(&self) -> usize {
        self.pieces
    }
}

/// Cartesian product of the centers of `pieces` equal slices of every
/// generator's `[p_min, p_max]`; the last generator varies fastest.
pub fn make_grid(case: &GridCase, pieces: usize, cap: usize) -> Result<InterpolationGrid> {
    if pieces == 0 {
        return Err(Error::Domain("pieces per generator must be at least 1".into()));
    }
    let ng = case.num_generators();
    let total = (pieces as u128).checked_pow(ng as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(Error::GridTooLarge { points: total, cap });
    }
    let centers: Vec<Vec<f64>> = case
        .generators
        .iter()
        .map(|g| {
            (1..=pieces)
                .map(|m| g.p_min + (g.p_max - g.p_min) * (2 * m - 1) as f64 / (2 * pieces) as f64)
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(total as usize);
    let mut digits = vec![0usize; ng];
    loop {
        points.push((0..ng).map(|i| centers[i][digits[i]]).collect());
        let mut pos = ng;
        loop {
            if pos == 0 {
                return Ok(InterpolationGrid { points, pieces });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < pieces {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Convex quadratic surrogate of the cost-to-go of one (stage, scenario).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticValue {
    pub stage: usize,
    pub scenario: usize,
    /// Symmetric, row-major.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticValue {
    pub fn zero(dim: usize, stage: usize, scenario: usize) -> Self {
        QuadraticValue {
            stage,
            scenario,
            a: vec![vec![0.0; dim]; dim],
            b: vec![0.0; dim],
            c: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn is_zero(&self) -> bool {
        self.c == 0.0 && self.b.iter().all(|v| *v == 0.0) && self.a.iter().flatten().all(|v| *v == 0.0)
    }

    fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.a_matrix()).eigenvalues.min()
    }

    /// Rows `Fᵢ` with `A = Σᵢ Fᵢᵀ Fᵢ`; eigenvalues at or below zero (numerical
    /// PSD defects down to −1e-8 relative) are dropped.
    pub fn factor(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        if n == 0 {
            return Ok(Vec::new());
        }
        let eig = SymmetricEigen::new(self.a_matrix());
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut rows = Vec::new();
        for (r, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda < -1e-8 * top.max(1.0) {
                return Err(Error::Domain(format!(
                    "quadratic (stage {}, scenario {}) is not convex: eigenvalue {lambda}",
                    self.stage, self.scenario
                )));
            }
            if lambda > 1e-12 * top {
                let s = lambda.sqrt();
                rows.push((0..n).map(|i| s * eig.eigenvectors[(i, r)]).collect());
            }
        }
        Ok(rows)
    }
}

/// `xᵀAx + 2Bᵀx + C`.
pub fn eval_quadratic(v: &QuadraticValue, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), v.dim());
    let mut acc = v.c;
    for (i, row) in v.a.iter().enumerate() {
        let ax: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum();
        acc += x[i] * ax + 2.0 * v.b[i] * x[i];
    }
    acc
}

/// Sampled cost-to-go values `f̂_t^{j,k}` of one stage: `values[j][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub stage: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub value: QuadraticValue,
    /// `‖fit − targets‖₂` over the grid.
    pub residual_norm: f64,
    pub max_abs_residual: f64,
}

/// Least-squares fit of a convex quadratic to `targets` sampled on `grid`.
///
/// Coordinates are centered and scaled to `[−1, 1]` per axis and targets are
/// divided by their largest magnitude before solving. The residual norm is
/// minimized through a QR reduction of the design matrix, so the cone has
/// dimension `#parameters + 2` regardless of the grid size. A second pass
/// minimizes `‖(A, B)‖` (Frobenius, scaled coordinates) over the parameters
/// whose residual is within a `1e-7` relative slack of the optimum; this
/// picks the minimum-norm minimizer when the grid underdetermines the
/// quadratic, which a small penalty weight cannot do reliably at solver
/// precision.
pub fn fit_quadratic(grid: &InterpolationGrid, targets: &[f64]) -> Result<QuadraticFit> {
    fit_quadratic_tagged(grid, targets, 0, 0)
}

pub fn fit_quadratic_tagged(
    grid: &InterpolationGrid,
    targets: &[f64],
    stage: usize,
    scenario: usize,
) -> Result<QuadraticFit> {
    if targets.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} targets for {} grid points",
            targets.len(),
            grid.len()
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("fit targets must be finite".into()));
    }
    let d = grid.dim();
    let n_quad = d * (d + 1) / 2;
    let n_params = n_quad + d + 1;

    let mut center = vec![0.0; d];
    let mut half = vec![1.0; d];
    for i in 0..d {
        let lo = grid.points().iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
        let hi = grid.points().iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        center[i] = 0.5 * (lo + hi);
        if hi > lo {
            half[i] = 0.5 * (hi - lo);
        }
    }
    let scale = targets.iter().fold(1.0_f64, |m, v| m.max(v.abs()));

    let n = grid.len();
    let mut design = DMatrix::<f64>::zeros(n, n_params);
    for (k, p) in grid.points().iter().enumerate() {
        let u: Vec<f64> = (0..d).map(|i| (p[i] - center[i]) / half[i]).collect();
        for j in 0..d {
            for i in 0..=j {
                let w = if i == j { 1.0 } else { 2.0 };
                design[(k, triu_index(i, j))] = w * u[i] * u[j];
            }
            design[(k, n_quad + j)] = 2.0 * u[j];
        }
        design[(k, n_params - 1)] = 1.0;
    }
    let rhs = DVector::from_iterator(n, targets.iter().map(|v| v / scale));

    let qr = design.qr();
    let (q, r) = (qr.q(), qr.r());
    let projected = q.transpose() * &rhs;
    let outside = (&rhs - &q * &projected).norm();

    let build = |residual_cap: Option<f64>| {
        let mut problem = ConicProblem::new();
        let theta = problem.add_vars("theta", n_params);
        let t = problem.add_var("t");
        let mut cone_rows: Vec<LinExpr> = (0..r.nrows())
            .map(|row| {
                let mut e = LinExpr::constant(-projected[row]);
                for col in 0..n_params {
                    e.add_term(theta[col], r[(row, col)]);
                }
                e
            })
            .collect();
        cone_rows.push(LinExpr::constant(outside));
        problem.soc(t, cone_rows);
        if d > 0 {
            problem.psd(d, theta[..n_quad].iter().map(|&v| v.into()).collect());
        }
        match residual_cap {
            None => problem.minimize(t),
            Some(cap) => {
                problem.le(t, cap);
                // Minimizing the norm itself rather than its square keeps
                // the tie-break accurate to solver tolerance. C stays free:
                // on a centered grid u_i² acts like a constant, so penalizing
                // C would push level into curvature.
                let norm = problem.add_var("norm");
                let mut rows = Vec::with_capacity(n_params - 1);
                for j in 0..d {
                    for i in 0..=j {
                        let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                        rows.push(LinExpr::term(theta[triu_index(i, j)], w));
                    }
                }
                rows.extend(theta[n_quad..n_params - 1].iter().map(|&v| LinExpr::from(v)));
                problem.soc(norm, rows);
                problem.minimize(norm);
            }
        }
        (problem, theta, t)
    };
    let context = || format!("quadratic fit (stage {stage}, scenario {scenario})");

    let (first, _, t) = build(None);
    let best = solve_conic_relaxing(&first, DEFAULT_TOL, RELAXED_TOL)?.into_optimal(context)?.value(t);
    let cap = best * (1.0 + FIT_RESIDUAL_SLACK) + FIT_RESIDUAL_SLACK;
    let (second, theta, _) = build(Some(cap));
    let point = solve_conic_relaxing(&second, DEFAULT_TOL, RELAXED_TOL)?.into_optimal(context)?;
    let raw = point.values(&theta);

    // Spectral projection removes the solver's residual PSD defect.
    let a_scaled = if d > 0 {
        let eig = SymmetricEigen::new(sym_from_upper(d, &raw[..n_quad]));
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
    } else {
        DMatrix::zeros(0, 0)
    };
    let b_scaled = &raw[n_quad..n_quad + d];
    let c_scaled = raw[n_params - 1];

    // Undo u = D(x − center): A = DÂD, B = DB̂ − A·center,
    // C = Ĉ + centerᵀA·center − 2(DB̂)ᵀcenter.
    let a = DMatrix::from_fn(d, d, |i, j| a_scaled[(i, j)] / (half[i] * half[j]));
    let db: Vec<f64> = (0..d).map(|i| b_scaled[i] / half[i]).collect();
    let ac: Vec<f64> = (0..d).map(|i| (0..d).map(|j| a[(i, j)] * center[j]).sum()).collect();
    let b: Vec<f64> = (0..d).map(|i| scale * (db[i] - ac[i])).collect();
    let c_quad: f64 = (0..d).map(|i| center[i] * ac[i]).sum();
    let c_lin: f64 = (0..d).map(|i| db[i] * center[i]).sum();
    let value = QuadraticValue {
        stage,
        scenario,
        a: (0..d).map(|i| (0..d).map(|j| scale * 0.5 * (a[(i, j)] + a[(j, i)])).collect()).collect(),
        b,
        c: scale * (c_scaled + c_quad - 2.0 * c_lin),
    };

    let residuals: Vec<f64> = grid
        .points()
        .iter()
        .zip(targets)
        .map(|(p, f)| eval_quadratic(&value, p) - f)
        .collect();
    Ok(QuadraticFit {
        residual_norm: residuals.iter().map(|r| r * r).sum::<f64>().sqrt(),
        max_abs_residual: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        value,
    })
}
