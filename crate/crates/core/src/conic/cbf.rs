//! Conic Benchmark Format (CBF, version 3) writer for cross-checking problems
//! with external solvers.
//!
//! Layout: every variable is free (`F`). Scalar constraints come first as
//! `L=` and `L-` blocks, followed by one `Q` block per second-order cone;
//! PSD constraints go to `PSDCON` with their coefficients in `HCOORD`/`DCOORD`.
//! CBF has no quadratic objective, so a quadratic term `xᵀWx` is moved into
//! an epigraph variable `τ ≥ xᵀWx` expressed as a second-order cone.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use super::{triu_index, ConicProblem, Constraint, LinExpr, Var};

pub fn write_cbf<W: Write>(problem: &ConicProblem, mut out: W) -> io::Result<()> {
    let problem = lift_quadratic(problem);
    let n = problem.num_vars();

    let scalar: Vec<(&LinExpr, &str)> = problem
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::Zero(e) => Some((e, "L=")),
            Constraint::NonPositive(e) => Some((e, "L-")),
            _ => None,
        })
        .collect();
    let socs: Vec<&Vec<LinExpr>> = problem
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::SecondOrder(rows) => Some(rows),
            _ => None,
        })
        .collect();
    let psds: Vec<(usize, &Vec<LinExpr>)> = problem
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::Psd { dim, upper } => Some((*dim, upper)),
            _ => None,
        })
        .collect();

    // Consecutive scalar rows of the same kind share a cone block.
    let mut blocks: Vec<(&str, usize)> = Vec::new();
    for &(_, kind) in &scalar {
        match blocks.last_mut() {
            Some((k, count)) if *k == kind => *count += 1,
            _ => blocks.push((kind, 1)),
        }
    }
    for rows in &socs {
        blocks.push(("Q", rows.len()));
    }
    let row_exprs: Vec<&LinExpr> = scalar
        .iter()
        .map(|(e, _)| *e)
        .chain(socs.iter().flat_map(|rows| rows.iter()))
        .collect();

    writeln!(out, "# variables: {}", n)?;
    writeln!(out, "VER\n3\n")?;
    writeln!(out, "OBJSENSE\nMIN\n")?;
    writeln!(out, "VAR\n{} 1\nF {}\n", n, n)?;

    if !row_exprs.is_empty() {
        writeln!(out, "CON\n{} {}", row_exprs.len(), blocks.len())?;
        for (kind, count) in &blocks {
            writeln!(out, "{kind} {count}")?;
        }
        writeln!(out)?;
    }
    if !psds.is_empty() {
        writeln!(out, "PSDCON\n{}", psds.len())?;
        for (dim, _) in &psds {
            writeln!(out, "{dim}")?;
        }
        writeln!(out)?;
    }

    let obj = merged(problem.objective());
    if !obj.is_empty() {
        writeln!(out, "OBJACOORD\n{}", obj.len())?;
        for (j, c) in &obj {
            writeln!(out, "{j} {c:e}")?;
        }
        writeln!(out)?;
    }
    if problem.objective().constant != 0.0 {
        writeln!(out, "OBJBCOORD\n{:e}\n", problem.objective().constant)?;
    }

    let mut acoord = Vec::new();
    let mut bcoord = Vec::new();
    for (i, e) in row_exprs.iter().enumerate() {
        for (j, c) in merged(e) {
            acoord.push((i, j, c));
        }
        if e.constant != 0.0 {
            bcoord.push((i, e.constant));
        }
    }
    if !acoord.is_empty() {
        writeln!(out, "ACOORD\n{}", acoord.len())?;
        for (i, j, c) in &acoord {
            writeln!(out, "{i} {j} {c:e}")?;
        }
        writeln!(out)?;
    }
    if !bcoord.is_empty() {
        writeln!(out, "BCOORD\n{}", bcoord.len())?;
        for (i, b) in &bcoord {
            writeln!(out, "{i} {b:e}")?;
        }
        writeln!(out)?;
    }

    let mut hcoord = Vec::new();
    let mut dcoord = Vec::new();
    for (p, (dim, upper)) in psds.iter().enumerate() {
        for col in 0..*dim {
            for row in 0..=col {
                // CBF wants lower-triangular (k ≥ l) coordinates.
                let e = &upper[triu_index(row, col)];
                for (j, c) in merged(e) {
                    hcoord.push((p, j, col, row, c));
                }
                if e.constant != 0.0 {
                    dcoord.push((p, col, row, e.constant));
                }
            }
        }
    }
    if !hcoord.is_empty() {
        writeln!(out, "HCOORD\n{}", hcoord.len())?;
        for (p, j, k, l, c) in &hcoord {
            writeln!(out, "{p} {j} {k} {l} {c:e}")?;
        }
        writeln!(out)?;
    }
    if !dcoord.is_empty() {
        writeln!(out, "DCOORD\n{}", dcoord.len())?;
        for (p, k, l, c) in &dcoord {
            writeln!(out, "{p} {k} {l} {c:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn merged(e: &LinExpr) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for &(v, c) in &e.terms {
        *acc.entry(v.index()).or_default() += c;
    }
    acc.into_iter().filter(|&(_, c)| c != 0.0).collect()
}

fn lift_quadratic(problem: &ConicProblem) -> ConicProblem {
    let mut lifted = problem.clone();
    if problem.quadratic_terms().is_empty() {
        return lifted;
    }
    let mut involved: Vec<Var> = problem
        .quadratic_terms()
        .iter()
        .flat_map(|&(a, b, _)| [a, b])
        .collect();
    involved.sort();
    involved.dedup();
    let pos = |v: Var| involved.binary_search(&v).unwrap();

    let k = involved.len();
    let mut w = DMatrix::<f64>::zeros(k, k);
    for &(a, b, c) in problem.quadratic_terms() {
        let (i, j) = (pos(a), pos(b));
        if i == j {
            w[(i, i)] += c;
        } else {
            w[(i, j)] += 0.5 * c;
            w[(j, i)] += 0.5 * c;
        }
    }
    let eig = SymmetricEigen::new(w);
    let mut factors = Vec::new();
    for (r, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 0.0 {
            let s = lambda.sqrt();
            let mut e = LinExpr::zero();
            for (i, &v) in involved.iter().enumerate() {
                e.add_term(v, s * eig.eigenvectors[(i, r)]);
            }
            factors.push(e);
        }
    }
    lifted.quadratic.clear();
    let tau = lifted.add_var("quad_epigraph");
    lifted.minimize(tau);
    lifted.squared_norm_le(factors, tau.into());
    lifted
}
