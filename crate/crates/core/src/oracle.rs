//! Brute-force verifiers: complementary-pattern enumeration for small LCPs,
//! central-difference Jacobians and a grid probe of small solution sets.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, SviError};
use crate::model::{SviProblem, TwoStageSlcp};
use crate::scenario::Policy;

/// Largest LCP dimension accepted by [`lcp_enumerate`].
pub const ENUMERATION_LIMIT: usize = 14;
const FEASIBILITY_TOL: f64 = 1e-10;
const DEDUP_TOL: f64 = 1e-8;
const PIVOT_RATIO: f64 = 1e-13;

/// Result of a pattern enumeration.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub solutions: Vec<DVector<f64>>,
    /// Patterns whose principal submatrix was numerically singular and were skipped.
    pub singular_patterns: Vec<u32>,
}

/// All solutions of `0 ≤ x ⊥ Mx + q ≥ 0` by trying each of the `2^n` active sets.
pub fn lcp_enumerate(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    Ok(lcp_enumerate_detailed(m, q)?.solutions)
}

pub fn lcp_enumerate_detailed(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<Enumeration> {
    let n = q.len();
    if m.nrows() != n || m.ncols() != n {
        return Err(SviError::Dimension(format!("LCP with a {}x{} matrix and q of length {n}", m.nrows(), m.ncols())));
    }
    if n > ENUMERATION_LIMIT {
        return Err(SviError::TooLarge { dim: n, limit: ENUMERATION_LIMIT });
    }
    let mut solutions: Vec<DVector<f64>> = Vec::new();
    let mut singular_patterns = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let active: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut x = DVector::zeros(n);
        if !active.is_empty() {
            let k = active.len();
            let sub = DMatrix::from_fn(k, k, |a, b| m[(active[a], active[b])]);
            let rhs = DVector::from_fn(k, |a, _| -q[active[a]]);
            let lu = sub.lu();
            let u = lu.u();
            let scale = u.diagonal().iter().fold(0.0_f64, |s, v| s.max(v.abs()));
            let smallest = u.diagonal().iter().fold(f64::INFINITY, |s, v| s.min(v.abs()));
            if scale == 0.0 || smallest <= PIVOT_RATIO * scale {
                singular_patterns.push(mask);
                continue;
            }
            let Some(xb) = lu.solve(&rhs) else {
                singular_patterns.push(mask);
                continue;
            };
            if xb.iter().any(|v| *v < -FEASIBILITY_TOL || !v.is_finite()) {
                continue;
            }
            for (a, &i) in active.iter().enumerate() {
                x[i] = xb[a].max(0.0);
            }
        }
        let slack = m * &x + q;
        if (0..n).any(|i| mask & (1 << i) == 0 && slack[i] < -FEASIBILITY_TOL) {
            continue;
        }
        if !solutions.iter().any(|s| (s - &x).amax() <= DEDUP_TOL) {
            solutions.push(x);
        }
    }
    Ok(Enumeration { solutions, singular_patterns })
}

/// The expectation-aggregated two-stage system as one LCP in `(x1, x2(ξ¹), …, x2(ξᴶ))`:
/// first-stage rows are probability-weighted sums of the scenario rows.
pub fn aggregated_lcp(slcp: &TwoStageSlcp) -> (DMatrix<f64>, DVector<f64>) {
    let (n1, n2, j) = (slcp.n1(), slcp.n2(), slcp.scenarios());
    let dim = n1 + j * n2;
    let mut big = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..j {
        let p = slcp.probabilities()[i];
        let m = slcp.matrix(i);
        let q = slcp.vector(i);
        let off = n1 + i * n2;
        for r in 0..n1 {
            rhs[r] += p * q[r];
            for c in 0..n1 {
                big[(r, c)] += p * m[(r, c)];
            }
            for c in 0..n2 {
                big[(r, off + c)] += p * m[(r, n1 + c)];
            }
        }
        for r in 0..n2 {
            rhs[off + r] = q[n1 + r];
            for c in 0..n1 {
                big[(off + r, c)] = m[(n1 + r, c)];
            }
            for c in 0..n2 {
                big[(off + r, off + c)] = m[(n1 + r, n1 + c)];
            }
        }
    }
    (big, rhs)
}

/// Every solution of the aggregated two-stage system, as nonanticipative policies.
pub fn extensive_slcp_oracle(slcp: &TwoStageSlcp) -> Result<Vec<Policy>> {
    let (n1, n2, j) = (slcp.n1(), slcp.n2(), slcp.scenarios());
    let (m, q) = aggregated_lcp(slcp);
    let sols = lcp_enumerate(&m, &q)?;
    sols.iter()
        .map(|z| {
            let mut x = Policy::zeros(j, n1 + n2);
            for i in 0..j {
                let row = x.row_mut(i);
                row[..n1].copy_from_slice(&z.as_slice()[..n1]);
                row[n1..].copy_from_slice(&z.as_slice()[n1 + i * n2..n1 + (i + 1) * n2]);
            }
            Ok(x)
        })
        .collect()
}

/// Central-difference Jacobian with column step `h·(1 + |x_j|)`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut z = x.to_vec();
    for c in 0..n {
        let step = h * (1.0 + x[c].abs());
        z[c] = x[c] + step;
        let plus = f(&z);
        z[c] = x[c] - step;
        let minus = f(&z);
        z[c] = x[c];
        for r in 0..m {
            let d = (plus[r] - minus[r]) / (2.0 * step);
            if !d.is_finite() {
                return Err(SviError::InvalidParameter(format!(
                    "non-finite difference quotient in column {c}"
                )));
            }
            jac[(r, c)] = d;
        }
    }
    Ok(jac)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    /// Grid points (in nonanticipative coordinates) with residual within tolerance.
    pub points: Vec<Vec<f64>>,
    pub nonempty: bool,
    pub diameter: f64,
    /// Midpoints of found pairs also solve within twice the tolerance.
    pub midpoint_convex: bool,
    pub grid_size: usize,
}

/// Scans a grid over `C ∩ N` for points whose natural-map residual is at most
/// `tol`. Only for problems whose nonanticipative subspace has dimension ≤ 2.
pub fn solution_set_probe(problem: &SviProblem, grid_radius: f64, grid_step: f64, tol: f64) -> Result<ProbeReport> {
    let space = problem.space();
    if space.iso_dim() > 2 {
        return Err(SviError::TooLarge { dim: space.iso_dim(), limit: 2 });
    }
    if !(grid_step > 0.0) || !(grid_radius >= 0.0) {
        return Err(SviError::InvalidParameter("grid step must be positive and radius nonnegative".into()));
    }
    // free coordinates of N: one per (stage, group, component)
    let mut coords: Vec<(Vec<usize>, usize)> = Vec::new();
    for k in 0..space.stages() {
        for g in space.groups(k) {
            for col in space.stage_range(k) {
                coords.push((g.to_vec(), col));
            }
        }
    }
    let ticks = (2.0 * grid_radius / grid_step).round() as usize + 1;
    let axis: Vec<f64> = (0..ticks).map(|t| -grid_radius + t as f64 * grid_step).collect();
    let total = axis.len().pow(coords.len() as u32);
    if total == 0 {
        return Err(SviError::InvalidParameter("empty grid".into()));
    }
    let build = |vals: &[f64]| {
        let mut x = Policy::zeros_like(space);
        for ((members, col), v) in coords.iter().zip(vals) {
            for &i in members {
                x.set(i, *col, *v);
            }
        }
        x
    };
    let feasible = |x: &Policy| (0..space.scenarios()).all(|i| problem.set(i).contains(x.row(i), 0.0));
    let mut points = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let vals: Vec<f64> = (0..coords.len())
            .map(|_| {
                let v = axis[rem % axis.len()];
                rem /= axis.len();
                v
            })
            .collect();
        let x = build(&vals);
        if feasible(&x) && problem.basic_residual(&x)? <= tol {
            points.push(vals);
        }
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let mut diameter = 0.0_f64;
    let mut midpoint_convex = true;
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            diameter = diameter.max(dist(&points[a], &points[b]));
            let mid: Vec<f64> = points[a].iter().zip(&points[b]).map(|(u, v)| 0.5 * (u + v)).collect();
            if problem.basic_residual(&build(&mid))? > 2.0 * tol {
                midpoint_convex = false;
            }
        }
    }
    Ok(ProbeReport {
        nonempty: !points.is_empty(),
        points,
        diameter,
        midpoint_convex,
        grid_size: total,
    })
}
