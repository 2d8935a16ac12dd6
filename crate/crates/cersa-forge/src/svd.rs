//! Singular value decomposition, truncation, and Grassmann subspace
//! similarity.
//!
//! The decomposition is a one-sided Jacobi (Hestenes) iteration: plane
//! rotations orthogonalize the columns of the working matrix, the right
//! rotations accumulate into V, and the singular values are the final column
//! norms. A column pair counts as converged when
//! `|<g_p, g_q>| <= 1e-12 * ||g_p|| * ||g_q||`, which bounds the
//! orthonormality residual of U directly. Matrices with more columns than
//! rows are handled by decomposing the transpose and swapping the factors.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative off-diagonal tolerance for Jacobi convergence.
const JACOBI_TOL: f64 = 1e-12;
/// Sweep cap; typical random matrices converge in well under ten sweeps.
const MAX_SWEEPS: usize = 30;
/// Orthonormality acceptance for externally supplied bases (`grassmann`),
/// scaled by the subspace dimension.
const ORTHO_TOL_PER_COL: f64 = 1e-8;

/// Thin SVD `a = u * diag(sigma) * vt` with `p = min(rows, cols)`.
///
/// Invariants on construction: `sigma` descending and non-negative,
/// `u` (rows x p) has orthonormal columns, `vt` (p x cols) has orthonormal
/// rows, and each left singular vector is signed so its largest-magnitude
/// entry is positive.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdFactors {
    pub fn rank_len(&self) -> usize {
        self.sigma.len()
    }

    /// Multiply the factors back together: `u * diag(sigma) * vt`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let scaled = self.vt.scale_rows(&self.sigma)?;
        self.u.matmul(&scaled)
    }

    /// Keep the top `k` singular triplets.
    ///
    /// The discarded reconstruction error is exactly
    /// `sqrt(sum of the dropped sigma^2)` (best rank-k approximation in the
    /// Frobenius norm).
    pub fn truncate(&self, k: usize) -> Result<SvdFactors> {
        if k == 0 || k > self.sigma.len() {
            return Err(Error::InvalidArgument(format!(
                "truncate: k = {k} out of range 1..={}",
                self.sigma.len()
            )));
        }
        Ok(SvdFactors {
            u: self.u.take_cols(k)?,
            sigma: self.sigma[..k].to_vec(),
            vt: self.vt.take_rows(k)?,
        })
    }
}

/// Decompose `a` into thin SVD factors.
///
/// Errors on non-finite input and on failure to converge within the sweep
/// cap (the error carries the residual). An all-zero matrix yields all-zero
/// singular values with identity-block bases.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows() >= a.cols() {
        let (u, sigma, v) = jacobi_tall(a)?;
        let mut f = SvdFactors { u, sigma, vt: v.transpose() };
        apply_sign_convention(&mut f);
        Ok(f)
    } else {
        let (u, sigma, v) = jacobi_tall(&a.transpose())?;
        // a^T = u S v^T  =>  a = v S u^T
        let mut f = SvdFactors { u: v, sigma, vt: u.transpose() };
        apply_sign_convention(&mut f);
        Ok(f)
    }
}

/// One-sided Jacobi on a tall matrix (rows >= cols). Returns (u, sigma, v)
/// with `b = u * diag(sigma) * v^T`, sigma descending.
fn jacobi_tall(b: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let m = b.rows();
    let n = b.cols();
    debug_assert!(m >= n);

    let mut g = b.clone();
    let mut v = Matrix::identity(n);
    let mut residual = 0.0f64;
    let mut converged = false;

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        residual = 0.0;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (app, aqq, apq) = column_moments(&g, p, q);
                let denom = (app * aqq).sqrt();
                if denom == 0.0 {
                    continue; // at least one zero column; nothing to rotate
                }
                let rel = apq.abs() / denom;
                residual = residual.max(rel);
                if rel <= JACOBI_TOL {
                    continue;
                }
                // Jacobi rotation diagonalizing [[app, apq], [apq, aqq]].
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut g, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        // One clean pass to report how far from column orthogonality we are.
        let mut worst = 0.0f64;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (app, aqq, apq) = column_moments(&g, p, q);
                let denom = (app * aqq).sqrt();
                if denom > 0.0 {
                    worst = worst.max(apq.abs() / denom);
                }
            }
        }
        return Err(Error::SvdConvergence {
            sweeps: MAX_SWEEPS,
            residual: worst.max(residual),
        });
    }

    // Column norms are the singular values; sort descending.
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| g.get(i, j) * g.get(i, j)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = Matrix::zeros(m, n);
    let mut zero_cols = Vec::new();
    for (jj, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            for i in 0..m {
                u.set(i, jj, g.get(i, j) / norms[j]);
            }
        } else {
            zero_cols.push(jj);
        }
    }
    if !zero_cols.is_empty() {
        complete_basis(&mut u, &zero_cols);
    }

    let mut v_sorted = Matrix::zeros(n, n);
    for (jj, &j) in order.iter().enumerate() {
        for i in 0..n {
            v_sorted.set(i, jj, v.get(i, j));
        }
    }
    Ok((u, sigma, v_sorted))
}

fn column_moments(g: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
    for i in 0..g.rows() {
        let gp = g.get(i, p);
        let gq = g.get(i, q);
        app += gp * gp;
        aqq += gq * gq;
        apq += gp * gq;
    }
    (app, aqq, apq)
}

fn rotate_columns(mtx: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..mtx.rows() {
        let vp = mtx.get(i, p);
        let vq = mtx.get(i, q);
        mtx.set(i, p, c * vp - s * vq);
        mtx.set(i, q, s * vp + c * vq);
    }
}

/// Fill the listed zero columns of `u` with vectors orthonormal to every
/// other column. Candidates are standard basis vectors, re-orthogonalized
/// with two modified Gram-Schmidt passes; a candidate is accepted when its
/// residual keeps more than half its mass outside the existing span.
fn complete_basis(u: &mut Matrix, zero_cols: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    let mut next_candidate = 0usize;
    for &col in zero_cols {
        while next_candidate < m {
            let mut vec: Vec<f64> = (0..m)
                .map(|i| if i == next_candidate { 1.0 } else { 0.0 })
                .collect();
            next_candidate += 1;
            for _pass in 0..2 {
                for j in 0..n {
                    if j == col {
                        continue; // still-empty columns are zero and contribute nothing
                    }
                    let dot: f64 = (0..m).map(|i| vec[i] * u.get(i, j)).sum();
                    for (i, vi) in vec.iter_mut().enumerate() {
                        *vi -= dot * u.get(i, j);
                    }
                }
            }
            let norm_sq: f64 = vec.iter().map(|v| v * v).sum();
            if norm_sq > 0.5 {
                let norm = norm_sq.sqrt();
                for (i, vi) in vec.iter().enumerate() {
                    u.set(i, col, vi / norm);
                }
                break;
            }
        }
    }
}

/// Deterministic signs: the largest-magnitude entry of each left singular
/// vector is made positive, with the matching row of vt flipped to
/// compensate.
fn apply_sign_convention(f: &mut SvdFactors) {
    let p = f.sigma.len();
    for j in 0..p {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..f.u.rows() {
            let a = f.u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if f.u.get(best, j) < 0.0 {
            for i in 0..f.u.rows() {
                let v = f.u.get(i, j);
                f.u.set(i, j, -v);
            }
            for c in 0..f.vt.cols() {
                let v = f.vt.get(j, c);
                f.vt.set(j, c, -v);
            }
        }
    }
}

/// `||Q_k^T Q_k - I||_F` over the leading `k` columns of `q`.
pub fn orthonormality_residual(q: &Matrix, k: usize) -> f64 {
    let mut sum = 0.0;
    for a in 0..k {
        for b in 0..k {
            let dot: f64 = (0..q.rows()).map(|i| q.get(i, a) * q.get(i, b)).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            sum += (dot - target) * (dot - target);
        }
    }
    sum.sqrt()
}

fn check_orthonormal(q: &Matrix, k: usize, context: &str) -> Result<()> {
    let residual = orthonormality_residual(q, k);
    let tolerance = ORTHO_TOL_PER_COL * k as f64;
    if residual > tolerance {
        return Err(Error::NotOrthonormal { residual, tolerance }.for_layer(context.to_string()));
    }
    Ok(())
}

/// Grassmann subspace similarity between the spans of the top-`i` columns of
/// `u_a` and the top-`j` columns of `u_b`:
///
/// `psi = ||(U_A top-i)^T (U_B top-j)||_F^2 / min(i, j)`, in `[0, 1]`.
///
/// 1 means one span contains the other; 0 means they are orthogonal.
/// Inputs must have orthonormal columns (checked). Values overshooting 1 by
/// round-off up to 1e-12 are clamped; anything beyond that is an error.
pub fn grassmann(u_a: &Matrix, u_b: &Matrix, i: usize, j: usize) -> Result<f64> {
    if u_a.rows() != u_b.rows() {
        return Err(Error::ShapeMismatch {
            context: "grassmann".into(),
            lhs_rows: u_a.rows(),
            lhs_cols: u_a.cols(),
            rhs_rows: u_b.rows(),
            rhs_cols: u_b.cols(),
        });
    }
    if i == 0 || j == 0 || i > u_a.cols() || j > u_b.cols() {
        return Err(Error::InvalidArgument(format!(
            "grassmann: subspace sizes (i={i}, j={j}) out of range for {} and {} columns",
            u_a.cols(),
            u_b.cols()
        )));
    }
    check_orthonormal(u_a, i, "grassmann lhs")?;
    check_orthonormal(u_b, j, "grassmann rhs")?;

    let mut cross_sq = 0.0;
    for a in 0..i {
        for b in 0..j {
            let dot: f64 = (0..u_a.rows()).map(|r| u_a.get(r, a) * u_b.get(r, b)).sum();
            cross_sq += dot * dot;
        }
    }
    let psi = cross_sq / i.min(j) as f64;
    clamp_psi(psi)
}

/// Same similarity, computed from a precomputed cross-product `c = U_A^T U_B`
/// restricted to its leading `i x j` block. Summation order matches
/// [`grassmann`], so the two routes agree bit for bit on identical inputs.
pub(crate) fn grassmann_from_cross(cross: &Matrix, i: usize, j: usize) -> Result<f64> {
    let mut cross_sq = 0.0;
    for a in 0..i {
        for b in 0..j {
            let v = cross.get(a, b);
            cross_sq += v * v;
        }
    }
    clamp_psi(cross_sq / i.min(j) as f64)
}

fn clamp_psi(psi: f64) -> Result<f64> {
    if psi > 1.0 + 1e-12 {
        return Err(Error::NotOrthonormal {
            residual: psi - 1.0,
            tolerance: 1e-12,
        });
    }
    Ok(psi.clamp(0.0, 1.0))
}
