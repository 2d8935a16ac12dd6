//! Cross-checkpoint subspace analytics: Grassmann similarity of principal
//! subspaces before and after training, as single pairs and as top-i/top-j
//! grids for heat maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectrum;
use crate::svd::{grassmann, grassmann_from_cross, svd};

/// Which singular subspace a grid measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceSide {
    /// Column space (left singular vectors).
    Left,
    /// Row space (right singular vectors).
    Right,
}

/// Dense grid of similarities `psi(i, j)` between the top-i subspace of one
/// matrix and the top-j subspace of another.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityGrid {
    pub label_a: String,
    pub label_b: String,
    pub side: SubspaceSide,
    /// `values[i - 1][j - 1] = psi(i, j)`.
    pub values: Vec<Vec<f64>>,
}

impl SimilarityGrid {
    pub fn max_i(&self) -> usize {
        self.values.len()
    }

    pub fn max_j(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }

    /// CSV with columns `i,j,psi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,psi\n");
        for (i, row) in self.values.iter().enumerate() {
            for (j, psi) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", i + 1, j + 1, crate::report::fmt_real(*psi)));
            }
        }
        out
    }
}

/// Similarity of the principal subspaces of two same-shaped matrices.
///
/// Both are decomposed; `k` comes from the retention threshold applied to
/// the *before* spectrum (the pre-trained side anchors the subspace
/// dimension). Returns `(psi_left, psi_right)` over the top-k bases.
pub fn subspace_similarity(
    w_before: &Matrix,
    w_after: &Matrix,
    retention: f64,
) -> Result<(f64, f64)> {
    if w_before.shape() != w_after.shape() {
        return Err(Error::ShapeMismatch {
            context: "subspace_similarity".into(),
            lhs_rows: w_before.rows(),
            lhs_cols: w_before.cols(),
            rhs_rows: w_after.rows(),
            rhs_cols: w_after.cols(),
        });
    }
    let fa = svd(w_before)?;
    let fb = svd(w_after)?;
    let profile = spectrum::energy_profile(&fa.sigma)?;
    if fb.sigma.iter().all(|s| *s == 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let k = spectrum::select_rank(&profile, retention)?;
    let psi_u = grassmann(&fa.u, &fb.u, k, k)?;
    let psi_v = grassmann(&fa.vt.transpose(), &fb.vt.transpose(), k, k)?;
    Ok((psi_u, psi_v))
}

/// Full `psi(i, j)` grid over one side's singular bases, `i <= max_i`,
/// `j <= max_j`. Every cell matches an independent [`grassmann`] call on the
/// same bases exactly.
pub fn similarity_grid(
    w_before: &Matrix,
    w_after: &Matrix,
    max_i: usize,
    max_j: usize,
    side: SubspaceSide,
) -> Result<SimilarityGrid> {
    if w_before.shape() != w_after.shape() {
        return Err(Error::ShapeMismatch {
            context: "similarity_grid".into(),
            lhs_rows: w_before.rows(),
            lhs_cols: w_before.cols(),
            rhs_rows: w_after.rows(),
            rhs_cols: w_after.cols(),
        });
    }
    let p = w_before.rows().min(w_before.cols());
    if max_i == 0 || max_j == 0 || max_i > p || max_j > p {
        return Err(Error::InvalidArgument(format!(
            "grid bounds (max_i={max_i}, max_j={max_j}) out of range 1..={p}"
        )));
    }
    let fa = svd(w_before)?;
    let fb = svd(w_after)?;
    let (basis_a, basis_b) = match side {
        SubspaceSide::Left => (fa.u, fb.u),
        SubspaceSide::Right => (fa.vt.transpose(), fb.vt.transpose()),
    };
    // One cross-product; each cell sums its leading block in the same order
    // as the single-pair route, so the values agree bit for bit.
    let cross = basis_a.take_cols(max_i)?.transpose().matmul(&basis_b.take_cols(max_j)?)?;
    let mut values = Vec::with_capacity(max_i);
    for i in 1..=max_i {
        let mut row = Vec::with_capacity(max_j);
        for j in 1..=max_j {
            row.push(grassmann_from_cross(&cross, i, j)?);
        }
        values.push(row);
    }
    Ok(SimilarityGrid {
        label_a: "before".into(),
        label_b: "after".into(),
        side,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor;
    use crate::svd::test_support::{random_matrix, random_orthogonal};

    #[test]
    fn identical_matrices_give_unit_similarity() {
        let w = random_matrix(12, 9, 7);
        let (pu, pv) = subspace_similarity(&w, &w, 0.95).unwrap();
        assert!((pu - 1.0).abs() < 1e-12);
        assert!((pv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn core_update_preserves_similarity() {
        // w_after = U S' V^T for a full-rank core S' on the retained bases.
        let w = random_matrix(14, 10, 11);
        let mut factors = factor::factorize(&w, 0.95, 0.95).unwrap();
        let k = factors.selection.k_beta;
        factors.s_core = random_matrix(k, k, 12)
            .add(&Matrix::from_diag(&vec![2.5; k]))
            .unwrap();
        let w_after = factors.effective_weight().unwrap();
        let (pu, pv) = subspace_similarity(&w, &w_after, 0.95).unwrap();
        assert!((pu - 1.0).abs() <= 1e-8, "psi_u = {pu}");
        assert!((pv - 1.0).abs() <= 1e-8, "psi_v = {pv}");
    }

    #[test]
    fn independent_matrices_sit_near_chance_level() {
        // For random k-dim subspaces of R^n the expected similarity is about
        // k/n; check the Monte-Carlo mean over 50 pairs.
        let n = 40;
        let retention = 0.35; // selects a small k on these spectra
        let mut sum = 0.0;
        let mut k_over_n = 0.0;
        let trials = 50;
        for t in 0..trials {
            let a = random_matrix(n, n, 900 + t);
            let b = random_matrix(n, n, 5000 + t);
            let fa = svd(&a).unwrap();
            let profile = spectrum::energy_profile(&fa.sigma).unwrap();
            let k = spectrum::select_rank(&profile, retention).unwrap();
            let (pu, _) = subspace_similarity(&a, &b, retention).unwrap();
            sum += pu;
            k_over_n += k as f64 / n as f64;
        }
        let mean = sum / trials as f64;
        let expected = k_over_n / trials as f64;
        assert!(expected < 0.6, "retention picked too large a k: {expected}");
        assert!(
            (mean - expected).abs() < 0.1,
            "mean {mean} vs expected {expected}"
        );
        assert!(mean < 0.75, "independent subspaces should be far from 1");
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let w = random_matrix(8, 8, 21);
        let z = Matrix::zeros(8, 8);
        assert!(subspace_similarity(&z, &w, 0.9).is_err());
        assert!(subspace_similarity(&w, &z, 0.9).is_err());
    }

    #[test]
    fn grid_of_identical_inputs_is_all_ones() {
        let w = random_matrix(10, 8, 23);
        let grid = similarity_grid(&w, &w, 6, 6, SubspaceSide::Left).unwrap();
        for row in &grid.values {
            for psi in row {
                assert!((psi - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_cells_match_single_pair_calls_exactly() {
        let a = random_matrix(12, 10, 29);
        let b = random_matrix(12, 10, 31);
        for side in [SubspaceSide::Left, SubspaceSide::Right] {
            let grid = similarity_grid(&a, &b, 5, 4, side).unwrap();
            let fa = svd(&a).unwrap();
            let fb = svd(&b).unwrap();
            let (ba, bb) = match side {
                SubspaceSide::Left => (fa.u, fb.u),
                SubspaceSide::Right => (fa.vt.transpose(), fb.vt.transpose()),
            };
            for i in 1..=5 {
                for j in 1..=4 {
                    let single = grassmann(&ba, &bb, i, j).unwrap();
                    assert_eq!(
                        grid.values[i - 1][j - 1].to_bits(),
                        single.to_bits(),
                        "cell ({i}, {j}) side {side:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_cell_one_one_matches_subspace_similarity_at_k1() {
        // Pick matrices whose top singular value dominates so retention
        // selects k = 1.
        let a = random_matrix(9, 9, 37);
        let b = random_matrix(9, 9, 41);
        let fa = svd(&a).unwrap();
        let profile = spectrum::energy_profile(&fa.sigma).unwrap();
        let tiny = profile.retained_fraction(1) * 0.5;
        let k = spectrum::select_rank(&profile, tiny).unwrap();
        assert_eq!(k, 1);
        let (pu, pv) = subspace_similarity(&a, &b, tiny).unwrap();
        let gu = similarity_grid(&a, &b, 1, 1, SubspaceSide::Left).unwrap();
        let gv = similarity_grid(&a, &b, 1, 1, SubspaceSide::Right).unwrap();
        assert_eq!(gu.values[0][0].to_bits(), pu.to_bits());
        assert_eq!(gv.values[0][0].to_bits(), pv.to_bits());
    }

    #[test]
    fn grid_invariant_under_orthogonal_basis_change() {
        // Rotating a matrix inside its own subspaces changes the bases but
        // not their spans; every grid cell built from the spans must match.
        let a = random_matrix(10, 10, 43);
        let fa = svd(&a).unwrap();
        let rot = random_orthogonal(4, 47);
        let q = fa.u.take_cols(4).unwrap();
        let q_rot = q.matmul(&rot).unwrap();
        for k in 1..=4 {
            let direct = grassmann(&q, &q.take_cols(k).unwrap(), 4, k).unwrap();
            let rotated = grassmann(&q_rot, &q.take_cols(k).unwrap(), 4, k).unwrap();
            assert!((direct - rotated).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_bounds_checked() {
        let a = random_matrix(6, 5, 53);
        assert!(similarity_grid(&a, &a, 0, 3, SubspaceSide::Left).is_err());
        assert!(similarity_grid(&a, &a, 3, 9, SubspaceSide::Left).is_err());
    }

    #[test]
    fn grid_csv_shape() {
        let a = random_matrix(6, 5, 59);
        let grid = similarity_grid(&a, &a, 2, 3, SubspaceSide::Left).unwrap();
        let csv = grid.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.starts_with("i,j,psi\n"));
    }
}
