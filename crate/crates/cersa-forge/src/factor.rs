//! Three-region factorization of a weight matrix.
//!
//! A weight `w` is decomposed by SVD and its spectrum split at `k_beta` and
//! `k_alpha`: the top block becomes a dense trainable core initialized with
//! the top singular values on its diagonal, the middle block stays as a
//! frozen diagonal, and everything past `k_alpha` is dropped outright. The
//! retained bases `u_p`/`v_pt` are frozen; training only ever rewrites the
//! core, so the retained input/output subspaces cannot drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectrum::{self, RankSelection};
use crate::svd::{grassmann, svd};

/// Where the trainable core sits inside the retained block.
///
/// `Top` is the standard layout (core over the leading singular values).
/// `Bottom` places the core over the trailing `k_beta` retained values while
/// freezing the leading diagonal — the counterpart used by the top-vs-bottom
/// ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorePlacement {
    Top,
    Bottom,
}

/// Frozen bases plus the trainable core and frozen middle diagonal.
#[derive(Debug, Clone)]
pub struct CersaFactors {
    /// Frozen left basis, `m x k_alpha`, orthonormal columns.
    pub u_p: Matrix,
    /// Frozen right basis (transposed), `k_alpha x n`, orthonormal rows.
    pub v_pt: Matrix,
    /// Trainable `k_beta x k_beta` core. At construction its diagonal holds
    /// the singular values of the trainable block and off-diagonals are zero.
    pub s_core: Matrix,
    /// Frozen diagonal of the non-trainable retained block,
    /// length `k_alpha - k_beta`, descending.
    pub sigma_frozen: Vec<f64>,
    pub selection: RankSelection,
    pub placement: CorePlacement,
}

impl CersaFactors {
    pub fn out_dim(&self) -> usize {
        self.u_p.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.v_pt.cols()
    }

    /// Assemble the `k_alpha x k_alpha` block-diagonal middle factor from the
    /// core and the frozen diagonal, respecting the placement.
    pub fn block_diagonal(&self) -> Matrix {
        let k_alpha = self.selection.k_alpha;
        let k_beta = self.selection.k_beta;
        let core_offset = match self.placement {
            CorePlacement::Top => 0,
            CorePlacement::Bottom => k_alpha - k_beta,
        };
        let frozen_offset = match self.placement {
            CorePlacement::Top => k_beta,
            CorePlacement::Bottom => 0,
        };
        let mut block = Matrix::zeros(k_alpha, k_alpha);
        for r in 0..k_beta {
            for c in 0..k_beta {
                block.set(core_offset + r, core_offset + c, self.s_core.get(r, c));
            }
        }
        for (i, s) in self.sigma_frozen.iter().enumerate() {
            block.set(frozen_offset + i, frozen_offset + i, *s);
        }
        block
    }

    /// Dense reconstruction `u_p * blockdiag * v_pt`.
    pub fn effective_weight(&self) -> Result<Matrix> {
        effective_weight(self)
    }
}

/// Factorize `w` into the three regions chosen by `(alpha, beta)`.
///
/// The reconstruction error at construction is exactly the energy of the
/// discarded tail, `sqrt(sum of sigma_i^2 for i > k_alpha)`.
pub fn factorize(w: &Matrix, alpha: f64, beta: f64) -> Result<CersaFactors> {
    let f = svd(w)?;
    let profile = spectrum::energy_profile(&f.sigma)?;
    let selection = spectrum::make_selection(&profile, alpha, beta)?;
    build_factors(&f, selection, CorePlacement::Top)
}

fn build_factors(
    f: &crate::svd::SvdFactors,
    selection: RankSelection,
    placement: CorePlacement,
) -> Result<CersaFactors> {
    let k_alpha = selection.k_alpha;
    let k_beta = selection.k_beta;
    let u_p = f.u.take_cols(k_alpha)?;
    let v_pt = f.vt.take_rows(k_alpha)?;
    let (core_diag, frozen): (&[f64], &[f64]) = match placement {
        CorePlacement::Top => (&f.sigma[..k_beta], &f.sigma[k_beta..k_alpha]),
        CorePlacement::Bottom => (&f.sigma[k_alpha - k_beta..k_alpha], &f.sigma[..k_alpha - k_beta]),
    };
    Ok(CersaFactors {
        u_p,
        v_pt,
        s_core: Matrix::from_diag(core_diag),
        sigma_frozen: frozen.to_vec(),
        selection,
        placement,
    })
}

/// Dense reconstruction of the factored weight.
pub fn effective_weight(factors: &CersaFactors) -> Result<Matrix> {
    let k_alpha = factors.selection.k_alpha;
    if factors.u_p.cols() != k_alpha
        || factors.v_pt.rows() != k_alpha
        || factors.s_core.rows() != factors.selection.k_beta
        || factors.s_core.cols() != factors.selection.k_beta
        || factors.sigma_frozen.len() != k_alpha - factors.selection.k_beta
    {
        return Err(Error::ShapeMismatch {
            context: "effective_weight".into(),
            lhs_rows: factors.u_p.rows(),
            lhs_cols: factors.u_p.cols(),
            rhs_rows: factors.v_pt.rows(),
            rhs_cols: factors.v_pt.cols(),
        });
    }
    factors.u_p.matmul(&factors.block_diagonal())?.matmul(&factors.v_pt)
}

/// Given orthonormal bases `q`/`q_prime` spanning the left/right singular
/// subspaces of `m_mat`'s rank-k SVD (k = number of columns of `q`), build
/// the `k x k` core `s` with `m_mat = q * s * q_prime^T`.
///
/// The construction is `s = r * diag(sigma) * r'^T` with `r = q^T u` and
/// `r' = q_prime^T v`. The span preconditions are verified here (psi must be
/// 1 within 1e-6), and `m_mat` must actually be numerically rank-k — a
/// significant discarded tail would silently break the reconstruction
/// guarantee, so it is an error too.
pub fn core_for_bases(m_mat: &Matrix, q: &Matrix, q_prime: &Matrix) -> Result<Matrix> {
    let k = q.cols();
    if q_prime.cols() != k {
        return Err(Error::ShapeMismatch {
            context: "core_for_bases".into(),
            lhs_rows: q.rows(),
            lhs_cols: q.cols(),
            rhs_rows: q_prime.rows(),
            rhs_cols: q_prime.cols(),
        });
    }
    if k == 0 || k > m_mat.rows().min(m_mat.cols()) {
        return Err(Error::InvalidArgument(format!(
            "core_for_bases: basis size {k} out of range for a {}x{} matrix",
            m_mat.rows(),
            m_mat.cols()
        )));
    }
    let f = svd(m_mat)?;
    let u_k = f.u.take_cols(k)?;
    let v_k = f.vt.take_rows(k)?.transpose();

    let psi_left = grassmann(q, &u_k, k, k)?;
    let psi_right = grassmann(q_prime, &v_k, k, k)?;
    if psi_left < 1.0 - 1e-6 || psi_right < 1.0 - 1e-6 {
        return Err(Error::SpanMismatch { psi: psi_left.min(psi_right) });
    }
    let tail: f64 = f.sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let scale = m_mat.frobenius_norm();
    if tail > 1e-9 * scale {
        return Err(Error::InsufficientRank(format!(
            "matrix is not rank-{k}: discarded tail energy {tail:.3e} exceeds 1e-9 of norm {scale:.3e}"
        )));
    }

    let r = q.transpose().matmul(&u_k)?;
    let r_prime = q_prime.transpose().matmul(&v_k)?;
    let scaled = r.scale_cols(&f.sigma[..k])?;
    scaled.matmul(&r_prime.transpose())
}

/// Equal-size top/bottom trainable blocks inside the retained subspace, with
/// `r = floor(k_alpha / 2)` so the two blocks are disjoint.
///
/// `take_top = true` is the standard factorization with `k_beta = r`;
/// `take_top = false` places the core over the trailing `r` retained values
/// and freezes the leading diagonal instead.
pub fn split_variant(w: &Matrix, alpha: f64, take_top: bool) -> Result<CersaFactors> {
    let f = svd(w)?;
    let profile = spectrum::energy_profile(&f.sigma)?;
    let k_alpha = spectrum::select_rank(&profile, alpha)?;
    let r = k_alpha / 2;
    if r == 0 {
        return Err(Error::InsufficientRank(format!(
            "retained rank {k_alpha} cannot hold two disjoint blocks"
        )));
    }
    let selection = spectrum::make_selection_with_k_beta(&profile, alpha, r)?;
    let placement = if take_top { CorePlacement::Top } else { CorePlacement::Bottom };
    build_factors(&f, selection, placement)
}

impl Matrix {
    /// Scale column `j` by `factors[j]`; used to apply a diagonal from the
    /// right.
    pub fn scale_cols(&self, factors: &[f64]) -> Result<Matrix> {
        if factors.len() != self.cols() {
            return Err(Error::LengthMismatch(format!(
                "scale_cols: {} factors for {} columns",
                factors.len(),
                self.cols()
            )));
        }
        let mut out = self.clone();
        for r in 0..out.rows() {
            for (c, f) in factors.iter().enumerate() {
                let v = out.get(r, c);
                out.set(r, c, v * f);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::test_support::{random_matrix, random_orthogonal};

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn lossless_factorization_roundtrips() {
        let w = random_matrix(12, 9, 101);
        let f = factorize(&w, 1.0, 1.0).unwrap();
        let recon = f.effective_weight().unwrap();
        assert!(rel_err(&recon, &w) <= 1e-9);
        assert_eq!(f.selection.r3, 0);
    }

    #[test]
    fn diag_factorization_hand_case() {
        let w = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let f = factorize(&w, 0.9, 0.9).unwrap();
        assert_eq!(f.selection.k_alpha, 2);
        assert_eq!(f.s_core.shape(), (2, 2));
        assert_eq!(f.s_core.get(0, 0), 3.0);
        assert_eq!(f.s_core.get(1, 1), 2.0);
        assert_eq!(f.s_core.get(0, 1), 0.0);
        assert!(f.sigma_frozen.is_empty());
        let err = f.effective_weight().unwrap().sub(&w).unwrap().frobenius_norm();
        assert!((err - 1.0).abs() < 1e-10, "error was {err}");
    }

    #[test]
    fn diag_factorization_with_frozen_middle() {
        let w = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let f = factorize(&w, 0.9, 0.6).unwrap();
        assert_eq!(f.s_core.shape(), (1, 1));
        assert_eq!(f.s_core.get(0, 0), 3.0);
        assert_eq!(f.sigma_frozen, vec![2.0]);
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let w = Matrix::zeros(4, 4);
        assert!(matches!(factorize(&w, 0.9, 0.9), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn beta_above_alpha_is_rejected() {
        let w = random_matrix(6, 6, 5);
        assert!(factorize(&w, 0.5, 0.9).is_err());
    }

    #[test]
    fn construction_error_matches_tail_energy() {
        let w = random_matrix(20, 14, 31);
        let f_svd = svd(&w).unwrap();
        let factors = factorize(&w, 0.9, 0.9).unwrap();
        let k = factors.selection.k_alpha;
        let tail: f64 = f_svd.sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let err = factors.effective_weight().unwrap().sub(&w).unwrap().frobenius_norm();
        assert!((err - tail).abs() <= 1e-9 * w.frobenius_norm());
    }

    #[test]
    fn zeroed_core_with_empty_frozen_gives_zero_weight() {
        let w = random_matrix(8, 6, 47);
        let mut f = factorize(&w, 1.0, 1.0).unwrap();
        f.s_core = Matrix::zeros(f.selection.k_beta, f.selection.k_beta);
        let recon = f.effective_weight().unwrap();
        assert_eq!(recon.frobenius_norm(), 0.0);
    }

    #[test]
    fn span_preserved_after_arbitrary_core_update() {
        let w = random_matrix(16, 12, 53);
        let mut f = factorize(&w, 0.95, 0.95).unwrap();
        // Overwrite the core with a random full-rank matrix.
        let k = f.selection.k_beta;
        f.s_core = random_matrix(k, k, 54)
            .add(&Matrix::from_diag(&vec![3.0; k]))
            .unwrap();
        let updated = f.effective_weight().unwrap();
        let uf = svd(&updated).unwrap();
        let k_alpha = f.selection.k_alpha;
        let psi_u = grassmann(&uf.u.take_cols(k_alpha).unwrap(), &f.u_p, k_alpha, k_alpha).unwrap();
        let psi_v = grassmann(
            &uf.vt.take_rows(k_alpha).unwrap().transpose(),
            &f.v_pt.transpose(),
            k_alpha,
            k_alpha,
        )
        .unwrap();
        assert!((psi_u - 1.0).abs() < 1e-8, "psi_u = {psi_u}");
        assert!((psi_v - 1.0).abs() < 1e-8, "psi_v = {psi_v}");
    }

    #[test]
    fn core_for_bases_recovers_diagonal_on_own_factors() {
        let sigma = [4.0, 2.5, 1.25];
        let u = random_orthogonal(6, 61).take_cols(3).unwrap();
        let v = random_orthogonal(5, 62).take_cols(3).unwrap();
        let m = u
            .matmul(&Matrix::from_diag(&sigma))
            .unwrap()
            .matmul(&v.transpose())
            .unwrap();
        let f = svd(&m).unwrap();
        let u_k = f.u.take_cols(3).unwrap();
        let v_k = f.vt.take_rows(3).unwrap().transpose();
        let s = core_for_bases(&m, &u_k, &v_k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { sigma[i] } else { 0.0 };
                assert!((s.get(i, j) - expect).abs() < 1e-9, "s[{i}][{j}] = {}", s.get(i, j));
            }
        }
    }

    #[test]
    fn core_for_bases_roundtrips_on_permuted_basis() {
        let sigma = [5.0, 3.0, 1.5, 0.5];
        let u = random_orthogonal(8, 71).take_cols(4).unwrap();
        let v = random_orthogonal(7, 72).take_cols(4).unwrap();
        let m = u
            .matmul(&Matrix::from_diag(&sigma))
            .unwrap()
            .matmul(&v.transpose())
            .unwrap();
        // Permute the left basis columns; the construction must compensate.
        let perm = Matrix::from_fn(4, 4, |r, c| if (r + 1) % 4 == c { 1.0 } else { 0.0 });
        let q = u.matmul(&perm).unwrap();
        let s = core_for_bases(&m, &q, &v).unwrap();
        let recon = q.matmul(&s).unwrap().matmul(&v.transpose()).unwrap();
        assert!(rel_err(&recon, &m) <= 1e-9);
    }

    #[test]
    fn core_for_bases_rejects_wrong_span() {
        let sigma = [4.0, 2.0];
        let u = random_orthogonal(6, 81).take_cols(2).unwrap();
        let v = random_orthogonal(6, 82).take_cols(2).unwrap();
        let m = u
            .matmul(&Matrix::from_diag(&sigma))
            .unwrap()
            .matmul(&v.transpose())
            .unwrap();
        let elsewhere = random_orthogonal(6, 83).take_cols(2).unwrap();
        assert!(matches!(
            core_for_bases(&m, &elsewhere, &v),
            Err(Error::SpanMismatch { .. })
        ));
    }

    #[test]
    fn split_top_matches_plain_factorization() {
        let w = random_matrix(10, 8, 91);
        let top = split_variant(&w, 0.95, true).unwrap();
        let plain = factorize(&w, 0.95, top.selection.beta).unwrap();
        assert_eq!(top.selection, plain.selection);
        assert_eq!(top.s_core.data(), plain.s_core.data());
        assert_eq!(top.sigma_frozen, plain.sigma_frozen);
        assert_eq!(top.placement, CorePlacement::Top);
    }

    #[test]
    fn split_bottom_places_core_on_trailing_block() {
        // diag(4,3,2,1): alpha = 0.8 retains k_alpha = 2, r = 1; the bottom
        // variant trains the second retained value and freezes the first.
        let w = Matrix::from_diag(&[4.0, 3.0, 2.0, 1.0]);
        let f = split_variant(&w, 0.8, false).unwrap();
        assert_eq!(f.selection.k_alpha, 2);
        assert_eq!(f.selection.k_beta, 1);
        assert_eq!(f.placement, CorePlacement::Bottom);
        assert_eq!(f.s_core.get(0, 0), 3.0);
        assert_eq!(f.sigma_frozen, vec![4.0]);
        // Reconstruction at init still matches the rank-2 truncation.
        let recon = f.effective_weight().unwrap();
        let expect = svd(&w).unwrap().truncate(2).unwrap().reconstruct().unwrap();
        assert!(rel_err(&recon, &expect) <= 1e-12);
    }

    #[test]
    fn split_with_rank_one_retained_fails() {
        let w = Matrix::from_diag(&[10.0, 0.1, 0.1]);
        assert!(matches!(
            split_variant(&w, 0.9, false),
            Err(Error::InsufficientRank(_))
        ));
    }

    #[test]
    fn roundtrip_identity_at_full_retention_many_seeds() {
        for seed in 0..20u64 {
            let w = random_matrix(9, 7, 1000 + seed);
            let f = factorize(&w, 1.0, 1.0).unwrap();
            assert!(rel_err(&f.effective_weight().unwrap(), &w) <= 1e-9);
        }
    }

    #[test]
    fn core_for_bases_roundtrip_many_random_basis_changes() {
        for seed in 0..25u64 {
            let k = 3 + (seed as usize % 3);
            let u = random_orthogonal(10, 2000 + seed).take_cols(k).unwrap();
            let v = random_orthogonal(9, 3000 + seed).take_cols(k).unwrap();
            let sigma: Vec<f64> = (0..k).map(|i| 4.0 / (1.0 + i as f64)).collect();
            let m = u
                .matmul(&Matrix::from_diag(&sigma))
                .unwrap()
                .matmul(&v.transpose())
                .unwrap();
            let rot_l = random_orthogonal(k, 4000 + seed);
            let rot_r = random_orthogonal(k, 5000 + seed);
            let q = u.matmul(&rot_l).unwrap();
            let q_prime = v.matmul(&rot_r).unwrap();
            let s = core_for_bases(&m, &q, &q_prime).unwrap();
            let recon = q.matmul(&s).unwrap().matmul(&q_prime.transpose()).unwrap();
            assert!(rel_err(&recon, &m) <= 1e-9, "seed {seed}");
        }
    }
}
