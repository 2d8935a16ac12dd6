//! Adapter parameterizations behind one interface: full fine-tuning, LoRA,
//! a trainable singular-value array, a frozen-basis trainable core, and the
//! three-region factorization. Each layer exposes a forward map, analytic
//! gradients for its trainable tensors only, and exact parameter counts.
//!
//! Weights are `out_dim x in_dim`; the forward map is `x * W^T + bias` with
//! `x` holding one sample per row. Factored kinds never materialize the
//! effective weight on the forward path.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::factor::{self, CersaFactors, CorePlacement};
use crate::matrix::Matrix;
use crate::svd::svd;

/// Which parameterization a layer trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterKind {
    /// Every weight entry is trainable.
    FullFt,
    /// Frozen base plus trainable low-rank update `B * A`; `B` starts at zero
    /// so the update begins as a no-op, `A` is Gaussian scaled by `1/sqrt(r)`.
    Lora { rank: usize },
    /// Frozen truncated bases, trainable singular-value vector.
    SvfitArray { rank: usize },
    /// Frozen truncated bases, trainable `r x r` core initialized to
    /// `diag(sigma)`.
    FrozenUv { rank: usize },
    /// Three-region factorization driven by energy thresholds.
    Cersa { alpha: f64, beta: f64 },
    /// Equal-size top/bottom trainable block inside the retained subspace;
    /// the ablation counterpart of `Cersa`.
    CersaSplit { alpha: f64, take_top: bool },
}

impl AdapterKind {
    pub fn validate(&self) -> Result<()> {
        let check_threshold = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
            Ok(())
        };
        match self {
            AdapterKind::FullFt => Ok(()),
            AdapterKind::Lora { rank }
            | AdapterKind::SvfitArray { rank }
            | AdapterKind::FrozenUv { rank } => {
                if *rank == 0 {
                    Err(Error::InvalidArgument("rank must be at least 1".into()))
                } else {
                    Ok(())
                }
            }
            AdapterKind::Cersa { alpha, beta } => {
                check_threshold("alpha", *alpha)?;
                check_threshold("beta", *beta)?;
                if beta > alpha {
                    return Err(Error::InvalidArgument(format!(
                        "trainable threshold exceeds retention threshold (beta = {beta} > alpha = {alpha})"
                    )));
                }
                Ok(())
            }
            AdapterKind::CersaSplit { alpha, .. } => check_threshold("alpha", *alpha),
        }
    }

    /// Short stable label used in tables and file names.
    pub fn label(&self) -> String {
        match self {
            AdapterKind::FullFt => "full_ft".into(),
            AdapterKind::Lora { rank } => format!("lora_r{rank}"),
            AdapterKind::SvfitArray { rank } => format!("svfit_array_r{rank}"),
            AdapterKind::FrozenUv { rank } => format!("frozen_uv_r{rank}"),
            AdapterKind::Cersa { alpha, beta } => format!("cersa_a{alpha}_b{beta}"),
            AdapterKind::CersaSplit { alpha, take_top } => {
                format!("cersa_{}_a{alpha}", if *take_top { "top_split" } else { "bottom_split" })
            }
        }
    }
}

#[derive(Debug, Clone)]
enum AdapterState {
    FullFt { weight: Matrix },
    Lora { w0: Matrix, a: Matrix, b: Matrix },
    SvfitArray { u: Matrix, vt: Matrix, sigma: Vec<f64> },
    FrozenUv { u: Matrix, vt: Matrix, core: Matrix },
    Cersa { factors: CersaFactors },
}

/// A single affine layer under some adapter kind. The bias is always
/// trainable and never factorized.
#[derive(Debug, Clone)]
pub struct AdapterLayer {
    kind: AdapterKind,
    state: AdapterState,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

/// Gradients for the trainable tensors of one layer, aligned with
/// [`AdapterLayer::trainable_slot_names`], plus the gradient with respect to
/// the layer input for stacking.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub slots: Vec<Vec<f64>>,
    pub input_grad: Matrix,
}

/// Build a layer of the given kind around base weights `w0` and `bias0`.
///
/// `seed` only feeds the LoRA `A` initialization; every other kind is a
/// deterministic function of `w0`.
pub fn build(kind: AdapterKind, w0: &Matrix, bias0: &[f64], seed: u64) -> Result<AdapterLayer> {
    kind.validate()?;
    let (out_dim, in_dim) = w0.shape();
    if bias0.len() != out_dim {
        return Err(Error::LengthMismatch(format!(
            "bias length {} does not match output dimension {}",
            bias0.len(),
            out_dim
        )));
    }
    let needs_svd = !matches!(kind, AdapterKind::FullFt | AdapterKind::Lora { .. });
    if needs_svd && w0.frobenius_norm() == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let state = match kind {
        AdapterKind::FullFt => AdapterState::FullFt { weight: w0.clone() },
        AdapterKind::Lora { rank } => {
            if rank > in_dim.min(out_dim) {
                return Err(Error::InsufficientRank(format!(
                    "lora rank {rank} exceeds min dimension {}",
                    in_dim.min(out_dim)
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / (rank as f64).sqrt();
            let a = Matrix::from_fn(rank, in_dim, |_, _| {
                let g: f64 = rng.sample(StandardNormal);
                g * scale
            });
            let b = Matrix::zeros(out_dim, rank);
            AdapterState::Lora { w0: w0.clone(), a, b }
        }
        AdapterKind::SvfitArray { rank } => {
            let f = svd(w0)?.truncate(check_rank(rank, w0)?)?;
            AdapterState::SvfitArray { u: f.u, vt: f.vt, sigma: f.sigma }
        }
        AdapterKind::FrozenUv { rank } => {
            let f = svd(w0)?.truncate(check_rank(rank, w0)?)?;
            AdapterState::FrozenUv {
                u: f.u,
                vt: f.vt,
                core: Matrix::from_diag(&f.sigma),
            }
        }
        AdapterKind::Cersa { alpha, beta } => AdapterState::Cersa {
            factors: factor::factorize(w0, alpha, beta)?,
        },
        AdapterKind::CersaSplit { alpha, take_top } => AdapterState::Cersa {
            factors: factor::split_variant(w0, alpha, take_top)?,
        },
    };
    Ok(AdapterLayer {
        kind,
        state,
        bias: bias0.to_vec(),
        in_dim,
        out_dim,
    })
}

fn check_rank(rank: usize, w0: &Matrix) -> Result<usize> {
    let max = w0.rows().min(w0.cols());
    if rank == 0 || rank > max {
        return Err(Error::InsufficientRank(format!(
            "rank {rank} out of range 1..={max}"
        )));
    }
    Ok(rank)
}

impl AdapterLayer {
    pub fn kind(&self) -> AdapterKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// The factorization behind a `Cersa`/`CersaSplit` layer.
    pub fn cersa_factors(&self) -> Option<&CersaFactors> {
        match &self.state {
            AdapterState::Cersa { factors } => Some(factors),
            _ => None,
        }
    }

    /// Dense effective weight (`out_dim x in_dim`). Test oracle and
    /// checkpoint snapshot; the forward path does not call this for factored
    /// kinds.
    pub fn effective_weight(&self) -> Result<Matrix> {
        match &self.state {
            AdapterState::FullFt { weight } => Ok(weight.clone()),
            AdapterState::Lora { w0, a, b } => w0.add(&b.matmul(a)?),
            AdapterState::SvfitArray { u, vt, sigma } => u.matmul(&vt.scale_rows(sigma)?),
            AdapterState::FrozenUv { u, vt, core } => u.matmul(core)?.matmul(vt),
            AdapterState::Cersa { factors } => factors.effective_weight(),
        }
    }

    /// `x * W_eff^T + bias`, computed through the factored forms.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(Error::ShapeMismatch {
                context: "adapter forward".into(),
                lhs_rows: x.rows(),
                lhs_cols: x.cols(),
                rhs_rows: self.out_dim,
                rhs_cols: self.in_dim,
            });
        }
        let mut out = match &self.state {
            AdapterState::FullFt { weight } => x.matmul(&weight.transpose())?,
            AdapterState::Lora { w0, a, b } => {
                let base = x.matmul(&w0.transpose())?;
                let update = x.matmul(&a.transpose())?.matmul(&b.transpose())?;
                base.add(&update)?
            }
            AdapterState::SvfitArray { u, vt, sigma } => {
                let h = x.matmul(&vt.transpose())?;
                h.scale_cols(sigma)?.matmul(&u.transpose())?
            }
            AdapterState::FrozenUv { u, vt, core } => {
                let h = x.matmul(&vt.transpose())?;
                h.matmul(&core.transpose())?.matmul(&u.transpose())?
            }
            AdapterState::Cersa { factors } => {
                let h = x.matmul(&factors.v_pt.transpose())?;
                apply_block_diag_t(&h, factors)?.matmul(&factors.u_p.transpose())?
            }
        };
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c);
                out.set(r, c, v + self.bias[c]);
            }
        }
        Ok(out)
    }

    /// Names of the trainable tensors in slot order (bias last).
    pub fn trainable_slot_names(&self) -> Vec<&'static str> {
        match &self.state {
            AdapterState::FullFt { .. } => vec!["weight", "bias"],
            AdapterState::Lora { .. } => vec!["lora_a", "lora_b", "bias"],
            AdapterState::SvfitArray { .. } => vec!["sigma", "bias"],
            AdapterState::FrozenUv { .. } => vec!["core", "bias"],
            AdapterState::Cersa { .. } => vec!["s_core", "bias"],
        }
    }

    /// Mutable views of the trainable tensors, aligned with
    /// [`Self::trainable_slot_names`]. This is the single write path the
    /// optimizer uses; frozen tensors are unreachable from here.
    pub fn trainable_slots_mut(&mut self) -> Vec<&mut [f64]> {
        let bias = &mut self.bias;
        match &mut self.state {
            AdapterState::FullFt { weight } => vec![weight.data_mut(), bias],
            AdapterState::Lora { a, b, .. } => vec![a.data_mut(), b.data_mut(), bias],
            AdapterState::SvfitArray { sigma, .. } => vec![sigma.as_mut_slice(), bias],
            AdapterState::FrozenUv { core, .. } => vec![core.data_mut(), bias],
            AdapterState::Cersa { factors } => vec![factors.s_core.data_mut(), bias],
        }
    }

    /// Gradients of `sum(forward(x) . upstream)` for every trainable tensor,
    /// plus the input gradient. Frozen tensors receive no slot at all.
    pub fn grad(&self, x: &Matrix, upstream: &Matrix) -> Result<LayerGrads> {
        if upstream.rows() != x.rows() || upstream.cols() != self.out_dim {
            return Err(Error::ShapeMismatch {
                context: "adapter grad".into(),
                lhs_rows: upstream.rows(),
                lhs_cols: upstream.cols(),
                rhs_rows: x.rows(),
                rhs_cols: self.out_dim,
            });
        }
        let bias_grad: Vec<f64> = (0..self.out_dim)
            .map(|c| (0..upstream.rows()).map(|r| upstream.get(r, c)).sum())
            .collect();

        let (slots, input_grad) = match &self.state {
            AdapterState::FullFt { weight } => {
                let dw = upstream.transpose().matmul(x)?;
                let dx = upstream.matmul(weight)?;
                (vec![dw.data().to_vec(), bias_grad], dx)
            }
            AdapterState::Lora { w0, a, b } => {
                // W = w0 + B A: dB = G A^T, dA = B^T G with G = upstream^T x.
                let g = upstream.transpose().matmul(x)?;
                let da = b.transpose().matmul(&g)?;
                let db = g.matmul(&a.transpose())?;
                let dx = upstream.matmul(w0)?.add(&upstream.matmul(b)?.matmul(a)?)?;
                (vec![da.data().to_vec(), db.data().to_vec(), bias_grad], dx)
            }
            AdapterState::SvfitArray { u, vt, sigma } => {
                let core_grad = cross_core_grad(upstream, x, u, vt)?;
                let ds: Vec<f64> = (0..sigma.len()).map(|i| core_grad.get(i, i)).collect();
                let h = upstream.matmul(u)?.scale_cols(sigma)?;
                let dx = h.matmul(vt)?;
                (vec![ds, bias_grad], dx)
            }
            AdapterState::FrozenUv { u, vt, core } => {
                let dc = cross_core_grad(upstream, x, u, vt)?;
                let dx = upstream.matmul(u)?.matmul(core)?.matmul(vt)?;
                (vec![dc.data().to_vec(), bias_grad], dx)
            }
            AdapterState::Cersa { factors } => {
                // dB = U_p^T (upstream^T x) V_p; the trainable block is the
                // core's sub-block of dB at its placement offset.
                let db = cross_core_grad(upstream, x, &factors.u_p, &factors.v_pt)?;
                let k_beta = factors.selection.k_beta;
                let offset = match factors.placement {
                    CorePlacement::Top => 0,
                    CorePlacement::Bottom => factors.selection.k_alpha - k_beta,
                };
                let mut ds = Vec::with_capacity(k_beta * k_beta);
                for r in 0..k_beta {
                    for c in 0..k_beta {
                        ds.push(db.get(offset + r, offset + c));
                    }
                }
                let h = upstream.matmul(&factors.u_p)?;
                let dx = apply_block_diag(&h, factors)?.matmul(&factors.v_pt)?;
                (vec![ds, bias_grad], dx)
            }
        };
        Ok(LayerGrads { slots, input_grad })
    }

    /// Exact number of trainable parameters (closed form per kind, plus the
    /// bias).
    pub fn trainable_count(&self) -> usize {
        let core = match (&self.kind, &self.state) {
            (AdapterKind::FullFt, _) => self.out_dim * self.in_dim,
            (AdapterKind::Lora { rank }, _) => rank * (self.out_dim + self.in_dim),
            (AdapterKind::SvfitArray { rank }, _) => *rank,
            (AdapterKind::FrozenUv { rank }, _) => rank * rank,
            (_, AdapterState::Cersa { factors }) => {
                factors.selection.k_beta * factors.selection.k_beta
            }
            _ => unreachable!("kind/state mismatch"),
        };
        core + self.out_dim
    }

    /// Number of frozen parameters actually stored by this layer.
    pub fn frozen_count(&self) -> usize {
        match &self.state {
            AdapterState::FullFt { .. } => 0,
            AdapterState::Lora { w0, .. } => w0.rows() * w0.cols(),
            AdapterState::SvfitArray { u, vt, .. } => {
                u.rows() * u.cols() + vt.rows() * vt.cols()
            }
            AdapterState::FrozenUv { u, vt, .. } => u.rows() * u.cols() + vt.rows() * vt.cols(),
            AdapterState::Cersa { factors } => {
                factors.u_p.rows() * factors.u_p.cols()
                    + factors.v_pt.rows() * factors.v_pt.cols()
                    + factors.sigma_frozen.len()
            }
        }
    }

    /// Order-stable hash over the frozen tensors' raw bytes. Training must
    /// leave this unchanged.
    pub fn frozen_state_hash(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        let mut eat = |name: &str, data: &[f64]| {
            name.hash(&mut hasher);
            for v in data {
                v.to_le_bytes().hash(&mut hasher);
            }
        };
        match &self.state {
            AdapterState::FullFt { .. } => eat("none", &[]),
            AdapterState::Lora { w0, .. } => eat("w0", w0.data()),
            AdapterState::SvfitArray { u, vt, .. } => {
                eat("u", u.data());
                eat("vt", vt.data());
            }
            AdapterState::FrozenUv { u, vt, .. } => {
                eat("u", u.data());
                eat("vt", vt.data());
            }
            AdapterState::Cersa { factors } => {
                eat("u_p", factors.u_p.data());
                eat("v_pt", factors.v_pt.data());
                eat("sigma_frozen", &factors.sigma_frozen);
            }
        }
        hasher.finish()
    }

    /// Named tensors describing the full layer state (frozen and trainable),
    /// for checkpoint emission. Names follow the factorization convention
    /// (`u_p`, `v_pt`, `s_core`, `sigma_frozen`).
    pub fn state_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = match &self.state {
            AdapterState::FullFt { weight } => vec![mat_entry("weight", weight)],
            AdapterState::Lora { w0, a, b } => vec![
                mat_entry("w0", w0),
                mat_entry("lora_a", a),
                mat_entry("lora_b", b),
            ],
            AdapterState::SvfitArray { u, vt, sigma } => vec![
                mat_entry("u", u),
                mat_entry("vt", vt),
                ("sigma".into(), vec![sigma.len()], sigma.clone()),
            ],
            AdapterState::FrozenUv { u, vt, core } => vec![
                mat_entry("u", u),
                mat_entry("vt", vt),
                mat_entry("core", core),
            ],
            AdapterState::Cersa { factors } => vec![
                mat_entry("u_p", &factors.u_p),
                mat_entry("v_pt", &factors.v_pt),
                mat_entry("s_core", &factors.s_core),
                (
                    "sigma_frozen".into(),
                    vec![factors.sigma_frozen.len()],
                    factors.sigma_frozen.clone(),
                ),
            ],
        };
        out.push(("bias".into(), vec![self.bias.len()], self.bias.clone()));
        out
    }
}

fn mat_entry(name: &str, m: &Matrix) -> (String, Vec<usize>, Vec<f64>) {
    (name.into(), vec![m.rows(), m.cols()], m.data().to_vec())
}

/// `U^T (upstream^T x) V^T` computed as two skinny products.
fn cross_core_grad(upstream: &Matrix, x: &Matrix, u: &Matrix, vt: &Matrix) -> Result<Matrix> {
    let left = upstream.matmul(u)?.transpose(); // k x batch
    let right = x.matmul(&vt.transpose())?; // batch x k
    left.matmul(&right)
}

/// `h * B^T` for the block-diagonal middle factor, without materializing `B`.
fn apply_block_diag_t(h: &Matrix, factors: &CersaFactors) -> Result<Matrix> {
    apply_block(h, factors, true)
}

/// `h * B` for the block-diagonal middle factor.
fn apply_block_diag(h: &Matrix, factors: &CersaFactors) -> Result<Matrix> {
    apply_block(h, factors, false)
}

fn apply_block(h: &Matrix, factors: &CersaFactors, transposed: bool) -> Result<Matrix> {
    let k_alpha = factors.selection.k_alpha;
    let k_beta = factors.selection.k_beta;
    if h.cols() != k_alpha {
        return Err(Error::ShapeMismatch {
            context: "block diagonal apply".into(),
            lhs_rows: h.rows(),
            lhs_cols: h.cols(),
            rhs_rows: k_alpha,
            rhs_cols: k_alpha,
        });
    }
    let core_offset = match factors.placement {
        CorePlacement::Top => 0,
        CorePlacement::Bottom => k_alpha - k_beta,
    };
    let frozen_offset = match factors.placement {
        CorePlacement::Top => k_beta,
        CorePlacement::Bottom => 0,
    };
    let mut out = Matrix::zeros(h.rows(), k_alpha);
    let s = &factors.s_core;
    for row in 0..h.rows() {
        for i in 0..k_beta {
            let mut acc = 0.0;
            for j in 0..k_beta {
                // (h B^T)[., i] sums h[., j] * B[i, j]; (h B)[., i] sums h[., j] * B[j, i].
                let coeff = if transposed { s.get(i, j) } else { s.get(j, i) };
                acc += h.get(row, core_offset + j) * coeff;
            }
            out.set(row, core_offset + i, acc);
        }
        for (t, d) in factors.sigma_frozen.iter().enumerate() {
            out.set(row, frozen_offset + t, h.get(row, frozen_offset + t) * d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::test_support::random_matrix;

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    fn all_kinds() -> Vec<AdapterKind> {
        vec![
            AdapterKind::FullFt,
            AdapterKind::Lora { rank: 2 },
            AdapterKind::SvfitArray { rank: 3 },
            AdapterKind::FrozenUv { rank: 3 },
            AdapterKind::Cersa { alpha: 0.95, beta: 0.9 },
            AdapterKind::CersaSplit { alpha: 0.95, take_top: true },
            AdapterKind::CersaSplit { alpha: 0.95, take_top: false },
        ]
    }

    /// Scalar objective sum(forward(x) . upstream) used by the
    /// finite-difference oracle.
    fn objective(layer: &AdapterLayer, x: &Matrix, upstream: &Matrix) -> f64 {
        let out = layer.forward(x).unwrap();
        out.data()
            .iter()
            .zip(upstream.data())
            .map(|(o, u)| o * u)
            .sum()
    }

    #[test]
    fn lora_build_starts_at_base_weight() {
        let w0 = random_matrix(8, 6, 11);
        let layer = build(AdapterKind::Lora { rank: 3 }, &w0, &[0.0; 8], 1).unwrap();
        assert_eq!(layer.effective_weight().unwrap().data(), w0.data());
    }

    #[test]
    fn lossless_cersa_matches_base_weight() {
        let w0 = random_matrix(8, 6, 13);
        let layer = build(AdapterKind::Cersa { alpha: 1.0, beta: 1.0 }, &w0, &[0.0; 8], 1).unwrap();
        assert!(rel_err(&layer.effective_weight().unwrap(), &w0) <= 1e-9);
    }

    #[test]
    fn cersa_equals_truncation_at_equal_thresholds() {
        let w0 = random_matrix(10, 7, 17);
        let layer = build(AdapterKind::Cersa { alpha: 0.95, beta: 0.95 }, &w0, &[0.0; 10], 1).unwrap();
        let k = layer.cersa_factors().unwrap().selection.k_alpha;
        let oracle = svd(&w0).unwrap().truncate(k).unwrap().reconstruct().unwrap();
        assert!(rel_err(&layer.effective_weight().unwrap(), &oracle) <= 1e-10);
    }

    #[test]
    fn zero_base_rejected_for_svd_kinds() {
        let w0 = Matrix::zeros(4, 4);
        for kind in [
            AdapterKind::SvfitArray { rank: 2 },
            AdapterKind::FrozenUv { rank: 2 },
            AdapterKind::Cersa { alpha: 0.9, beta: 0.9 },
        ] {
            assert!(build(kind, &w0, &[0.0; 4], 1).is_err(), "{kind:?}");
        }
        assert!(build(AdapterKind::FullFt, &w0, &[0.0; 4], 1).is_ok());
    }

    #[test]
    fn forward_identity_input_reads_out_weight_rows() {
        let w0 = random_matrix(5, 5, 23);
        let bias = vec![0.5; 5];
        let layer = build(AdapterKind::FullFt, &w0, &bias, 1).unwrap();
        let out = layer.forward(&Matrix::identity(5)).unwrap();
        let wt = w0.transpose();
        for r in 0..5 {
            for c in 0..5 {
                assert!((out.get(r, c) - (wt.get(r, c) + 0.5)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_input_yields_bias_only() {
        let w0 = random_matrix(6, 4, 29);
        let bias = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        for kind in all_kinds() {
            let layer = build(kind, &w0, &bias, 3).unwrap();
            let out = layer.forward(&Matrix::zeros(2, 4)).unwrap();
            for r in 0..2 {
                for c in 0..6 {
                    assert!((out.get(r, c) - bias[c]).abs() < 1e-15, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn factored_forward_matches_dense_oracle() {
        let w0 = random_matrix(9, 7, 31);
        let x = random_matrix(4, 7, 32);
        for kind in all_kinds() {
            let layer = build(kind, &w0, &[0.1; 9], 5).unwrap();
            let fast = layer.forward(&x).unwrap();
            let dense = {
                let w = layer.effective_weight().unwrap();
                let mut out = x.matmul(&w.transpose()).unwrap();
                for r in 0..out.rows() {
                    for c in 0..out.cols() {
                        let v = out.get(r, c);
                        out.set(r, c, v + 0.1);
                    }
                }
                out
            };
            assert!(rel_err(&fast, &dense) <= 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn forward_shape_mismatch_is_rejected() {
        let w0 = random_matrix(5, 4, 37);
        let layer = build(AdapterKind::FullFt, &w0, &[0.0; 5], 1).unwrap();
        assert!(layer.forward(&Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let w0 = random_matrix(6, 5, 41);
        let x = random_matrix(3, 5, 42);
        let upstream = Matrix::zeros(3, 6);
        for kind in all_kinds() {
            let layer = build(kind, &w0, &[0.0; 6], 7).unwrap();
            let grads = layer.grad(&x, &upstream).unwrap();
            for slot in &grads.slots {
                assert!(slot.iter().all(|g| *g == 0.0), "{kind:?}");
            }
            assert_eq!(grads.input_grad.frobenius_norm(), 0.0);
        }
    }

    #[test]
    fn analytic_grads_match_central_differences() {
        let h = 1e-5;
        for seed in 0..20u64 {
            let w0 = random_matrix(8, 6, 100 + seed);
            let x = random_matrix(4, 6, 200 + seed);
            let upstream = random_matrix(4, 8, 300 + seed);
            for kind in all_kinds() {
                let layer = build(kind, &w0, &[0.05; 8], 400 + seed).unwrap();
                let analytic = layer.grad(&x, &upstream).unwrap();
                let names = layer.trainable_slot_names();
                for (slot_idx, name) in names.iter().enumerate() {
                    let len = analytic.slots[slot_idx].len();
                    for p in 0..len {
                        let mut probe = layer.clone();
                        let base = probe.trainable_slots_mut()[slot_idx][p];
                        probe.trainable_slots_mut()[slot_idx][p] = base + h;
                        let plus = objective(&probe, &x, &upstream);
                        probe.trainable_slots_mut()[slot_idx][p] = base - h;
                        let minus = objective(&probe, &x, &upstream);
                        let fd = (plus - minus) / (2.0 * h);
                        let a = analytic.slots[slot_idx][p];
                        let denom = fd.abs().max(1.0);
                        assert!(
                            (a - fd).abs() <= 1e-6 * denom,
                            "{kind:?} {name}[{p}] analytic {a} vs fd {fd} (seed {seed})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn input_grad_matches_central_differences() {
        let h = 1e-5;
        let w0 = random_matrix(7, 5, 61);
        let upstream = random_matrix(3, 7, 62);
        for kind in all_kinds() {
            let layer = build(kind, &w0, &[0.0; 7], 63).unwrap();
            let x = random_matrix(3, 5, 64);
            let grads = layer.grad(&x, &upstream).unwrap();
            for r in 0..3 {
                for c in 0..5 {
                    let mut xp = x.clone();
                    xp.set(r, c, x.get(r, c) + h);
                    let plus = objective(&layer, &xp, &upstream);
                    xp.set(r, c, x.get(r, c) - h);
                    let minus = objective(&layer, &xp, &upstream);
                    let fd = (plus - minus) / (2.0 * h);
                    let a = grads.input_grad.get(r, c);
                    assert!((a - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn cersa_core_grad_matches_dense_restriction() {
        let w0 = random_matrix(8, 6, 71);
        let x = random_matrix(5, 6, 72);
        let upstream = random_matrix(5, 8, 73);
        let layer = build(AdapterKind::Cersa { alpha: 0.95, beta: 0.8 }, &w0, &[0.0; 8], 1).unwrap();
        let factors = layer.cersa_factors().unwrap();
        let k_beta = factors.selection.k_beta;
        // Dense route: U_p^T (upstream^T x) V_p, top-left block.
        let g = upstream.transpose().matmul(&x).unwrap();
        let dense = factors
            .u_p
            .transpose()
            .matmul(&g)
            .unwrap()
            .matmul(&factors.v_pt.transpose())
            .unwrap();
        let grads = layer.grad(&x, &upstream).unwrap();
        for r in 0..k_beta {
            for c in 0..k_beta {
                let a = grads.slots[0][r * k_beta + c];
                let d = dense.get(r, c);
                assert!((a - d).abs() <= 1e-10 * d.abs().max(1.0));
            }
        }
    }

    #[test]
    fn trainable_counts_match_enumeration() {
        let w0 = random_matrix(8, 6, 81);
        for kind in all_kinds() {
            let layer = build(kind, &w0, &[0.0; 8], 9).unwrap();
            let enumerated: usize = {
                let mut probe = layer.clone();
                probe.trainable_slots_mut().iter().map(|s| s.len()).sum()
            };
            assert_eq!(layer.trainable_count(), enumerated, "{kind:?}");
        }
    }

    #[test]
    fn lora_closed_form_count() {
        let w0 = random_matrix(16, 12, 83);
        let layer = build(AdapterKind::Lora { rank: 4 }, &w0, &[0.0; 16], 9).unwrap();
        assert_eq!(layer.trainable_count(), 4 * (16 + 12) + 16);
    }

    #[test]
    fn svfit_array_count_is_rank_plus_bias() {
        let w0 = random_matrix(8, 6, 85);
        let layer = build(AdapterKind::SvfitArray { rank: 5 }, &w0, &[0.0; 8], 9).unwrap();
        assert_eq!(layer.trainable_count(), 5 + 8);
    }

    #[test]
    fn frozen_hash_stable_under_trainable_writes() {
        let w0 = random_matrix(8, 6, 87);
        for kind in all_kinds() {
            let mut layer = build(kind, &w0, &[0.0; 8], 9).unwrap();
            let before = layer.frozen_state_hash();
            for slot in layer.trainable_slots_mut() {
                for v in slot.iter_mut() {
                    *v += 0.123;
                }
            }
            assert_eq!(before, layer.frozen_state_hash(), "{kind:?}");
        }
    }

    #[test]
    fn lossless_kinds_agree_at_init() {
        let w0 = random_matrix(7, 7, 91);
        let x = random_matrix(3, 7, 92);
        let bias = vec![0.25; 7];
        let full_rank = 7;
        let kinds = vec![
            AdapterKind::FullFt,
            AdapterKind::Lora { rank: 3 },
            AdapterKind::SvfitArray { rank: full_rank },
            AdapterKind::FrozenUv { rank: full_rank },
            AdapterKind::Cersa { alpha: 1.0, beta: 1.0 },
        ];
        let reference = build(AdapterKind::FullFt, &w0, &bias, 1)
            .unwrap()
            .forward(&x)
            .unwrap();
        for kind in kinds {
            let out = build(kind, &w0, &bias, 1).unwrap().forward(&x).unwrap();
            assert!(rel_err(&out, &reference) <= 1e-9, "{kind:?}");
        }
    }

    #[test]
    fn diagonal_core_cannot_reach_rotated_target() {
        // Teacher with an off-diagonal core component: reachable by the
        // matrix core exactly, never by any diagonal-only core.
        let u = crate::svd::test_support::random_orthogonal(6, 95).take_cols(3).unwrap();
        let v = crate::svd::test_support::random_orthogonal(5, 96).take_cols(3).unwrap();
        let rotated_core = Matrix::from_rows(&[
            vec![2.8, 0.9, 0.0],
            vec![-0.9, 2.8, 0.0],
            vec![0.0, 0.0, 1.5],
        ])
        .unwrap();
        let target = u.matmul(&rotated_core).unwrap().matmul(&v.transpose()).unwrap();
        // Best diagonal core in the same bases: least squares per diagonal
        // entry is just the matching diagonal of the rotated core.
        let best_diag: Vec<f64> = (0..3).map(|i| rotated_core.get(i, i)).collect();
        let diag_recon = u
            .matmul(&Matrix::from_diag(&best_diag))
            .unwrap()
            .matmul(&v.transpose())
            .unwrap();
        let diag_residual = diag_recon.sub(&target).unwrap().frobenius_norm();
        let off_diag_mass = (0.9f64 * 0.9 + 0.9 * 0.9).sqrt();
        assert!((diag_residual - off_diag_mass).abs() < 1e-10);
        // The matrix core reproduces the target exactly.
        let mat_recon = u.matmul(&rotated_core).unwrap().matmul(&v.transpose()).unwrap();
        assert_eq!(mat_recon.sub(&target).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn kind_validation() {
        assert!(AdapterKind::Lora { rank: 0 }.validate().is_err());
        assert!(AdapterKind::Cersa { alpha: 0.0, beta: 0.0 }.validate().is_err());
        assert!(AdapterKind::Cersa { alpha: 0.8, beta: 0.9 }.validate().is_err());
        assert!(AdapterKind::Cersa { alpha: 1.0, beta: 1.0 }.validate().is_ok());
        assert!(AdapterKind::CersaSplit { alpha: 1.2, take_top: true }.validate().is_err());
    }

    #[test]
    fn kind_serde_roundtrip() {
        for kind in all_kinds() {
            let json = serde_json::to_string(&kind).unwrap();
            let back: AdapterKind = serde_json::from_str(&json).unwrap();
            assert_eq!(kind, back);
        }
        let parsed: AdapterKind =
            serde_json::from_str(r#"{"kind":"cersa","alpha":0.95,"beta":0.9}"#).unwrap();
        assert_eq!(parsed, AdapterKind::Cersa { alpha: 0.95, beta: 0.9 });
    }
}
