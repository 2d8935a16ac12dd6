//! Closed-form memory and compression accounting.
//!
//! Two surfaces live here. The method table prices fine-tuning strategies in
//! parameter units per adapted `m x n` matrix (weights, gradients, two
//! optimizer moment buffers), at 4 bytes per parameter:
//!
//! | method                | weights            | gradients | optimizer |
//! |-----------------------|--------------------|-----------|-----------|
//! | full fine-tuning      | `mn`               | `mn`      | `2mn`     |
//! | factored core, rank r | `mr + nr + r^2`    | `r^2`     | `2r^2`    |
//! | singular-value array  | `2mn + m`          | `r`       | `2r`      |
//! | sparse singular (e)   | `2mn + e`          | `e`       | `2e`      |
//! | low-rank update (r)   | `mn + mr + nr`     | `mr + nr` | `2(mr+nr)`|
//!
//! The adapter accounting instead prices the layers this crate actually
//! builds (truncated carriers, bias included) and must agree exactly with
//! enumerating their tensors.

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterKind, AdapterLayer};
use crate::error::{Error, Result};
use crate::spectrum::RankSelection;

/// Accounting assumes single-precision storage.
pub const BYTES_PER_PARAM: u64 = 4;
/// A megabyte is 2^20 bytes throughout.
pub const MB: f64 = (1u64 << 20) as f64;

/// A fine-tuning method priced by the closed-form table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Full fine-tuning of every adapted matrix.
    FullFt,
    /// Factored trainable core at a uniform rank (`beta = alpha` layout).
    Cersa { rank: usize },
    /// Trainable singular-value array over full stored bases.
    Svfit { rank: usize },
    /// Frozen bases with `e` sparsified trainable singular parameters.
    Svft { sparse_params: usize },
    /// Additive low-rank update over a frozen base.
    Lora { rank: usize },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::FullFt => "full_ft".into(),
            Method::Cersa { rank } => format!("cersa_r{rank}"),
            Method::Svfit { rank } => format!("svfit_r{rank}"),
            Method::Svft { sparse_params } => format!("svft_e{sparse_params}"),
            Method::Lora { rank } => format!("lora_r{rank}"),
        }
    }
}

/// Byte-level accounting for one method over a set of adapted matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryReport {
    pub method_label: String,
    pub weights_params: u64,
    pub gradient_params: u64,
    pub optimizer_params: u64,
    pub frozen_params: u64,
    pub trainable_params: u64,
    pub weights_bytes: u64,
    pub gradient_bytes: u64,
    pub optimizer_bytes: u64,
    pub total_bytes: u64,
    pub bytes_per_param: u64,
}

impl MemoryReport {
    fn from_params(label: String, weights: u64, gradients: u64, trainable: u64) -> Self {
        // Two moment buffers: optimizer state is always twice the gradients.
        let optimizer = 2 * gradients;
        MemoryReport {
            method_label: label,
            weights_params: weights,
            gradient_params: gradients,
            optimizer_params: optimizer,
            frozen_params: weights - trainable.min(weights),
            trainable_params: trainable,
            weights_bytes: weights * BYTES_PER_PARAM,
            gradient_bytes: gradients * BYTES_PER_PARAM,
            optimizer_bytes: optimizer * BYTES_PER_PARAM,
            total_bytes: (weights + 3 * gradients) * BYTES_PER_PARAM,
            bytes_per_param: BYTES_PER_PARAM,
        }
    }

    pub fn total_mb(&self) -> f64 {
        self.total_bytes as f64 / MB
    }

    pub fn weights_mb(&self) -> f64 {
        self.weights_bytes as f64 / MB
    }

    /// CSV row matching [`memory_csv_header`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            crate::report::csv_field(&self.method_label),
            self.trainable_params,
            self.frozen_params,
            self.weights_bytes,
            self.gradient_bytes,
            self.optimizer_bytes,
            self.total_bytes,
        )
    }
}

pub fn memory_csv_header() -> &'static str {
    "method,trainable_params,frozen_params,weights_bytes,gradient_bytes,optimizer_bytes,total_bytes\n"
}

fn check_dims(dims: &[(usize, usize)]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no adapted matrices given".into()));
    }
    if dims.iter().any(|(m, n)| *m == 0 || *n == 0) {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    Ok(())
}

/// Price `method` over the adapted matrices `dims`.
pub fn memory_report(method: Method, dims: &[(usize, usize)]) -> Result<MemoryReport> {
    check_dims(dims)?;
    let (mut weights, mut gradients, mut trainable) = (0u64, 0u64, 0u64);
    for &(m, n) in dims {
        let (m, n) = (m as u64, n as u64);
        let r_max = m.min(n);
        let (w, g, t) = match method {
            Method::FullFt => (m * n, m * n, m * n),
            Method::Cersa { rank } => {
                let r = check_rank_u64(rank, r_max)?;
                (m * r + n * r + r * r, r * r, r * r)
            }
            Method::Svfit { rank } => {
                let r = check_rank_u64(rank, r_max)?;
                (2 * m * n + m, r, r)
            }
            Method::Svft { sparse_params } => {
                if sparse_params == 0 {
                    return Err(Error::InvalidArgument(
                        "sparse parameter count must be positive".into(),
                    ));
                }
                let e = sparse_params as u64;
                (2 * m * n + e, e, e)
            }
            Method::Lora { rank } => {
                let r = check_rank_u64(rank, r_max)?;
                (m * n + m * r + n * r, m * r + n * r, m * r + n * r)
            }
        };
        weights += w;
        gradients += g;
        trainable += t;
    }
    Ok(MemoryReport::from_params(method.label(), weights, gradients, trainable))
}

fn check_rank_u64(rank: usize, r_max: u64) -> Result<u64> {
    if rank == 0 {
        return Err(Error::InsufficientRank("rank 0 has no trainable subspace".into()));
    }
    if rank as u64 > r_max {
        return Err(Error::InsufficientRank(format!(
            "rank {rank} exceeds min dimension {r_max}"
        )));
    }
    Ok(rank as u64)
}

/// Full fine-tuning priced from a total parameter count (weights, gradients,
/// and two moment buffers for every parameter).
pub fn full_ft_report_from_params(total_params: u64) -> MemoryReport {
    MemoryReport::from_params("full_ft".into(), total_params, total_params, total_params)
}

/// Generalized factored-core accounting from per-layer selections:
/// weights `m k_alpha + n k_alpha + (k_alpha - k_beta) + k_beta^2`, gradients
/// `k_beta^2`. Reduces to the uniform-rank row when `beta = alpha`.
pub fn memory_report_layerwise(
    selections: &[(usize, usize, RankSelection)],
) -> Result<MemoryReport> {
    if selections.is_empty() {
        return Err(Error::InvalidArgument("no selections given".into()));
    }
    let (mut weights, mut gradients) = (0u64, 0u64);
    for (m, n, sel) in selections {
        let (m, n) = (*m as u64, *n as u64);
        let (ka, kb) = (sel.k_alpha as u64, sel.k_beta as u64);
        weights += m * ka + n * ka + (ka - kb) + kb * kb;
        gradients += kb * kb;
    }
    Ok(MemoryReport::from_params("cersa_layerwise".into(), weights, gradients, gradients))
}

/// Closed-form `(frozen, trainable)` parameter counts for a built adapter
/// layer, bias included. Must agree exactly with enumerating the layer's
/// tensors.
pub fn adapter_param_counts(layer: &AdapterLayer) -> (usize, usize) {
    (layer.frozen_count(), layer.trainable_count())
}

/// Closed-form counts from the kind and dimensions alone, for kinds whose
/// ranks are explicit. Factored kinds driven by thresholds need a built
/// layer (the selected rank depends on the spectrum).
pub fn adapter_param_counts_for(
    kind: &AdapterKind,
    out_dim: usize,
    in_dim: usize,
) -> Option<(usize, usize)> {
    let (m, n) = (out_dim, in_dim);
    match kind {
        AdapterKind::FullFt => Some((0, m * n + m)),
        AdapterKind::Lora { rank } => Some((m * n, rank * (m + n) + m)),
        AdapterKind::SvfitArray { rank } => Some((rank * (m + n), rank + m)),
        AdapterKind::FrozenUv { rank } => Some((rank * (m + n), rank * rank + m)),
        AdapterKind::Cersa { .. } | AdapterKind::CersaSplit { .. } => None,
    }
}

/// One point of a compression curve: fine-tuning footprint of the factored
/// core over the footprint of the dense pre-trained matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionPoint {
    /// Energy threshold that produced the rank, when the curve came from a
    /// spectrum.
    pub alpha: Option<f64>,
    pub rank: usize,
    pub c: f64,
}

/// `c = (m r + n r + 4 r^2) / (m n)`.
pub fn compression_rate(m: usize, n: usize, rank: usize) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    if rank == 0 {
        return Err(Error::InsufficientRank("rank 0 has no trainable subspace".into()));
    }
    let (m, n, r) = (m as f64, n as f64, rank as f64);
    Ok((m * r + n * r + 4.0 * r * r) / (m * n))
}

/// Reference line: the low-rank-update method at rank 32 over the same
/// matrix, `(mn + 4*32*(m+n)) / mn`.
pub fn lora_reference_rate(m: usize, n: usize) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    let (mf, nf) = (m as f64, n as f64);
    Ok((mf * nf + 4.0 * 32.0 * (mf + nf)) / (mf * nf))
}

/// Curve from an explicit rank list.
pub fn compression_curve_from_ranks(
    m: usize,
    n: usize,
    ranks: &[usize],
) -> Result<Vec<CompressionPoint>> {
    ranks
        .iter()
        .map(|&rank| Ok(CompressionPoint { alpha: None, rank, c: compression_rate(m, n, rank)? }))
        .collect()
}

/// Curve from energy thresholds resolved against a spectrum.
pub fn compression_curve_from_spectrum(
    m: usize,
    n: usize,
    sigma: &[f64],
    alphas: &[f64],
) -> Result<Vec<CompressionPoint>> {
    let profile = crate::spectrum::energy_profile(sigma)?;
    alphas
        .iter()
        .map(|&alpha| {
            let rank = crate::spectrum::select_rank(&profile, alpha)?;
            Ok(CompressionPoint { alpha: Some(alpha), rank, c: compression_rate(m, n, rank)? })
        })
        .collect()
}

/// CSV with columns `alpha_or_rank,r,c`.
pub fn compression_curve_csv(points: &[CompressionPoint]) -> String {
    let mut out = String::from("alpha_or_rank,r,c\n");
    for p in points {
        let first = match p.alpha {
            Some(a) => crate::report::fmt_real(a),
            None => p.rank.to_string(),
        };
        out.push_str(&format!("{first},{},{}\n", p.rank, crate::report::fmt_real(p.c)));
    }
    out
}

/// Largest rank that still saves memory: the greatest `r` with
/// `(m + n) r + 4 r^2 < m n`, 0 when no rank saves anything.
///
/// Computed from the positive root of `4 r^2 + (m + n) r - m n`, then
/// corrected by direct integer checks; when the root is an exact integer the
/// strict inequality excludes it, so a plain floor would be off by one.
pub fn break_even_rank(m: usize, n: usize) -> Result<usize> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    let saves = |r: u64| -> bool {
        let (m, n) = (m as u64, n as u64);
        (m + n) * r + 4 * r * r < m * n
    };
    let (mf, nf) = (m as f64, n as f64);
    let s = mf + nf;
    let root = (-s + (s * s + 16.0 * mf * nf).sqrt()) / 8.0;
    let mut r = root.floor().max(0.0) as u64;
    while r > 0 && !saves(r) {
        r -= 1;
    }
    while saves(r + 1) {
        r += 1;
    }
    Ok(r as usize)
}
