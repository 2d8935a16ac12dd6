//! Cumulative spectral energy and layer-wise rank selection.
//!
//! The energy retained by a rank-k truncation is the prefix sum of squared
//! singular values over their total. Two thresholds pick the region sizes:
//! `alpha` bounds the retained subspace, `beta <= alpha` bounds the trainable
//! block inside it. The remaining middle block stays frozen and everything
//! past `k_alpha` is discarded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared singular values with their prefix sums.
#[derive(Debug, Clone)]
pub struct EnergyProfile {
    sigma_sq: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
}

impl EnergyProfile {
    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_sq.is_empty()
    }

    /// Fraction of total energy kept by the top `k` values.
    pub fn retained_fraction(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cumulative[k.min(self.len()) - 1] / self.total
        }
    }
}

/// Build an [`EnergyProfile`] from a descending, non-negative spectrum.
///
/// Errors on an empty or unsorted spectrum, negative entries, and on zero
/// total energy (a zero layer has no principal subspace to adapt).
pub fn energy_profile(sigma: &[f64]) -> Result<EnergyProfile> {
    if sigma.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::NonFinite("spectrum".into()));
    }
    if sigma.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "spectrum must be sorted in descending order".into(),
        ));
    }
    let sigma_sq: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    let mut cumulative = Vec::with_capacity(sigma_sq.len());
    let mut acc = 0.0;
    for s in &sigma_sq {
        acc += s;
        cumulative.push(acc);
    }
    // Total is defined as the last prefix sum, so the final ratio is exactly 1.
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(EnergyProfile { sigma_sq, cumulative, total })
}

/// Smallest `k` whose retained energy fraction reaches `threshold`.
///
/// The comparison is `>=` with no epsilon slack: exact equality selects that
/// index.
pub fn select_rank(profile: &EnergyProfile, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    for (idx, c) in profile.cumulative.iter().enumerate() {
        if c / profile.total >= threshold {
            return Ok(idx + 1);
        }
    }
    // The final ratio is exactly 1.0, so the loop always returns.
    Ok(profile.len())
}

/// Region sizes chosen by the `(alpha, beta)` threshold pair.
///
/// `r1 = k_beta` is the trainable block, `r2 = k_alpha - k_beta` the frozen
/// middle, `r3 = n_total - k_alpha` the discarded tail;
/// `r1 + r2 + r3 == n_total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub alpha: f64,
    pub beta: f64,
    pub k_alpha: usize,
    pub k_beta: usize,
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
    pub n_total: usize,
}

impl RankSelection {
    fn from_ranks(alpha: f64, beta: f64, k_alpha: usize, k_beta: usize, n_total: usize) -> Self {
        debug_assert!(k_beta <= k_alpha && k_alpha <= n_total);
        RankSelection {
            alpha,
            beta,
            k_alpha,
            k_beta,
            r1: k_beta,
            r2: k_alpha - k_beta,
            r3: n_total - k_alpha,
            n_total,
        }
    }
}

/// Resolve both thresholds against one profile.
pub fn make_selection(profile: &EnergyProfile, alpha: f64, beta: f64) -> Result<RankSelection> {
    if beta > alpha {
        return Err(Error::InvalidArgument(format!(
            "trainable threshold exceeds retention threshold (beta = {beta} > alpha = {alpha})"
        )));
    }
    let k_alpha = select_rank(profile, alpha)?;
    let k_beta = select_rank(profile, beta)?;
    Ok(RankSelection::from_ranks(alpha, beta, k_alpha, k_beta, profile.len()))
}

/// Selection with an explicitly chosen trainable rank instead of a `beta`
/// threshold. The recorded `beta` is the energy fraction actually retained by
/// the top `k_beta` values, so re-running [`make_selection`] with it
/// reproduces the same ranks.
pub fn make_selection_with_k_beta(
    profile: &EnergyProfile,
    alpha: f64,
    k_beta: usize,
) -> Result<RankSelection> {
    let k_alpha = select_rank(profile, alpha)?;
    if k_beta == 0 || k_beta > k_alpha {
        return Err(Error::InsufficientRank(format!(
            "trainable rank {k_beta} out of range 1..={k_alpha}"
        )));
    }
    let beta = profile.retained_fraction(k_beta);
    Ok(RankSelection::from_ranks(alpha, beta, k_alpha, k_beta, profile.len()))
}

/// One `(layer, threshold)` cutoff entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReportRow {
    pub layer_label: String,
    pub threshold: f64,
    pub k: usize,
    pub n_total: usize,
}

/// Per-layer, per-threshold cutoff indices, ready for CSV/JSON emission.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LayerRankReport {
    pub rows: Vec<RankReportRow>,
}

impl LayerRankReport {
    /// CSV with columns `layer_label,threshold,k,n_total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_label,threshold,k,n_total\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::report::csv_field(&row.layer_label),
                crate::report::fmt_real(row.threshold),
                row.k,
                row.n_total
            ));
        }
        out
    }
}

/// Cutoff indices for every `(layer, threshold)` pair. Per-layer failures are
/// reported with the layer label attached.
pub fn layer_rank_report(
    layers: &[(String, Vec<f64>)],
    thresholds: &[f64],
) -> Result<LayerRankReport> {
    let mut rows = Vec::new();
    for (label, sigma) in layers {
        let profile = energy_profile(sigma).map_err(|e| e.for_layer(label.clone()))?;
        for &threshold in thresholds {
            let k = select_rank(&profile, threshold).map_err(|e| e.for_layer(label.clone()))?;
            rows.push(RankReportRow {
                layer_label: label.clone(),
                threshold,
                k,
                n_total: profile.len(),
            });
        }
    }
    Ok(LayerRankReport { rows })
}
