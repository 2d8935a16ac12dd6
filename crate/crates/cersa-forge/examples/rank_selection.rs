//! Layer-wise rank selection from cumulative spectral energy.
//!
//! Builds a few synthetic "layers" with different spectral decay rates and
//! prints how many singular values each threshold keeps.
//!
//! ```bash
//! cargo run -p cersa-forge --example rank_selection
//! ```

use cersa_forge::spectrum::{energy_profile, layer_rank_report, select_rank};

fn main() -> cersa_forge::Result<()> {
    // Faster decay = more compressible layer.
    let layers: Vec<(String, Vec<f64>)> = [
        ("attention_query", 0.70f64),
        ("attention_value", 0.80),
        ("mlp_up", 0.92),
        ("mlp_down", 0.96),
    ]
    .iter()
    .map(|(name, decay)| {
        let sigma: Vec<f64> = (0..64).map(|i| 4.0 * decay.powi(i)).collect();
        (name.to_string(), sigma)
    })
    .collect();

    let thresholds = [0.8, 0.85, 0.9, 0.92, 0.95];
    let report = layer_rank_report(&layers, &thresholds)?;

    println!("{:<16} {:>6} {:>4} {:>8}", "layer", "alpha", "k", "kept %");
    for row in &report.rows {
        println!(
            "{:<16} {:>6} {:>4} {:>7.1}%",
            row.layer_label,
            row.threshold,
            row.k,
            100.0 * row.k as f64 / row.n_total as f64
        );
    }

    // The selection rule itself: smallest k whose energy fraction reaches
    // the threshold.
    let profile = energy_profile(&[3.0, 2.0, 1.0])?;
    println!(
        "\nspectrum [3, 2, 1]: threshold 0.6 -> k = {}, threshold 0.9 -> k = {}",
        select_rank(&profile, 0.6)?,
        select_rank(&profile, 0.9)?
    );

    let csv_path = std::env::temp_dir().join("cersa-forge-rank-report.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    println!("\nwrote {}", csv_path.display());
    Ok(())
}
