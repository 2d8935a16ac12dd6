//! Closed-form memory accounting and compression curves.
//!
//! Prices the fine-tuning methods over a transformer-like stack of adapted
//! matrices, prints break-even ranks, and writes a compression-curve CSV.
//!
//! ```bash
//! cargo run -p cersa-forge --example memory_footprint
//! ```

use cersa_forge::memory::{
    break_even_rank, compression_curve_csv, compression_curve_from_ranks,
    full_ft_report_from_params, lora_reference_rate, memory_report, Method,
};

fn main() -> cersa_forge::Result<()> {
    // 24 layers, Q and V matrices of width 1024.
    let dims: Vec<(usize, usize)> = (0..48).map(|_| (1024, 1024)).collect();

    println!(
        "{:<14} {:>12} {:>12} {:>12} {:>10}",
        "method", "trainable", "frozen", "total bytes", "total MB"
    );
    for method in [
        Method::FullFt,
        Method::Cersa { rank: 287 },
        Method::Svfit { rank: 64 },
        Method::Svft { sparse_params: 2048 },
        Method::Lora { rank: 32 },
    ] {
        let r = memory_report(method, &dims)?;
        println!(
            "{:<14} {:>12} {:>12} {:>12} {:>10.1}",
            r.method_label,
            r.trainable_params,
            r.frozen_params,
            r.total_bytes,
            r.total_mb()
        );
    }

    // Pricing a whole model directly from its parameter count.
    let ft = full_ft_report_from_params(303_300_000);
    println!(
        "\nfull fine-tuning of a 303.3M-parameter model: {:.1} MB total ({:.1} MB weights)",
        ft.total_mb(),
        ft.weights_mb()
    );

    println!("\nbreak-even trainable rank (largest r that still saves memory):");
    for (m, n) in [(768, 768), (1024, 1024), (1280, 1280), (4096, 1024)] {
        println!("  {m:>5} x {n:<5} -> r = {}", break_even_rank(m, n)?);
    }

    let ranks: Vec<usize> = (8..=512).step_by(8).collect();
    let curve = compression_curve_from_ranks(1024, 1024, &ranks)?;
    let below: Vec<_> = curve.iter().filter(|p| p.c < 1.0).collect();
    println!(
        "\ncompression on 1024x1024: c < 1 for {} of {} sampled ranks; c(64) = {:.4}",
        below.len(),
        curve.len(),
        curve.iter().find(|p| p.rank == 64).unwrap().c
    );
    println!(
        "reference: low-rank update at rank 32 costs c = {:.4} (never below 1)",
        lora_reference_rate(1024, 1024)?
    );

    let path = std::env::temp_dir().join("cersa-forge-compression-curve.csv");
    std::fs::write(&path, compression_curve_csv(&curve))?;
    println!("wrote {}", path.display());
    Ok(())
}
