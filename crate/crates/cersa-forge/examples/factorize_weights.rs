//! Three-region factorization of a weight matrix.
//!
//! Factorizes one matrix at several `(alpha, beta)` settings and reports the
//! region sizes, the reconstruction error (equal to the discarded tail
//! energy), and the fine-tuning memory relative to the dense matrix.
//!
//! ```bash
//! cargo run -p cersa-forge --example factorize_weights
//! ```

use cersa_forge::factor::factorize;
use cersa_forge::memory::memory_report_layerwise;
use cersa_forge::task::decaying_random;

fn main() -> cersa_forge::Result<()> {
    let w = decaying_random(96, 64, 7)?;
    let dense_bytes = (96 * 64 * 4) as f64;

    println!(
        "{:>6} {:>6} {:>8} {:>8} {:>8} {:>12} {:>8}",
        "alpha", "beta", "r1", "r2", "r3", "recon err", "c"
    );
    for (alpha, beta) in [(1.0, 1.0), (0.95, 0.95), (0.9, 0.9), (0.95, 0.8), (0.8, 0.5)] {
        let f = factorize(&w, alpha, beta)?;
        let err = f.effective_weight()?.sub(&w)?.frobenius_norm() / w.frobenius_norm();
        let report = memory_report_layerwise(&[(96, 64, f.selection.clone())])?;
        let c = report.total_bytes as f64 / dense_bytes;
        println!(
            "{:>6} {:>6} {:>8} {:>8} {:>8} {:>12.3e} {:>8.4}",
            alpha, beta, f.selection.r1, f.selection.r2, f.selection.r3, err, c
        );
    }

    // The trainable core starts as the diagonal of the top singular values.
    let f = factorize(&w, 0.9, 0.9)?;
    println!(
        "\nat alpha = beta = 0.9: core is {}x{}, first diagonal entries {:.4}, {:.4}, off-diagonal {:.1}",
        f.s_core.rows(),
        f.s_core.cols(),
        f.s_core.get(0, 0),
        f.s_core.get(1, 1),
        f.s_core.get(0, 1),
    );
    println!("frozen middle diagonal holds {} values", f.sigma_frozen.len());
    Ok(())
}
