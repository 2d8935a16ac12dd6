//! A tour of the adapter parameterizations.
//!
//! Builds every kind around the same base weight, shows that lossless
//! settings agree at initialization, and tabulates trainable/frozen
//! parameter counts.
//!
//! ```bash
//! cargo run -p cersa-forge --example adapters_tour
//! ```

use cersa_forge::adapter::{build, AdapterKind};
use cersa_forge::task::decaying_random;

fn main() -> cersa_forge::Result<()> {
    let (out_dim, in_dim) = (24, 16);
    let w0 = decaying_random(out_dim, in_dim, 11)?;
    let bias = vec![0.0; out_dim];

    let kinds = [
        AdapterKind::FullFt,
        AdapterKind::Lora { rank: 4 },
        AdapterKind::SvfitArray { rank: 6 },
        AdapterKind::FrozenUv { rank: 6 },
        AdapterKind::Cersa { alpha: 0.95, beta: 0.95 },
        AdapterKind::Cersa { alpha: 0.95, beta: 0.8 },
        AdapterKind::CersaSplit { alpha: 0.95, take_top: true },
        AdapterKind::CersaSplit { alpha: 0.95, take_top: false },
    ];

    println!(
        "{:<28} {:>10} {:>10} {:>14}",
        "kind", "trainable", "frozen", "init dev from w0"
    );
    let x = decaying_random(5, in_dim, 13)?;
    let reference = build(AdapterKind::FullFt, &w0, &bias, 1)?.forward(&x)?;
    for kind in kinds {
        let layer = build(kind, &w0, &bias, 1)?;
        let out = layer.forward(&x)?;
        let dev = out.sub(&reference)?.frobenius_norm() / reference.frobenius_norm();
        println!(
            "{:<28} {:>10} {:>10} {:>14.3e}",
            kind.label(),
            layer.trainable_count(),
            layer.frozen_count(),
            dev
        );
    }
    println!(
        "\nlossless kinds (full_ft, lora, cersa at alpha=beta=1) match w0 exactly at step 0;\n\
         truncating kinds deviate by their discarded tail energy."
    );

    // Gradients flow only into trainable tensors.
    let layer = build(AdapterKind::Cersa { alpha: 0.9, beta: 0.9 }, &w0, &bias, 1)?;
    let upstream = decaying_random(5, out_dim, 17)?;
    let grads = layer.grad(&x, &upstream)?;
    println!(
        "\ncersa layer gradient slots: {:?} with sizes {:?}",
        layer.trainable_slot_names(),
        grads.slots.iter().map(|s| s.len()).collect::<Vec<_>>()
    );
    Ok(())
}
