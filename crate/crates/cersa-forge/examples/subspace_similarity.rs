//! Subspace drift under different fine-tuning methods.
//!
//! Trains the same task twice — once with a factored core over frozen bases,
//! once with full fine-tuning — and measures the Grassmann similarity
//! between the principal subspaces before and after. The factored run stays
//! at exactly 1; full fine-tuning drifts.
//!
//! ```bash
//! cargo run -p cersa-forge --example subspace_similarity
//! ```

use cersa_forge::adapter::AdapterKind;
use cersa_forge::analysis::{similarity_grid, subspace_similarity, SubspaceSide};
use cersa_forge::task::{gen_task, SynthTask};
use cersa_forge::train::{
    train_run_capturing, Activation, LayerDims, LossHead, ModelSpec, TrainConfig,
};

fn main() -> cersa_forge::Result<()> {
    let task = SynthTask::LowrankTeacherRegression {
        in_dim: 12,
        out_dim: 10,
        train_n: 128,
        test_n: 64,
        noise: 0.05,
        seed: 31,
        subspace_alpha: 0.9,
        perturb_scale: 0.15,
    };
    let data = gen_task(&task)?;
    let cfg = TrainConfig {
        learning_rate: 0.02,
        weight_decay: 1e-4,
        steps: 400,
        batch_size: 32,
        seed: 5,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        checkpoint_every: 100,
    };
    let model_for = |kind: AdapterKind| ModelSpec {
        layers: vec![LayerDims { in_dim: 12, out_dim: 10 }],
        activation: Activation::Tanh,
        head: LossHead::MeanSquaredError,
        kinds: vec![kind],
    };

    println!("{:<28} {:>14} {:>14}", "method", "psi_u", "psi_v");
    for kind in [
        AdapterKind::Cersa { alpha: 0.9, beta: 0.9 },
        AdapterKind::FullFt,
    ] {
        let (_, base, final_layers) = train_run_capturing(&model_for(kind), &cfg, &data, 1)?;
        let before = &base[0];
        let after = final_layers[0].effective_weight()?;
        let (psi_u, psi_v) = subspace_similarity(before, &after, 0.9)?;
        println!("{:<28} {:>14.10} {:>14.10}", kind.label(), psi_u, psi_v);

        if matches!(kind, AdapterKind::FullFt) {
            // The full grid behind heat-map figures: psi(i, j) over top-i /
            // top-j subspaces.
            let grid = similarity_grid(before, &after, 6, 6, SubspaceSide::Left)?;
            println!("\npsi(i, j) grid for full fine-tuning (left subspaces):");
            for (i, row) in grid.values.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                println!("  i={} [{}]", i + 1, cells.join(", "));
            }
            let path = std::env::temp_dir().join("cersa-forge-similarity-grid.csv");
            std::fs::write(&path, grid.to_csv())?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
