//! The checkpoint container format: JSON manifest plus a raw tensor blob.
//!
//! Saves a container with f64 and f32 tensors and metadata, reloads it, and
//! verifies the round trip is bitwise lossless.
//!
//! ```bash
//! cargo run -p cersa-forge --example checkpoint_roundtrip
//! ```

use cersa_forge::checkpoint::{Container, TensorData};
use cersa_forge::task::decaying_random;

fn main() -> cersa_forge::Result<()> {
    let mut container = Container::new();
    let w = decaying_random(6, 4, 41)?;
    container.add_matrix("encoder/weight", &w)?;
    container.add_vector("encoder/bias", &[0.1, -0.2, 0.3, 0.0, 1.5, -2.0])?;
    container.add(
        "encoder/scale",
        vec![4],
        TensorData::F32(vec![1.0f32, 0.5, 0.25, 0.125]),
    )?;
    container
        .metadata
        .insert("note".into(), serde_json::json!({"alpha": 0.95, "source": "example"}));

    let path = std::env::temp_dir().join("cersa-forge-example.cersa");
    container.save(&path)?;
    let on_disk = std::fs::read(&path)?;
    println!("wrote {} ({} bytes)", path.display(), on_disk.len());

    let reloaded = Container::load(&path)?;
    println!("\ntensors:");
    for t in reloaded.tensors() {
        println!("  {:<16} shape {:?} dtype {:?}", t.name, t.shape, t.data.dtype());
    }
    println!("metadata: {}", serde_json::to_string(&reloaded.metadata)?);

    let identical = reloaded.to_bytes()? == on_disk;
    println!("\nround trip bitwise lossless: {identical}");
    assert!(identical);

    // Stored values really are untouched, down to the last bit.
    let w_back = reloaded.matrix("encoder/weight")?;
    assert_eq!(w.data(), w_back.data());
    println!("f64 weight bits identical: true");
    Ok(())
}
