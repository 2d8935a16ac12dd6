//! Re-expressing a rank-k matrix on alternate orthonormal bases.
//!
//! Any pair of orthonormal bases spanning the singular subspaces admits a
//! core matrix that reconstructs the original exactly: this is why training
//! a full core over frozen bases loses no expressiveness inside the retained
//! subspace.
//!
//! ```bash
//! cargo run -p cersa-forge --example subspace_rebase
//! ```

use cersa_forge::factor::core_for_bases;
use cersa_forge::matrix::Matrix;
use cersa_forge::svd::svd;
use cersa_forge::task::decaying_random;

fn main() -> cersa_forge::Result<()> {
    // A rank-4 matrix built from known factors.
    let k = 4;
    let u = svd(&decaying_random(10, 10, 1)?)?.u.take_cols(k)?;
    let v = svd(&decaying_random(8, 8, 2)?)?.u.take_cols(k)?;
    let sigma = [5.0, 3.0, 1.5, 0.5];
    let m = u.matmul(&Matrix::from_diag(&sigma))?.matmul(&v.transpose())?;

    // On its own singular bases the core is just diag(sigma).
    let f = svd(&m)?;
    let s_plain = core_for_bases(&m, &f.u.take_cols(k)?, &f.vt.take_rows(k)?.transpose())?;
    println!("core on the matrix's own bases (diagonal up to round-off):");
    print_matrix(&s_plain);

    // Rotate both bases by arbitrary orthogonal matrices: still exact.
    let rot_l = svd(&decaying_random(k, k, 3)?)?.u;
    let rot_r = svd(&decaying_random(k, k, 4)?)?.u;
    let q = f.u.take_cols(k)?.matmul(&rot_l)?;
    let q_prime = f.vt.take_rows(k)?.transpose().matmul(&rot_r)?;
    let s_rotated = core_for_bases(&m, &q, &q_prime)?;
    let recon = q.matmul(&s_rotated)?.matmul(&q_prime.transpose())?;
    let residual = recon.sub(&m)?.frobenius_norm() / m.frobenius_norm();
    println!("\ncore on rotated bases (dense, same information):");
    print_matrix(&s_rotated);
    println!("\nreconstruction residual through rotated bases: {residual:.3e}");

    // A basis spanning the wrong subspace is rejected.
    let elsewhere = svd(&decaying_random(10, 10, 5)?)?.u.take_cols(k)?;
    match core_for_bases(&m, &elsewhere, &q_prime) {
        Err(e) => println!("wrong-span basis rejected: {e}"),
        Ok(_) => unreachable!("span check must fire"),
    }
    Ok(())
}

fn print_matrix(m: &Matrix) {
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| format!("{:>8.4}", m.get(r, c))).collect();
        println!("  [{}]", row.join(", "));
    }
}
