//! Deterministic synthetic tasks.
//!
//! Three generators stand in for real datasets: Gaussian blob classification,
//! a regression teacher perturbed inside the principal subspace of a base
//! matrix, and a regression teacher whose core is rotated inside that
//! subspace (the task a diagonal-only core cannot fit). Every byte of data is
//! a function of the task seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectrum;
use crate::svd::svd;

/// Spectrum decay ratio for generated base matrices. Heavy-tailed enough
/// that energy thresholds select a strict subset of the dimensions.
const BASE_SPECTRUM_DECAY: f64 = 0.8;
const BASE_SPECTRUM_SCALE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum SynthTask {
    /// Gaussian clusters with integer labels, one-hot encoded targets.
    BlobsClassification {
        in_dim: usize,
        classes: usize,
        train_n: usize,
        test_n: usize,
        noise: f64,
        seed: u64,
    },
    /// Targets `y = x * W_star^T` where `W_star` perturbs a base matrix
    /// inside its principal subspace. The perturbation is energy-weighted,
    /// so most of the learnable signal sits on the top singular directions.
    LowrankTeacherRegression {
        in_dim: usize,
        out_dim: usize,
        train_n: usize,
        test_n: usize,
        noise: f64,
        seed: u64,
        /// Energy threshold defining the teacher's principal subspace.
        subspace_alpha: f64,
        /// Scale of the in-subspace perturbation.
        perturb_scale: f64,
    },
    /// Teacher `W_star = U_p * R * diag(sigma) * V_p^T` for a small rotation
    /// `R`. A full core matrix represents `R * diag(sigma)` exactly; a
    /// diagonal array cannot reach the off-diagonal components.
    RotatedTeacherRegression {
        in_dim: usize,
        out_dim: usize,
        train_n: usize,
        test_n: usize,
        noise: f64,
        seed: u64,
        subspace_alpha: f64,
        /// Rotation angle scale in radians; 0 reduces to a diagonal-fittable
        /// task.
        rotation_angle: f64,
    },
}

impl SynthTask {
    pub fn seed(&self) -> u64 {
        match self {
            SynthTask::BlobsClassification { seed, .. }
            | SynthTask::LowrankTeacherRegression { seed, .. }
            | SynthTask::RotatedTeacherRegression { seed, .. } => *seed,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SynthTask::BlobsClassification { .. } => "blobs-classification",
            SynthTask::LowrankTeacherRegression { .. } => "lowrank-teacher-regression",
            SynthTask::RotatedTeacherRegression { .. } => "rotated-teacher-regression",
        }
    }
}

/// Generated train/test split plus the base matrix the teacher (if any) was
/// derived from. Model layers matching the base shape start from it, so the
/// adapted subspace is aligned with the teacher's.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train_x: Matrix,
    pub train_y: Matrix,
    pub test_x: Matrix,
    pub test_y: Matrix,
    pub base_weight: Option<Matrix>,
    /// The exact linear teacher behind regression targets (pre-noise), for
    /// oracle checks.
    pub teacher: Option<Matrix>,
    pub classes: Option<usize>,
}

/// Random matrix with a geometric singular-value profile.
pub fn decaying_random(out_dim: usize, in_dim: usize, seed: u64) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Matrix::from_fn(out_dim, in_dim, |_, _| rng.sample(StandardNormal));
    let f = svd(&raw)?;
    let sigma: Vec<f64> = (0..f.sigma.len())
        .map(|i| BASE_SPECTRUM_SCALE * BASE_SPECTRUM_DECAY.powi(i as i32))
        .collect();
    f.u.matmul(&f.vt.scale_rows(&sigma)?)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Product of adjacent-pair Givens rotations with angles scaled by `angle`.
/// Exactly orthogonal; `angle = 0` yields the identity.
fn small_rotation(k: usize, angle: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut r = Matrix::identity(k);
    for i in 0..k.saturating_sub(1) {
        let theta = angle * rng.gen_range(-1.0..1.0);
        let (c, s) = (theta.cos(), theta.sin());
        for row in 0..k {
            let vi = r.get(row, i);
            let vj = r.get(row, i + 1);
            r.set(row, i, c * vi - s * vj);
            r.set(row, i + 1, s * vi + c * vj);
        }
    }
    r
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be positive")));
    }
    Ok(())
}

/// Generate the train/test sets for a task description. The same task value
/// always produces identical data.
pub fn gen_task(task: &SynthTask) -> Result<TaskData> {
    match task {
        SynthTask::BlobsClassification { in_dim, classes, train_n, test_n, noise, seed } => {
            check_positive("in_dim", *in_dim)?;
            check_positive("classes", *classes)?;
            check_positive("train_n", *train_n)?;
            check_positive("test_n", *test_n)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let centers = gaussian_matrix(&mut rng, *classes, *in_dim).scale(2.5);
            let sample = |n: usize, rng: &mut ChaCha8Rng| {
                let mut x = Matrix::zeros(n, *in_dim);
                let mut y = Matrix::zeros(n, *classes);
                for i in 0..n {
                    let label = i % *classes; // balanced classes
                    for d in 0..*in_dim {
                        let g: f64 = rng.sample(StandardNormal);
                        x.set(i, d, centers.get(label, d) + noise * g);
                    }
                    y.set(i, label, 1.0);
                }
                (x, y)
            };
            let (train_x, train_y) = sample(*train_n, &mut rng);
            let (test_x, test_y) = sample(*test_n, &mut rng);
            Ok(TaskData {
                train_x,
                train_y,
                test_x,
                test_y,
                base_weight: None,
                teacher: None,
                classes: Some(*classes),
            })
        }
        SynthTask::LowrankTeacherRegression {
            in_dim,
            out_dim,
            train_n,
            test_n,
            noise,
            seed,
            subspace_alpha,
            perturb_scale,
        } => {
            check_positive("in_dim", *in_dim)?;
            check_positive("out_dim", *out_dim)?;
            check_positive("train_n", *train_n)?;
            check_positive("test_n", *test_n)?;
            let base = decaying_random(*out_dim, *in_dim, seed.wrapping_mul(31).wrapping_add(1))?;
            let f = svd(&base)?;
            let profile = spectrum::energy_profile(&f.sigma)?;
            let k = spectrum::select_rank(&profile, *subspace_alpha)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            // Energy-weighted in-subspace perturbation of the core.
            let mut core = Matrix::from_diag(&f.sigma[..k]);
            for r in 0..k {
                for c in 0..k {
                    let g: f64 = rng.sample(StandardNormal);
                    let v = core.get(r, c);
                    core.set(r, c, v + perturb_scale * g * (f.sigma[r] * f.sigma[c]).sqrt());
                }
            }
            let u_p = f.u.take_cols(k)?;
            let v_pt = f.vt.take_rows(k)?;
            let teacher = u_p.matmul(&core)?.matmul(&v_pt)?;
            let (train_x, train_y, test_x, test_y) =
                regression_sets(&teacher, *train_n, *test_n, *noise, &mut rng);
            Ok(TaskData {
                train_x,
                train_y,
                test_x,
                test_y,
                base_weight: Some(base),
                teacher: Some(teacher),
                classes: None,
            })
        }
        SynthTask::RotatedTeacherRegression {
            in_dim,
            out_dim,
            train_n,
            test_n,
            noise,
            seed,
            subspace_alpha,
            rotation_angle,
        } => {
            check_positive("in_dim", *in_dim)?;
            check_positive("out_dim", *out_dim)?;
            check_positive("train_n", *train_n)?;
            check_positive("test_n", *test_n)?;
            let base = decaying_random(*out_dim, *in_dim, seed.wrapping_mul(31).wrapping_add(1))?;
            let f = svd(&base)?;
            let profile = spectrum::energy_profile(&f.sigma)?;
            let k = spectrum::select_rank(&profile, *subspace_alpha)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let rotation = small_rotation(k, *rotation_angle, &mut rng);
            let core = rotation.scale_cols(&f.sigma[..k])?; // R * diag(sigma)
            let u_p = f.u.take_cols(k)?;
            let v_pt = f.vt.take_rows(k)?;
            let teacher = u_p.matmul(&core)?.matmul(&v_pt)?;
            let (train_x, train_y, test_x, test_y) =
                regression_sets(&teacher, *train_n, *test_n, *noise, &mut rng);
            Ok(TaskData {
                train_x,
                train_y,
                test_x,
                test_y,
                base_weight: Some(base),
                teacher: Some(teacher),
                classes: None,
            })
        }
    }
}

fn regression_sets(
    teacher: &Matrix,
    train_n: usize,
    test_n: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> (Matrix, Matrix, Matrix, Matrix) {
    let in_dim = teacher.cols();
    let sample = |n: usize, rng: &mut ChaCha8Rng| {
        let x = gaussian_matrix(rng, n, in_dim);
        let mut y = x.matmul(&teacher.transpose()).unwrap();
        if noise != 0.0 {
            for v in y.data_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v += noise * g;
            }
        }
        (x, y)
    };
    let (train_x, train_y) = sample(train_n, rng);
    let (test_x, test_y) = sample(test_n, rng);
    (train_x, train_y, test_x, test_y)
}
