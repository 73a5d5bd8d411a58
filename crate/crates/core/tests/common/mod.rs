#![allow(dead_code)]

use jfp_core::linalg::{CMatrix, C64};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

/// Unit-variance circularly symmetric complex Gaussian.
pub fn cn(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cn(rng))
}

pub fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..n).map(|_| cn(rng)).collect()
}

pub fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let v = random_vector(n, rng);
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z / norm).collect()
}

/// `‖QᴴQ − I‖_max`
pub fn orthonormality_error(q: &CMatrix) -> f64 {
    let g = q.adjoint().matmul(q).unwrap();
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}
