mod common;

use common::{cn, orthonormality_error, random_matrix, random_unit};
use jfp_autograd::{Graph, Tensor, Var};
use jfp_core::linalg::diff::{inv2x2, log_abs_det2x2, CVar};
use jfp_core::linalg::{det_small, hermitian_eig, inv_small, svd, CMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reconstruct(s: &jfp_core::linalg::Svd) -> CMatrix {
    let sig: Vec<C64> = s.sigma.iter().map(|&x| C64::new(x, 0.0)).collect();
    s.u.matmul(&CMatrix::diag(&sig)).unwrap().matmul(&s.v.adjoint()).unwrap()
}

#[test]
fn svd_random_shapes_reconstruct_and_stay_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let shapes = [(2, 8), (4, 8), (8, 8), (8, 2), (4, 32), (1, 5)];
    for trial in 0..1000 {
        let (m, n) = shapes[trial % shapes.len()];
        let a = random_matrix(m, n, &mut rng);
        let s = svd(&a).unwrap();
        let err = reconstruct(&s).sub(&a).unwrap().frobenius_norm();
        assert!(err < 1e-8 * a.frobenius_norm(), "trial {trial}: reconstruction error {err:e}");
        assert!(orthonormality_error(&s.u) < 1e-8, "trial {trial}: U not orthonormal");
        assert!(orthonormality_error(&s.v) < 1e-8, "trial {trial}: V not orthonormal");
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn svd_of_rank_one_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let u = random_unit(4, &mut rng);
        let v = random_unit(8, &mut rng);
        let scale = rng.random_range(0.5..3.0);
        let a = CMatrix::from_fn(4, 8, |r, c| u[r] * v[c].conj() * scale);
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - a.frobenius_norm()).abs() < 1e-10);
        assert!(s.sigma[1..].iter().all(|&x| x < 1e-10));
        assert!(orthonormality_error(&s.u) < 1e-8);
        assert!(reconstruct(&s).sub(&a).unwrap().frobenius_norm() < 1e-8 * a.frobenius_norm());
    }
}

#[test]
fn eig_of_gram_matches_squared_singular_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..1000 {
        let (m, n) = if trial % 2 == 0 { (2, 8) } else { (8, 8) };
        let h = random_matrix(m, n, &mut rng);
        let g = h.adjoint().matmul(&h).unwrap();
        let e = hermitian_eig(&g).unwrap();
        let s = svd(&h).unwrap();
        for (i, &lambda) in e.values.iter().enumerate() {
            let want = s.sigma.get(i).map_or(0.0, |x| x * x);
            assert!((lambda - want).abs() < 1e-8 * g.frobenius_norm().max(1.0), "trial {trial}: eig {i}");
        }
        assert!(orthonormality_error(&e.vectors) < 1e-8);
        for j in 0..n {
            let v = e.vectors.column(j);
            let gv = g.matvec(&v).unwrap();
            let resid: f64 = gv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b * e.values[j]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-8 * g.frobenius_norm(), "trial {trial}: residual {resid:e}");
        }
    }
}

#[test]
fn eig_phase_convention_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = random_matrix(2, 8, &mut rng);
    let g = h.adjoint().matmul(&h).unwrap();
    // a unitary phase on H leaves the Gram matrix and its eigenvectors untouched
    let rotated = h.scale(C64::from_polar(1.0, 0.7));
    let g2 = rotated.adjoint().matmul(&rotated).unwrap();
    let a = hermitian_eig(&g).unwrap().vectors.column(0);
    let b = hermitian_eig(&g2).unwrap().vectors.column(0);
    assert!(a[0].im.abs() < 1e-12 && a[0].re > 0.0);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() < 1e-10);
    }
}

#[test]
fn small_inverse_identity_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for n in 1..=4 {
        for _ in 0..200 {
            let a = random_matrix(n, n, &mut rng);
            let Ok(inv) = inv_small(&a) else { continue };
            let cond = a.frobenius_norm() * inv.frobenius_norm();
            if cond > 1e8 {
                continue;
            }
            let err = a.matmul(&inv).unwrap().sub(&CMatrix::identity(n)).unwrap().frobenius_norm();
            assert!(err < 1e-10, "n={n}: {err:e}");
            // det(A)·det(A⁻¹) = 1
            let d = det_small(&a).unwrap() * det_small(&inv).unwrap();
            assert!((d - C64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }
}

#[test]
fn log_det_gradient_at_identity_is_real_trace() {
    // d/dx ln|det(I + xA)| at x = 0 equals Re tr(A)
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = random_matrix(2, 2, &mut rng);
    let g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let eye = CVar::from_matrix(&g, &CMatrix::identity(2)).unwrap();
    let am = CVar::from_matrix(&g, &a).unwrap();
    let m = eye.add(am.mul_real(x.reshape(&[1, 1]).unwrap()).unwrap()).unwrap();
    let loss = log_abs_det2x2(m).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    let got = grads.get(x).unwrap().item();
    assert!((got - a.trace().re).abs() < 1e-12, "{got} vs {}", a.trace().re);
}

/// `gᴴ (Q + σ²I)⁻¹ g` for a 2-antenna receiver, as a function of the real and
/// imaginary parts of the desired and interfering effective channels.
fn sinr_2x2(parts: &[f64]) -> f64 {
    let g = [C64::new(parts[0], parts[1]), C64::new(parts[2], parts[3])];
    let q = [C64::new(parts[4], parts[5]), C64::new(parts[6], parts[7])];
    let r = CMatrix::from_fn(2, 2, |i, j| q[i] * q[j].conj() + if i == j { C64::new(0.5, 0.0) } else { C64::new(0.0, 0.0) });
    let ri = inv_small(&r).unwrap();
    let rg = ri.matvec(&g).unwrap();
    (g[0].conj() * rg[0] + g[1].conj() * rg[1]).re
}

#[test]
fn sinr_gradient_through_2x2_inverse_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let parts: Vec<f64> = (0..8).map(|_| cn(&mut rng).re).collect();

    let g = Graph::new();
    let p = g.param(Tensor::new(&[8], parts.clone()).unwrap());
    let col = |i: usize| -> CVar<'_> {
        let re = pick(p, &[i, i + 2]);
        let im = pick(p, &[i + 1, i + 3]);
        CVar::new(re, im).unwrap()
    };
    let gv = col(0);
    let qv = col(4);
    let outer = qv.matmul(qv.adjoint().unwrap()).unwrap();
    let noise = CVar::constant(&g, &[2, 2], &[C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)]).unwrap();
    let rinv = inv2x2(outer.add(noise).unwrap()).unwrap();
    let sinr = gv.adjoint().unwrap().matmul(rinv.matmul(gv).unwrap()).unwrap();
    assert!((sinr.re.item() - sinr_2x2(&parts)).abs() < 1e-12);
    let grads = g.backward(sinr.re.sum()).unwrap();
    let analytic = grads.get(p).unwrap().data().to_vec();

    let eps = 1e-5;
    for i in 0..8 {
        let mut hi = parts.clone();
        hi[i] += eps;
        let mut lo = parts.clone();
        lo[i] -= eps;
        let numeric = (sinr_2x2(&hi) - sinr_2x2(&lo)) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-3);
        assert!(rel < 1e-4, "component {i}: analytic {} numeric {numeric}", analytic[i]);
    }
}

/// Gathers entries of a flat variable into a `[len, 1]` column.
fn pick<'g>(v: Var<'g>, idx: &[usize]) -> Var<'g> {
    v.index_select(0, idx).unwrap().reshape(&[idx.len(), 1]).unwrap()
}
