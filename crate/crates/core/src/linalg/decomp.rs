use super::{fix_phase, inner, norm, CMatrix, C64};
use crate::{Error, Result};

const MAX_SWEEPS: usize = 80;
const SMALL_DIM: usize = 4;

/// Thin singular value decomposition `A = U·diag(σ)·Vᴴ` with
/// `r = min(rows, cols)` columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

/// Eigenpairs of a Hermitian matrix, eigenvalues descending, eigenvectors
/// as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct Eig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Each right singular vector is phase-normalized so that its first
/// significant component is real and positive; the matching left vector
/// carries the same phase so the factorization is unchanged.
pub fn svd(a: &CMatrix) -> Result<Svd> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::Dimension("svd of an empty matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("svd input has non-finite entries".into()));
    }
    if m < n {
        let t = svd_tall(&a.adjoint())?;
        let mut out = Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        canonical_phase(&mut out);
        return Ok(out);
    }
    let mut out = svd_tall(a)?;
    canonical_phase(&mut out);
    Ok(out)
}

fn canonical_phase(s: &mut Svd) {
    for j in 0..s.sigma.len() {
        let mut v = s.v.column(j);
        let phase = fix_phase(&mut v);
        s.v.set_column(j, &v);
        let u: Vec<C64> = s.u.column(j).iter().map(|z| z * phase).collect();
        s.u.set_column(j, &u);
    }
}

fn svd_tall(a: &CMatrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<C64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<C64>> = (0..n)
        .map(|j| (0..n).map(|i| C64::new(f64::from(u8::from(i == j)), 0.0)).collect())
        .collect();

    let mut converged = false;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        worst = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma = inner(&cols[p], &cols[q]);
                let g = gamma.norm();
                if g == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let ratio = g / (alpha * beta).sqrt();
                worst = worst.max(ratio);
                if ratio <= 1e-15 {
                    continue;
                }
                let phase = gamma.conj() / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s, phase);
                rotate_pair(&mut vcols, p, q, c, s, phase);
            }
        }
        if worst <= 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged && worst > 1e-12 {
        let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
        let hi = norms.iter().cloned().fold(0.0, f64::max);
        let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::Numerical(format!(
            "Jacobi SVD of a {m}x{n} matrix did not converge in {MAX_SWEEPS} sweeps \
             (residual column coherence {worst:e}, condition estimate {:e})",
            hi / lo
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigma_raw: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| sigma_raw[j].total_cmp(&sigma_raw[i]));
    let sigma: Vec<f64> = order.iter().map(|&j| sigma_raw[j]).collect();
    let floor = 1e-12 * sigma[0];

    let mut ucols: Vec<Option<Vec<C64>>> = order
        .iter()
        .map(|&j| {
            let s = sigma_raw[j];
            (s > floor && s > 0.0).then(|| cols[j].iter().map(|z| z / s).collect())
        })
        .collect();
    complete_orthonormal(&mut ucols, m);
    let u = CMatrix::from_columns(&ucols.into_iter().map(Option::unwrap).collect::<Vec<_>>())?;
    let v = CMatrix::from_columns(&order.iter().map(|&j| vcols[j].clone()).collect::<Vec<_>>())?;
    Ok(Svd { u, sigma, v })
}

fn rotate_pair(cols: &mut [Vec<C64>], p: usize, q: usize, c: f64, s: f64, phase: C64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let yq = *y * phase;
        let xp = *x;
        *x = xp * c - yq * s;
        *y = xp * s + yq * c;
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other column
/// by Gram-Schmidt over the standard basis.
fn complete_orthonormal(cols: &mut [Option<Vec<C64>>], dim: usize) {
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        let mut best: Option<Vec<C64>> = None;
        for e in 0..dim {
            let mut cand: Vec<C64> = (0..dim).map(|i| C64::new(f64::from(u8::from(i == e)), 0.0)).collect();
            // two passes for numerical orthogonality
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let proj = inner(other, &cand);
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= proj * o;
                    }
                }
            }
            let nn = norm(&cand);
            if nn > 0.5 {
                best = Some(cand.iter().map(|z| z / nn).collect());
                break;
            }
            if best.as_ref().map_or(nn > 1e-6, |b| nn > norm(b)) {
                best = Some(cand.iter().map(|z| z / nn).collect());
            }
        }
        cols[slot] = best;
    }
}

/// Cyclic complex Jacobi eigendecomposition of a Hermitian matrix.
pub fn hermitian_eig(a: &CMatrix) -> Result<Eig> {
    let n = a.rows();
    if n == 0 || a.cols() != n {
        return Err(Error::Dimension(format!("eigendecomposition of a {:?} matrix", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("eigendecomposition input has non-finite entries".into()));
    }
    if !a.is_hermitian(1e-10) {
        return Err(Error::Numerical("eigendecomposition input is not Hermitian".into()));
    }
    let scale = a.frobenius_norm();
    let mut m = a.clone();
    let mut v = CMatrix::identity(n);
    let off = |m: &CMatrix| {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += m[(p, q)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged || off(&m) <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let e = apq.conj() / r;
                let theta = (m[(q, q)].re - m[(p, p)].re) / (2.0 * r);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let (ap, aq) = (m[(i, p)], m[(i, q)]);
                    m[(i, p)] = ap * c - aq * e * s;
                    m[(i, q)] = ap * s + aq * e * c;
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = vp * c - vq * e * s;
                    v[(i, q)] = vp * s + vq * e * c;
                }
                let ec = e.conj();
                for j in 0..n {
                    let (ap, aq) = (m[(p, j)], m[(q, j)]);
                    m[(p, j)] = ap * c - aq * ec * s;
                    m[(q, j)] = ap * s + aq * ec * c;
                }
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
            }
        }
    }
    if !converged && off(&m) > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "Jacobi eigendecomposition of a {n}x{n} matrix did not converge in {MAX_SWEEPS} sweeps \
             (off-diagonal norm {:e} of {scale:e})",
            off(&m)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re));
    let values = order.iter().map(|&j| m[(j, j)].re).collect();
    let columns: Vec<Vec<C64>> = order
        .iter()
        .map(|&j| {
            let mut col = v.column(j);
            fix_phase(&mut col);
            col
        })
        .collect();
    Ok(Eig {
        values,
        vectors: CMatrix::from_columns(&columns)?,
    })
}

fn check_small(a: &CMatrix, op: &str) -> Result<usize> {
    let n = a.rows();
    if n == 0 || a.cols() != n || n > SMALL_DIM {
        return Err(Error::Dimension(format!(
            "{op} expects a square matrix of size at most {SMALL_DIM}, got {:?}",
            a.shape()
        )));
    }
    Ok(n)
}

/// Inverse of a square matrix of size at most 4, by Gauss-Jordan
/// elimination with partial pivoting.
pub fn inv_small(a: &CMatrix) -> Result<CMatrix> {
    let n = check_small(a, "inv_small")?;
    let inv = gauss_jordan(a, n)?;
    let cond = a.frobenius_norm() * inv.frobenius_norm();
    if !(cond <= 1e12) {
        return Err(Error::Singular(format!("condition estimate {cond:e} exceeds 1e12")));
    }
    Ok(inv)
}

pub(crate) fn gauss_jordan(a: &CMatrix, n: usize) -> Result<CMatrix> {
    let scale = a.frobenius_norm();
    let mut m = a.clone();
    let mut inv = CMatrix::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].norm().total_cmp(&m[(j, col)].norm()))
            .unwrap_or(col);
        let pv = m[(pivot, col)];
        if pv.norm() <= 1e-14 * scale || scale == 0.0 {
            return Err(Error::Singular(format!(
                "pivot {:e} in column {col} of a {n}x{n} matrix with norm {scale:e}",
                pv.norm()
            )));
        }
        if pivot != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = t;
                let t = inv[(col, j)];
                inv[(col, j)] = inv[(pivot, j)];
                inv[(pivot, j)] = t;
            }
        }
        let recip = C64::new(1.0, 0.0) / pv;
        for j in 0..n {
            m[(col, j)] *= recip;
            inv[(col, j)] *= recip;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = m[(i, col)];
            if f == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                let (mc, ic) = (m[(col, j)], inv[(col, j)]);
                m[(i, j)] -= f * mc;
                inv[(i, j)] -= f * ic;
            }
        }
    }
    Ok(inv)
}

/// Determinant of a square matrix of size at most 4 via LU with partial
/// pivoting.
pub fn det_small(a: &CMatrix) -> Result<C64> {
    let n = check_small(a, "det_small")?;
    let mut m = a.clone();
    let mut det = C64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].norm().total_cmp(&m[(j, col)].norm()))
            .unwrap_or(col);
        if m[(pivot, col)].norm() == 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        if pivot != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = t;
            }
            det = -det;
        }
        let pv = m[(col, col)];
        det *= pv;
        for i in col + 1..n {
            let f = m[(i, col)] / pv;
            for j in col..n {
                let mc = m[(col, j)];
                m[(i, j)] -= f * mc;
            }
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn svd_of_diagonal() {
        let a = CMatrix::diag(&[c(2.0, 0.0), c(1.0, 0.0)]);
        let s = svd(&a).unwrap();
        assert_eq!(s.sigma, vec![2.0, 1.0]);
        assert!((s.v[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((s.v[(1, 1)] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn eig_of_identity_and_diagonal() {
        let e = hermitian_eig(&CMatrix::identity(3)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let e = hermitian_eig(&CMatrix::diag(&[c(2.0, 0.0), c(5.0, 0.0)])).unwrap();
        assert_eq!(e.values, vec![5.0, 2.0]);
        assert!((e.vectors[(1, 0)] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn eig_resolves_complex_offdiagonal() {
        let a = CMatrix::from_vec(2, 2, vec![c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]).unwrap();
        let e = hermitian_eig(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let v = e.vectors.column(0);
        let av = a.matvec(&v).unwrap();
        for (x, y) in av.iter().zip(&v) {
            assert!((x - y * 3.0).norm() < 1e-14);
        }
    }

    #[test]
    fn small_inverse_and_determinant() {
        let inv = inv_small(&CMatrix::diag(&[c(2.0, 0.0), c(4.0, 0.0)])).unwrap();
        assert_eq!(inv, CMatrix::diag(&[c(0.5, 0.0), c(0.25, 0.0)]));
        assert_eq!(det_small(&CMatrix::identity(2)).unwrap(), c(1.0, 0.0));
        let a = CMatrix::from_vec(2, 2, vec![c(1.0, 1.0), c(2.0, 0.0), c(0.0, 3.0), c(1.0, -1.0)]).unwrap();
        // (1+j)(1-j) - 2·3j
        assert!((det_small(&a).unwrap() - c(2.0, -6.0)).norm() < 1e-14);
    }

    #[test]
    fn singular_inverse_is_reported() {
        let a = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!(matches!(inv_small(&a), Err(Error::Singular(_))));
        assert!(matches!(inv_small(&CMatrix::identity(5)), Err(Error::Dimension(_))));
    }
}
