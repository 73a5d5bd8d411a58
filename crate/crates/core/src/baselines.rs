//! Classical reference precoders built from (perfect or reconstructed)
//! per-subband eigenvectors.

use std::fmt;
use std::str::FromStr;

use crate::csi::CsiReport;
use crate::linalg::{gauss_jordan, inner, norm, svd, CMatrix, C64};
use crate::precoder::{PrecodingSolution, NORM_GUARD};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Perfect eigenvector feedback used directly, equal power.
    Pf,
    /// Perfect eigenvector feedback with block diagonalization and
    /// water-filling.
    PfBdWf,
    /// MSE-trained feedback reconstruction used directly, equal power.
    DjsccMse,
    DjsccMseBdWf,
    JfpNet,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Pf,
        BaselineKind::PfBdWf,
        BaselineKind::DjsccMse,
        BaselineKind::DjsccMseBdWf,
        BaselineKind::JfpNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Pf => "PF",
            BaselineKind::PfBdWf => "PF_BD_WF",
            BaselineKind::DjsccMse => "DJSCC_MSE",
            BaselineKind::DjsccMseBdWf => "DJSCC_MSE_BD_WF",
            BaselineKind::JfpNet => "JFPNet",
        }
    }

    pub fn uses_bd(self) -> bool {
        matches!(self, BaselineKind::PfBdWf | BaselineKind::DjsccMseBdWf)
    }

    pub fn needs_feedback_model(self) -> bool {
        matches!(self, BaselineKind::DjsccMse | BaselineKind::DjsccMseBdWf)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Per-subband dominant eigenvectors and eigenvalues of all users, both
/// indexed `[N_b][K]`, as delivered by error-free feedback.
pub fn perfect_feedback(reports: &[CsiReport]) -> (Vec<Vec<Vec<C64>>>, Vec<Vec<f64>>) {
    let subbands = reports.first().map_or(0, |r| r.eigvecs.len());
    let vectors = (0..subbands)
        .map(|n_b| reports.iter().map(|r| r.eigvecs[n_b].column(0)).collect())
        .collect();
    let eigvals = (0..subbands)
        .map(|n_b| reports.iter().map(|r| r.eigvals[n_b][0]).collect())
        .collect();
    (vectors, eigvals)
}

fn normalized(v: &[C64]) -> Vec<C64> {
    let n = norm(v).max(NORM_GUARD);
    v.iter().map(|z| z / n).collect()
}

/// Uses the (re-normalized) vectors `[N_b][K]` as directions with equal
/// power `P/K`.
pub fn precode_direct(vectors: &[Vec<Vec<C64>>], total_power: f64) -> Result<PrecodingSolution> {
    let directions: Vec<Vec<Vec<C64>>> = vectors
        .iter()
        .map(|users| users.iter().map(|v| normalized(v)).collect())
        .collect();
    let powers = vectors
        .iter()
        .map(|users| vec![total_power / users.len() as f64; users.len()])
        .collect();
    PrecodingSolution::new(directions, powers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BdDirections {
    pub directions: Vec<Vec<C64>>,
    /// Set when some user's vector had no usable component outside the span
    /// of the others and regularized zero-forcing was used instead.
    pub fallback: bool,
}

/// Block diagonalization on effective rows `e_kᴴ`: each direction is the
/// normalized projection of `e_k` onto the orthogonal complement of the
/// other users' vectors.
pub fn bd_directions(e: &[Vec<C64>]) -> Result<BdDirections> {
    let k_users = e.len();
    let n_t = e.first().map_or(0, Vec::len);
    if k_users == 0 || e.iter().any(|v| v.len() != n_t) {
        return Err(Error::Dimension("bd_directions needs equal-length vectors".into()));
    }
    if k_users > n_t {
        return Err(Error::Dimension(format!("{k_users} users exceed {n_t} antennas")));
    }
    let mut directions = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mut proj = e[k].clone();
        let others: Vec<Vec<C64>> = (0..k_users).filter(|&m| m != k).map(|m| e[m].clone()).collect();
        if !others.is_empty() {
            let basis = orthonormal_basis(&others)?;
            // two passes keep the residual leakage at rounding level
            for _ in 0..2 {
                for q in &basis {
                    let c = inner(q, &proj);
                    for (p, qi) in proj.iter_mut().zip(q) {
                        *p -= c * qi;
                    }
                }
            }
        }
        let scale = norm(&e[k]);
        if scale == 0.0 || norm(&proj) <= 1e-6 * scale {
            return regularized_zf(e);
        }
        directions.push(normalized(&proj));
    }
    Ok(BdDirections {
        directions,
        fallback: false,
    })
}

fn orthonormal_basis(vectors: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    let m = CMatrix::from_columns(vectors)?;
    let s = svd(&m)?;
    let floor = 1e-10 * s.sigma[0];
    Ok((0..s.sigma.len())
        .filter(|&j| s.sigma[j] > floor && s.sigma[j] > 0.0)
        .map(|j| s.u.column(j))
        .collect())
}

/// `V = E(EᴴE + δI)⁻¹` with column normalization, `δ` at 1% of the mean
/// diagonal of `EᴴE`.
fn regularized_zf(e: &[Vec<C64>]) -> Result<BdDirections> {
    let k_users = e.len();
    let em = CMatrix::from_columns(e)?;
    let gram = em.adjoint().matmul(&em)?;
    let delta = (0.01 * gram.trace().re / k_users as f64).max(1e-12);
    let reg = gram.add(&CMatrix::identity(k_users).scale(delta.into()))?;
    let v = em.matmul(&gauss_jordan(&reg, k_users)?)?;
    Ok(BdDirections {
        directions: (0..k_users).map(|k| normalized(&v.column(k))).collect(),
        fallback: true,
    })
}

/// Water-filling `p_k = max(μ − σ²/g_k, 0)` with `Σ p_k = P`, the water
/// level found by bisection.
pub fn water_filling(gains: &[f64], total_power: f64, noise: f64) -> Result<Vec<f64>> {
    if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::Numerical(format!("invalid water-filling gains {gains:?}")));
    }
    if !(total_power > 0.0 && noise > 0.0) {
        return Err(Error::Numerical("water-filling needs positive power and noise".into()));
    }
    let best = gains.iter().cloned().fold(0.0, f64::max);
    if best == 0.0 {
        return Err(Error::Numerical("all water-filling gains are zero".into()));
    }
    let alloc = |mu: f64| -> Vec<f64> {
        gains
            .iter()
            .map(|&g| if g > 0.0 { (mu - noise / g).max(0.0) } else { 0.0 })
            .collect()
    };
    let (mut lo, mut hi) = (0.0, total_power + noise / best);
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if alloc(mid).iter().sum::<f64>() > total_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut p = alloc(0.5 * (lo + hi));
    // spread the bisection residual over the active users so Σp = P exactly
    let active = p.iter().filter(|&&x| x > 0.0).count();
    if active == 0 {
        return Err(Error::Numerical("water-filling bisection left no active user".into()));
    }
    let residual = (total_power - p.iter().sum::<f64>()) / active as f64;
    for x in p.iter_mut().filter(|x| **x > 0.0) {
        *x += residual;
    }
    Ok(p)
}

/// Block diagonalization plus water-filling in every subband.
///
/// `vectors` and `eigvals` are `[N_b][K]`. Returns the solution and the
/// number of subbands that needed the regularized fallback.
pub fn precode_bd_wf(
    vectors: &[Vec<Vec<C64>>],
    eigvals: &[Vec<f64>],
    total_power: f64,
    noise: f64,
) -> Result<(PrecodingSolution, usize)> {
    let mut directions = Vec::with_capacity(vectors.len());
    let mut powers = Vec::with_capacity(vectors.len());
    let mut fallbacks = 0;
    for (users, lambdas) in vectors.iter().zip(eigvals) {
        let e: Vec<Vec<C64>> = users.iter().map(|v| normalized(v)).collect();
        let bd = bd_directions(&e)?;
        fallbacks += usize::from(bd.fallback);
        let gains: Vec<f64> = e
            .iter()
            .zip(&bd.directions)
            .zip(lambdas)
            .map(|((ek, vk), &l)| l * inner(ek, vk).norm_sqr())
            .collect();
        let p = if gains.iter().all(|&g| g == 0.0) {
            vec![total_power / gains.len() as f64; gains.len()]
        } else {
            water_filling(&gains, total_power, noise)?
        };
        directions.push(bd.directions);
        powers.push(p);
    }
    Ok((PrecodingSolution::new(directions, powers)?, fallbacks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, n: usize) -> Vec<C64> {
        (0..n).map(|j| C64::new(f64::from(u8::from(i == j)), 0.0)).collect()
    }

    #[test]
    fn orthogonal_users_keep_their_vectors() {
        let bd = bd_directions(&[e(0, 4), e(1, 4)]).unwrap();
        assert!(!bd.fallback);
        assert_eq!(bd.directions[0], e(0, 4));
        assert_eq!(bd.directions[1], e(1, 4));
    }

    #[test]
    fn identical_users_trigger_fallback() {
        let bd = bd_directions(&[e(2, 4), e(2, 4)]).unwrap();
        assert!(bd.fallback);
        for d in &bd.directions {
            assert!((norm(d) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn water_filling_deactivates_weak_user() {
        let p = water_filling(&[1.0, 0.25], 2.0, 1.0).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-9 && p[1] == 0.0, "{p:?}");
    }

    #[test]
    fn water_filling_symmetry_and_single_user() {
        let p = water_filling(&[0.7, 0.7, 0.7], 3.0, 0.4).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0).abs() < 1e-9));
        assert_eq!(water_filling(&[2.5], 5.0, 1.0).unwrap(), vec![5.0]);
        assert!(water_filling(&[0.0, 0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("PF_ZF".parse::<BaselineKind>().is_err());
    }
}
