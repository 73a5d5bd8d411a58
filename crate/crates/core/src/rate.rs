//! Downlink achievable rates under per-RB MMSE combining, in plain complex
//! arithmetic for evaluation and on the tape for training.

use jfp_autograd::{Tensor, Var};

use crate::csi::{subband_of_rb, CsiReport};
use crate::linalg::diff::CVar;
use crate::linalg::{det_small, gauss_jordan, inner, inv_small, CMatrix, C64};
use crate::precoder::PrecodingSolution;
use crate::{Error, Result, SystemConfig};

/// Receive combiner `W ∈ C^{N_s × N_r}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Combiner {
    pub w: CMatrix,
}

fn effective(g: &CMatrix, o: &[C64]) -> Result<Vec<C64>> {
    g.matvec(o)
}

/// `Σ_{m∈users} (G o_m)(G o_m)ᴴ + σ² I`
fn covariance(g: &CMatrix, precoders: &[Vec<C64>], skip: Option<usize>, noise: f64) -> Result<CMatrix> {
    let n_r = g.rows();
    let mut r = CMatrix::identity(n_r).scale(noise.into());
    for (m, o) in precoders.iter().enumerate() {
        if Some(m) == skip {
            continue;
        }
        let y = effective(g, o)?;
        for i in 0..n_r {
            for j in 0..n_r {
                r[(i, j)] += y[i] * y[j].conj();
            }
        }
    }
    Ok(r)
}

/// Single-stream MMSE combiner for user `k` on one RB:
/// `w = ((Σ_m G o_m o_mᴴ Gᴴ + σ²I)⁻¹ G o_k)ᴴ` as a `1 × N_r` row.
///
/// When `G o_k = 0` every combiner yields zero rate; the first unit row is
/// returned so the combiner stays nonzero.
pub fn mmse_combiner(g: &CMatrix, precoders: &[Vec<C64>], k: usize, noise: f64) -> Result<Combiner> {
    check_noise(noise)?;
    let n_r = g.rows();
    let desired = effective(g, &precoders[k])?;
    if desired.iter().all(|z| z.norm() == 0.0) {
        let mut w = CMatrix::zeros(1, n_r);
        w[(0, 0)] = C64::new(1.0, 0.0);
        return Ok(Combiner { w });
    }
    let r = covariance(g, precoders, None, noise)?;
    let f = gauss_jordan(&r, n_r)?.matvec(&desired)?;
    let w = CMatrix::from_vec(1, n_r, f.iter().map(|z| z.conj()).collect())?;
    Ok(Combiner { w })
}

/// Maximum-ratio combiner `(G o_k)ᴴ`.
pub fn mrc_combiner(g: &CMatrix, o_k: &[C64]) -> Result<Combiner> {
    let y = effective(g, o_k)?;
    Ok(Combiner {
        w: CMatrix::from_vec(1, y.len(), y.iter().map(|z| z.conj()).collect())?,
    })
}

fn check_noise(noise: f64) -> Result<()> {
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(Error::Numerical(format!("noise power {noise} must be positive")));
    }
    Ok(())
}

/// Achievable rate of user `k` on one RB for precoders given as
/// `N_t × N_s` matrices:
/// `log₂|I + (WGO_k)(WGO_k)ᴴ (Σ_{m≠k} (WGO_m)(WGO_m)ᴴ + σ² WWᴴ)⁻¹|`.
pub fn rate_rb(w: &CMatrix, g: &CMatrix, precoders: &[CMatrix], k: usize, noise: f64) -> Result<f64> {
    check_noise(noise)?;
    let wg = w.matmul(g)?;
    let signal = wg.matmul(&precoders[k])?;
    if signal.frobenius_norm() == 0.0 {
        return Ok(0.0);
    }
    let ns = w.rows();
    let mut q = w.matmul(&w.adjoint())?.scale(noise.into());
    for (m, o) in precoders.iter().enumerate() {
        if m != k {
            let y = wg.matmul(o)?;
            q = q.add(&y.matmul(&y.adjoint())?)?;
        }
    }
    let s = signal.matmul(&signal.adjoint())?;
    let m = CMatrix::identity(ns).add(&s.matmul(&inv_small(&q)?)?)?;
    let det = det_small(&m)?;
    let rate = det.norm().log2();
    if !rate.is_finite() {
        return Err(Error::Numerical(format!(
            "rate of user {k} is {rate} (det {det}, interference-plus-noise trace {})",
            q.trace()
        )));
    }
    Ok(rate.max(0.0))
}

/// `G o_kᴴ R_k⁻¹ G o_k` with `R_k = Σ_{m≠k} (G o_m)(G o_m)ᴴ + σ² I`, the
/// SINR reached by the MMSE combiner.
pub fn sinr_mmse(g: &CMatrix, precoders: &[Vec<C64>], k: usize, noise: f64) -> Result<f64> {
    check_noise(noise)?;
    let desired = effective(g, &precoders[k])?;
    let r = covariance(g, precoders, Some(k), noise)?;
    let z = gauss_jordan(&r, g.rows())?.matvec(&desired)?;
    let sinr = inner(&desired, &z).re;
    if !sinr.is_finite() {
        return Err(Error::Numerical(format!("SINR of user {k} is {sinr}")));
    }
    Ok(sinr.max(0.0))
}

/// Per-RB, per-user rates of one sample and their band average.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRates {
    /// `[N_RB][K]` in bits/s/Hz.
    pub per_rb: Vec<Vec<f64>>,
    /// `(1/N_RB) Σ_rb Σ_k R_k^{(rb)}`
    pub sum_rate: f64,
}

/// Average sum-rate of one sample under MMSE combining.
pub fn sum_rate(reports: &[CsiReport], solution: &PrecodingSolution, cfg: &SystemConfig) -> Result<SampleRates> {
    if reports.len() != cfg.users || solution.users() != cfg.users || solution.subbands() != cfg.num_subbands() {
        return Err(Error::Dimension(format!(
            "{} reports and a {}x{} solution for {} users and {} subbands",
            reports.len(),
            solution.subbands(),
            solution.users(),
            cfg.users,
            cfg.num_subbands()
        )));
    }
    let noise = cfg.noise_power_dl();
    let mut per_rb = Vec::with_capacity(cfg.num_rbs());
    let mut total = 0.0;
    for rb in 1..=cfg.num_rbs() {
        let precoders = solution.precoders(subband_of_rb(rb, cfg)? - 1);
        let rates = (0..cfg.users)
            .map(|k| sinr_mmse(&reports[k].h_dl[rb - 1], &precoders, k, noise).map(|s| (1.0 + s).log2()))
            .collect::<Result<Vec<f64>>>()?;
        total += rates.iter().sum::<f64>();
        per_rb.push(rates);
    }
    Ok(SampleRates {
        per_rb,
        sum_rate: total / cfg.num_rbs() as f64,
    })
}

/// Mean and 95% confidence half-width of per-sample sum-rates.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl RateReport {
    pub fn from_samples(per_sample: Vec<f64>) -> Self {
        let (mean, ci95) = mean_ci95(&per_sample);
        RateReport { per_sample, mean, ci95 }
    }
}

/// Sample mean and `1.96·s/√N` (zero half-width for fewer than two values).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// RB-level downlink channels of a batch, laid out for the tape:
/// `[B·N_RB, K·N_r, N_t]`, user blocks stacked along the rows.
#[derive(Clone, Debug)]
pub struct ChannelBatch {
    pub re: Tensor,
    pub im: Tensor,
    pub batch: usize,
}

impl ChannelBatch {
    pub fn new(samples: &[&[CsiReport]], cfg: &SystemConfig) -> Result<Self> {
        let (n_rb, k_users, n_r, n_t) = (cfg.num_rbs(), cfg.users, cfg.ue_antennas, cfg.bs_antennas);
        let len = samples.len() * n_rb * k_users * n_r * n_t;
        let mut re = Vec::with_capacity(len);
        let mut im = Vec::with_capacity(len);
        for reports in samples {
            if reports.len() != k_users {
                return Err(Error::Dimension(format!("{} reports for {k_users} users", reports.len())));
            }
            for rb in 0..n_rb {
                for report in reports.iter() {
                    for z in report.h_dl[rb].data() {
                        re.push(z.re);
                        im.push(z.im);
                    }
                }
            }
        }
        let shape = [samples.len() * n_rb, k_users * n_r, n_t];
        Ok(ChannelBatch {
            re: Tensor::new(&shape, re)?,
            im: Tensor::new(&shape, im)?,
            batch: samples.len(),
        })
    }
}

/// Differentiable per-sample average sum-rate for precoders
/// `o: [B, N_b, K, 2, N_t]`; returns `[B]`.
///
/// The MMSE SINR `d̃ᴴ(I + Σ_j ũ_jũ_jᴴ)⁻¹d̃` (tildes: scaled by `1/σ`) is
/// evaluated by successive Sherman-Morrison updates over the `K − 1`
/// interferers, which works for any `N_r` without an explicit inverse.
pub fn sum_rate_objective<'g>(o: Var<'g>, h: &ChannelBatch, cfg: &SystemConfig) -> Result<Var<'g>> {
    let graph = o.graph();
    let (b, n_rb, k_users, n_r, n_t) = (h.batch, cfg.num_rbs(), cfg.users, cfg.ue_antennas, cfg.bs_antennas);
    let expect = [b, cfg.num_subbands(), k_users, 2, n_t];
    if o.shape() != expect {
        return Err(Error::Dimension(format!("precoders {:?}, expected {expect:?}", o.shape())));
    }
    let rows = b * n_rb;
    let gamma: Vec<usize> = (1..=n_rb)
        .map(|rb| subband_of_rb(rb, cfg).map(|s| s - 1))
        .collect::<Result<_>>()?;
    let per_rb = o
        .index_select(1, &gamma)?
        .reshape(&[rows, k_users, 2, n_t])?
        .scale(1.0 / cfg.noise_power_dl().sqrt());
    let part = |i: usize| -> Result<Var<'g>> {
        Ok(per_rb.slice(2, i, 1)?.reshape(&[rows, k_users, n_t])?.transpose()?)
    };
    let oc = CVar::new(part(0)?, part(1)?)?;
    let hc = CVar::new(graph.constant(h.re.clone()), graph.constant(h.im.clone()))?;
    // y[r, k, m, :] = H_k o_m
    let y = hc
        .matmul(oc)?
        .reshape(&[rows, k_users, n_r, k_users])?
        .permute(&[0, 1, 3, 2])?
        .reshape(&[rows, k_users * k_users, n_r])?;

    let pick = |m_of: &dyn Fn(usize) -> usize| -> Result<CVar<'g>> {
        let idx: Vec<usize> = (0..k_users).map(|k| k * k_users + m_of(k)).collect();
        y.index_select(1, &idx)
    };
    let desired = pick(&|k| k)?;
    let interferers: Vec<CVar<'g>> = (0..k_users.saturating_sub(1))
        .map(|j| pick(&|k| if j < k { j } else { j + 1 }))
        .collect::<Result<_>>()?;

    // solved[i] holds A⁻¹x for x = interferers[i], and the last entry for
    // the desired signal; A starts at the identity
    let mut solved: Vec<CVar<'g>> = interferers.clone();
    solved.push(desired);
    for j in 0..interferers.len() {
        let a = solved[j];
        let denom = CVar::inner(interferers[j], a, 2)?.re.add_scalar(1.0);
        for i in j + 1..solved.len() {
            let x = if i < interferers.len() { interferers[i] } else { desired };
            let coef = CVar::inner(a, x, 2)?;
            let update = a.mul(coef)?.div_real(denom)?;
            solved[i] = solved[i].sub(update)?;
        }
    }
    let sinr = CVar::inner(desired, solved[interferers.len()], 2)?.re;
    let rate = sinr.add_scalar(1.0).ln().scale(std::f64::consts::LOG2_E);
    Ok(rate.sum_axis(1, false)?.reshape(&[b, n_rb])?.mean_axis(1, false)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn scalar_awgn_capacity() {
        let g = CMatrix::identity(1);
        let w = CMatrix::identity(1);
        let o = CMatrix::from_vec(1, 1, vec![c(3f64.sqrt())]).unwrap();
        assert!((rate_rb(&w, &g, &[o], 0, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_precoder_has_zero_rate() {
        let g = CMatrix::from_fn(2, 3, |r, t| C64::new(r as f64 + 1.0, t as f64));
        let precs = vec![vec![c(0.0); 3], vec![c(1.0), c(0.0), c(0.0)]];
        let w = mmse_combiner(&g, &precs, 0, 0.5).unwrap();
        let mats: Vec<CMatrix> = precs.iter().map(|p| CMatrix::from_columns(&[p.clone()]).unwrap()).collect();
        assert_eq!(rate_rb(&w.w, &g, &mats, 0, 0.5).unwrap(), 0.0);
        assert_eq!(sinr_mmse(&g, &precs, 0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn interference_free_unit_snr_gives_one_bit() {
        // W = [1, 0], G = I₂, o₁ = e₁, o₂ = e₂: interference is orthogonal to W
        let g = CMatrix::identity(2);
        let w = CMatrix::from_vec(1, 2, vec![c(1.0), c(0.0)]).unwrap();
        let o1 = CMatrix::from_vec(2, 1, vec![c(1.0), c(0.0)]).unwrap();
        let o2 = CMatrix::from_vec(2, 1, vec![c(0.0), c(1.0)]).unwrap();
        assert!((rate_rb(&w, &g, &[o1, o2], 0, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_interval_of_known_sample() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((h - 1.96 * (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
