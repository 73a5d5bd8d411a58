//! Learned analog CSI feedback: the UE-side encoder, the uplink with MRC
//! detection at the BS, and the BS-side decoder.
//!
//! Latent vectors travel as real tensors of width `2n`: the first `n`
//! columns are real parts and the last `n` imaginary parts.

use jfp_autograd::{BatchNorm, Conv2d, Dense, ModelParams, Session, Var};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::channel::ChannelSample;
use crate::config::uplink_noise_power;
use crate::linalg::{inner, norm, C64};
use crate::{Error, Result, SystemConfig};

const KERNEL: usize = 3;

/// UE-side encoder `[N, 2, N_b, N_t] → [N, 2n]`, shared by all users.
#[derive(Clone, Debug)]
pub struct Encoder {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    fc: Dense,
    latent: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        let flat = 8 * cfg.num_subbands() * cfg.bs_antennas;
        Ok(Encoder {
            conv1: Conv2d::new(params, "enc.conv1", 2, 16, KERNEL, rng)?,
            bn1: BatchNorm::new(params, "enc.bn1", 16)?,
            conv2: Conv2d::new(params, "enc.conv2", 16, 8, KERNEL, rng)?,
            bn2: BatchNorm::new(params, "enc.bn2", 8)?,
            fc: Dense::new(params, "enc.fc", flat, 2 * cfg.latent_symbols, rng)?,
            latent: cfg.latent_symbols,
        })
    }

    /// Returns power-normalized latent vectors.
    pub fn forward<'g>(&self, s: &Session<'g, '_>, m: Var<'g>) -> Result<Var<'g>> {
        let n = m.shape()[0];
        let h = self.bn1.forward(s, self.conv1.forward(s, m)?)?.relu();
        let h = self.bn2.forward(s, self.conv2.forward(s, h)?)?.relu();
        let flat = h.shape()[1..].iter().product();
        let z = self.fc.forward(s, h.reshape(&[n, flat])?)?;
        power_normalize(z, self.latent)
    }
}

/// Scales each row of `[N, 2n]` to squared norm `n`, i.e. unit average
/// power per complex symbol.
pub fn power_normalize(z: Var<'_>, latent: usize) -> Result<Var<'_>> {
    let energy = z.square().sum_axis(1, true)?;
    Ok(z.div(energy.sqrt())?.scale((latent as f64).sqrt()))
}

/// BS-side decoder `[N, 2n] → [N, 2, N_b, N_t]`.
///
/// The output is a feature tensor, not a unit-norm eigenvector estimate.
#[derive(Clone, Debug)]
pub struct Decoder {
    fc: Dense,
    conv1: Conv2d,
    conv2: Conv2d,
    subbands: usize,
    antennas: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        let out = 2 * cfg.num_subbands() * cfg.bs_antennas;
        Ok(Decoder {
            fc: Dense::new(params, "dec.fc", 2 * cfg.latent_symbols, out, rng)?,
            conv1: Conv2d::new(params, "dec.conv1", 2, 16, KERNEL, rng)?,
            conv2: Conv2d::new(params, "dec.conv2", 16, 2, KERNEL, rng)?,
            subbands: cfg.num_subbands(),
            antennas: cfg.bs_antennas,
        })
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, latent: Var<'g>) -> Result<Var<'g>> {
        let n = latent.shape()[0];
        let x = self
            .fc
            .forward(s, latent)?
            .reshape(&[n, 2, self.subbands, self.antennas])?;
        let r = self.conv1.forward(s, x)?.relu();
        let r = self.conv2.forward(s, r)?;
        Ok(x.add(r)?)
    }
}

/// The uplink channel vectors carrying one latent vector, and the noise
/// level of the feedback link.
#[derive(Clone, Debug)]
pub struct FeedbackChannelRealization {
    /// One BS-side vector `h ∈ C^{N_t}` per latent symbol.
    pub vectors: Vec<Vec<C64>>,
    pub noise_var: f64,
    pub snr_db: f64,
}

impl FeedbackChannelRealization {
    /// Symbol `i` rides on uplink subcarrier `i mod N_u`, sent from UE
    /// antenna 0.
    pub fn from_sample(sample: &ChannelSample, user: usize, cfg: &SystemConfig, snr_db: f64) -> Self {
        let vectors = (0..cfg.latent_symbols)
            .map(|i| sample.uplink_vector(user, i % cfg.uplink_subcarriers))
            .collect();
        FeedbackChannelRealization::new(vectors, snr_db)
    }

    pub fn new(vectors: Vec<Vec<C64>>, snr_db: f64) -> Self {
        FeedbackChannelRealization {
            vectors,
            noise_var: uplink_noise_power(snr_db),
            snr_db,
        }
    }

    /// Effective post-MRC SNR of every symbol, `‖h‖²/σ²_ul`.
    pub fn effective_snr(&self) -> Vec<f64> {
        self.vectors.iter().map(|h| norm(h).powi(2) / self.noise_var).collect()
    }
}

fn complex_normal(rng: &mut dyn RngCore) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn draw_noise(h: &[C64], noise_var: f64, rng: &mut dyn RngCore) -> Result<(f64, Vec<C64>)> {
    let energy: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::Singular("zero uplink channel vector".into()));
    }
    let sd = noise_var.sqrt();
    let n = h.iter().map(|_| complex_normal(rng) * sd).collect();
    Ok((energy, n))
}

/// Sends `s` over the uplink and applies MRC: `ŝ_i = hᴴ(h s_i + n)/‖h‖²`.
pub fn uplink_transmit(s: &[C64], link: &FeedbackChannelRealization, rng: &mut dyn RngCore) -> Result<Vec<C64>> {
    if s.len() != link.vectors.len() {
        return Err(Error::Dimension(format!(
            "{} symbols for {} uplink channel vectors",
            s.len(),
            link.vectors.len()
        )));
    }
    s.iter()
        .zip(&link.vectors)
        .map(|(&si, h)| {
            let (energy, n) = draw_noise(h, link.noise_var, rng)?;
            let y: Vec<C64> = h.iter().zip(&n).map(|(hj, nj)| hj * si + nj).collect();
            Ok(inner(h, &y) / energy)
        })
        .collect()
}

/// The additive term `hᴴn/‖h‖²` that MRC leaves on each symbol. Consumes the
/// random stream exactly like [`uplink_transmit`], so
/// `uplink_transmit(s) = s + mrc_noise()` for equal generator states.
pub fn mrc_noise(link: &FeedbackChannelRealization, rng: &mut dyn RngCore) -> Result<Vec<C64>> {
    link.vectors
        .iter()
        .map(|h| {
            let (energy, n) = draw_noise(h, link.noise_var, rng)?;
            Ok(inner(h, &n) / energy)
        })
        .collect()
}

/// `[re..., im...]` row layout of a latent vector.
pub fn latent_to_real(s: &[C64]) -> Vec<f64> {
    s.iter().map(|z| z.re).chain(s.iter().map(|z| z.im)).collect()
}

pub fn latent_from_real(row: &[f64]) -> Vec<C64> {
    let n = row.len() / 2;
    (0..n).map(|i| C64::new(row[i], row[n + i])).collect()
}
