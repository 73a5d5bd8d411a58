//! Preprocessed samples and their packing into tape-ready tensors.

use jfp_autograd::Tensor;
use rand::RngCore;

use crate::channel::{sample_seed, ChannelSample};
use crate::csi::{preprocess_sample, CsiReport};
use crate::feedback::{latent_to_real, mrc_noise, FeedbackChannelRealization};
use crate::linalg::C64;
use crate::rate::ChannelBatch;
use crate::{Error, Result, SystemConfig};

/// A channel sample reduced to what training and evaluation consume.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub seed: u64,
    pub reports: Vec<CsiReport>,
    /// `[K][n]` uplink vectors carrying each latent symbol.
    pub uplink: Vec<Vec<Vec<C64>>>,
}

pub fn prepare(sample: &ChannelSample, cfg: &SystemConfig) -> Result<PreparedSample> {
    let reports = preprocess_sample(sample, cfg)?;
    let uplink = (0..cfg.users)
        .map(|k| FeedbackChannelRealization::from_sample(sample, k, cfg, 0.0).vectors)
        .collect();
    Ok(PreparedSample {
        seed: sample.seed,
        reports,
        uplink,
    })
}

pub fn prepare_all(samples: &[ChannelSample], cfg: &SystemConfig) -> Result<Vec<PreparedSample>> {
    samples.iter().map(|s| prepare(s, cfg)).collect()
}

/// Post-MRC noise `[K][n]` on every user's latent symbols at `snr_db`.
pub fn draw_feedback_noise(sample: &PreparedSample, snr_db: f64, rng: &mut dyn RngCore) -> Result<Vec<Vec<C64>>> {
    sample
        .uplink
        .iter()
        .map(|vectors| mrc_noise(&FeedbackChannelRealization::new(vectors.clone(), snr_db), rng))
        .collect()
}

/// Seed of the evaluation noise for one sample at one SNR, so results do
/// not depend on batch composition or order.
pub fn eval_noise_seed(eval_seed: u64, sample_seed_value: u64, snr_db: f64) -> u64 {
    sample_seed(eval_seed ^ snr_db.to_bits(), sample_seed_value)
}

/// Tape inputs of a batch of `B` samples.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B·K, 2, N_b, N_t]` true eigenvectors, real and imaginary planes.
    pub m: Tensor,
    /// `[B·N_b, K]` dominant eigenvalues.
    pub eig: Tensor,
    /// `[B·K, 2n]` post-MRC feedback noise in latent layout.
    pub noise: Tensor,
    pub channels: ChannelBatch,
    pub size: usize,
}

impl Batch {
    /// `noise[b]` is the `[K][n]` noise of `samples[b]`.
    pub fn new(samples: &[&PreparedSample], noise: &[Vec<Vec<C64>>], cfg: &SystemConfig) -> Result<Self> {
        if samples.is_empty() || samples.len() != noise.len() {
            return Err(Error::Dimension(format!(
                "{} samples with {} noise draws",
                samples.len(),
                noise.len()
            )));
        }
        let (k_users, n_b, n_t, n) = (cfg.users, cfg.num_subbands(), cfg.bs_antennas, cfg.latent_symbols);
        let b = samples.len();
        let mut m = Vec::with_capacity(b * k_users * 2 * n_b * n_t);
        let mut eig = Vec::with_capacity(b * n_b * k_users);
        let mut z = Vec::with_capacity(b * k_users * 2 * n);
        for (sample, noise) in samples.iter().zip(noise) {
            if sample.reports.len() != k_users || noise.len() != k_users {
                return Err(Error::Dimension(format!(
                    "sample {} has {} reports and {} noise rows for {k_users} users",
                    sample.seed,
                    sample.reports.len(),
                    noise.len()
                )));
            }
            for (report, nk) in sample.reports.iter().zip(noise) {
                for part in [|c: C64| c.re, |c: C64| c.im] {
                    for v in &report.eigvecs {
                        m.extend((0..n_t).map(|t| part(v[(t, 0)])));
                    }
                }
                if nk.len() != n {
                    return Err(Error::Dimension(format!("{} noise symbols for n = {n}", nk.len())));
                }
                z.extend(latent_to_real(nk));
            }
            for sb in 0..n_b {
                eig.extend(sample.reports.iter().map(|r| r.eigvals[sb][0]));
            }
        }
        let reports: Vec<&[CsiReport]> = samples.iter().map(|s| s.reports.as_slice()).collect();
        Ok(Batch {
            m: Tensor::new(&[b * k_users, 2, n_b, n_t], m)?,
            eig: Tensor::new(&[b * n_b, k_users], eig)?,
            noise: Tensor::new(&[b * k_users, 2 * n], z)?,
            channels: ChannelBatch::new(&reports, cfg)?,
            size: b,
        })
    }
}
