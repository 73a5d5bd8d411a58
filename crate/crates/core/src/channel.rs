//! Synthetic clustered-multipath FDD channels.
//!
//! Each user sees `L` propagation paths leaving the BS array around a common
//! cluster direction. A path has a delay, a BS departure angle, a random UE
//! response vector, and independent Rayleigh gains for the downlink and the
//! uplink. Both links share the geometry, so the uplink is only partially
//! reciprocal, as in FDD.

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{CMatrix, C64};
use crate::{Error, Result, SystemConfig};

/// Parameters of the multipath model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub paths: usize,
    /// Decay constant of the exponential power-delay profile.
    pub delay_spread_s: f64,
    pub max_delay_s: f64,
    /// Cluster centres are uniform in `±sector_deg`.
    pub sector_deg: f64,
    /// Standard deviation of path angles around the cluster centre.
    pub angle_spread_deg: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            paths: 6,
            delay_spread_s: 0.5e-6,
            max_delay_s: 2e-6,
            sector_deg: 60.0,
            angle_spread_deg: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Path {
    pub delay_s: f64,
    pub bs_angle_rad: f64,
    /// UE array response with `‖·‖² = N_r`.
    pub ue_response: Vec<C64>,
    pub gain_dl: C64,
    pub gain_ul: C64,
}

/// Propagation paths of one user.
#[derive(Clone, Debug)]
pub struct UserPaths {
    pub paths: Vec<Path>,
}

/// Half-wavelength ULA steering vector at angle `phi`, for a carrier
/// `freq_ratio` times the downlink carrier (element spacing is fixed in
/// metres, so the electrical spacing scales with frequency).
pub fn steering(n_t: usize, phi: f64, freq_ratio: f64) -> Vec<C64> {
    (0..n_t)
        .map(|n| C64::from_polar(1.0, std::f64::consts::PI * freq_ratio * n as f64 * phi.sin()))
        .collect()
}

impl UserPaths {
    /// Draws the paths of one user.
    pub fn sample(cfg: &SystemConfig, model: &ChannelModel, rng: &mut ChaCha8Rng) -> Self {
        let centre = rng.random_range(-model.sector_deg..=model.sector_deg).to_radians();
        let spread = Normal::new(0.0, model.angle_spread_deg.to_radians()).expect("finite spread");
        let mut delays: Vec<f64> = (0..model.paths)
            .map(|l| if l == 0 { 0.0 } else { rng.random_range(0.0..=model.max_delay_s) })
            .collect();
        delays.sort_by(f64::total_cmp);
        let weights: Vec<f64> = delays.iter().map(|t| (-t / model.delay_spread_s).exp()).collect();
        let total: f64 = weights.iter().sum();

        let paths = delays
            .iter()
            .zip(&weights)
            .map(|(&delay_s, &w)| {
                let power = w / total;
                let bs_angle_rad = centre + rng.sample(spread);
                let raw: Vec<C64> = (0..cfg.ue_antennas).map(|_| complex_normal(rng)).collect();
                let scale = (cfg.ue_antennas as f64).sqrt() / crate::linalg::norm(&raw);
                let ue_response = raw.iter().map(|z| z * scale).collect();
                Path {
                    delay_s,
                    bs_angle_rad,
                    ue_response,
                    gain_dl: complex_normal(rng) * power.sqrt(),
                    gain_ul: complex_normal(rng) * power.sqrt(),
                }
            })
            .collect();
        UserPaths { paths }
    }

    /// Downlink response `N_r × N_t` at subcarrier `f` (0-based).
    pub fn downlink(&self, cfg: &SystemConfig, f: usize) -> CMatrix {
        let freq = f as f64 * cfg.subcarrier_spacing_hz();
        let mut h = CMatrix::zeros(cfg.ue_antennas, cfg.bs_antennas);
        for p in &self.paths {
            let a_bs = steering(cfg.bs_antennas, p.bs_angle_rad, 1.0);
            let coef = p.gain_dl * C64::from_polar(1.0, -std::f64::consts::TAU * freq * p.delay_s);
            for r in 0..cfg.ue_antennas {
                let rc = coef * p.ue_response[r];
                for (t, a) in a_bs.iter().enumerate() {
                    h[(r, t)] += rc * a.conj();
                }
            }
        }
        h
    }

    /// Uplink response `N_t × N_r` at uplink subcarrier `u` (0-based). The
    /// `N_u` uplink subcarriers span the configured bandwidth.
    pub fn uplink(&self, cfg: &SystemConfig, u: usize) -> CMatrix {
        let freq = u as f64 * cfg.bandwidth_hz / cfg.uplink_subcarriers as f64;
        let ratio = cfg.ul_carrier_hz / cfg.dl_carrier_hz;
        let mut h = CMatrix::zeros(cfg.bs_antennas, cfg.ue_antennas);
        for p in &self.paths {
            let a_bs = steering(cfg.bs_antennas, p.bs_angle_rad, ratio);
            let coef = p.gain_ul * C64::from_polar(1.0, -std::f64::consts::TAU * freq * p.delay_s);
            for (t, a) in a_bs.iter().enumerate() {
                for r in 0..cfg.ue_antennas {
                    h[(t, r)] += coef * a * p.ue_response[r];
                }
            }
        }
        h
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One channel draw for all users, stored at `f32` precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub seed: u64,
    users: usize,
    n_d: usize,
    n_u: usize,
    n_r: usize,
    n_t: usize,
    /// `[K][N_d][N_r][N_t]`
    downlink: Vec<Complex32>,
    /// `[K][N_u][N_t][N_r]`
    uplink: Vec<Complex32>,
}

impl ChannelSample {
    pub fn from_paths(cfg: &SystemConfig, seed: u64, users: &[UserPaths]) -> Result<Self> {
        if users.len() != cfg.users {
            return Err(Error::Dimension(format!("{} path sets for {} users", users.len(), cfg.users)));
        }
        let narrow = |z: &C64| Complex32::new(z.re as f32, z.im as f32);
        let mut downlink = Vec::with_capacity(cfg.users * cfg.subcarriers * cfg.ue_antennas * cfg.bs_antennas);
        let mut uplink = Vec::with_capacity(cfg.users * cfg.uplink_subcarriers * cfg.ue_antennas * cfg.bs_antennas);
        for u in users {
            for f in 0..cfg.subcarriers {
                downlink.extend(u.downlink(cfg, f).data().iter().map(narrow));
            }
            for f in 0..cfg.uplink_subcarriers {
                uplink.extend(u.uplink(cfg, f).data().iter().map(narrow));
            }
        }
        Ok(ChannelSample {
            seed,
            users: cfg.users,
            n_d: cfg.subcarriers,
            n_u: cfg.uplink_subcarriers,
            n_r: cfg.ue_antennas,
            n_t: cfg.bs_antennas,
            downlink,
            uplink,
        })
    }

    pub(crate) fn from_raw(cfg: &SystemConfig, seed: u64, downlink: Vec<Complex32>, uplink: Vec<Complex32>) -> Self {
        ChannelSample {
            seed,
            users: cfg.users,
            n_d: cfg.subcarriers,
            n_u: cfg.uplink_subcarriers,
            n_r: cfg.ue_antennas,
            n_t: cfg.bs_antennas,
            downlink,
            uplink,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// `(N_d, N_u, N_r, N_t)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n_d, self.n_u, self.n_r, self.n_t)
    }

    pub fn raw_downlink(&self) -> &[Complex32] {
        &self.downlink
    }

    pub fn raw_uplink(&self) -> &[Complex32] {
        &self.uplink
    }

    /// Downlink matrix `H_k^{(f)}`, `N_r × N_t`.
    pub fn downlink(&self, k: usize, f: usize) -> CMatrix {
        let block = self.n_r * self.n_t;
        let start = (k * self.n_d + f) * block;
        let v: Vec<C64> = self.downlink[start..start + block]
            .iter()
            .map(|z| C64::new(z.re.into(), z.im.into()))
            .collect();
        CMatrix::from_fn(self.n_r, self.n_t, |r, c| v[r * self.n_t + c])
    }

    /// Uplink matrix at uplink subcarrier `u`, `N_t × N_r`.
    pub fn uplink(&self, k: usize, u: usize) -> CMatrix {
        let block = self.n_r * self.n_t;
        let start = (k * self.n_u + u) * block;
        let v: Vec<C64> = self.uplink[start..start + block]
            .iter()
            .map(|z| C64::new(z.re.into(), z.im.into()))
            .collect();
        CMatrix::from_fn(self.n_t, self.n_r, |r, c| v[r * self.n_r + c])
    }

    /// BS-side uplink channel vector seen from UE antenna 0 at uplink
    /// subcarrier `u`.
    pub fn uplink_vector(&self, k: usize, u: usize) -> Vec<C64> {
        self.uplink(k, u).column(0)
    }
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of sample `index` under a master seed.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Draws one channel sample from its own seed.
pub fn sample_channel(cfg: &SystemConfig, model: &ChannelModel, seed: u64) -> Result<ChannelSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<UserPaths> = (0..cfg.users).map(|_| UserPaths::sample(cfg, model, &mut rng)).collect();
    ChannelSample::from_paths(cfg, seed, &users)
}

/// Draws `count` samples with seeds derived from `master`.
pub fn generate(cfg: &SystemConfig, model: &ChannelModel, master: u64, count: usize) -> Result<Vec<ChannelSample>> {
    cfg.validate()?;
    (0..count as u64)
        .map(|i| sample_channel(cfg, model, sample_seed(master, i)))
        .collect()
}
