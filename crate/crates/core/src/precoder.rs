//! Multiuser precoding: learned directions, learned power split, and their
//! assembly into per-user precoding vectors.
//!
//! Tape tensors carry one row per (sample, subband), so the same weights
//! are applied to every subband.

use jfp_autograd::{BatchNorm, Dense, ModelParams, Session, Tensor, Var};
use rand::Rng;

use crate::linalg::{norm, CMatrix, C64};
use crate::{Error, Result, SystemConfig};

pub const JMP_HIDDEN: usize = 256;
pub const PA_HIDDEN: usize = 64;
pub const NORM_GUARD: f64 = 1e-12;

/// Direction network: `[R, K, 2, N_t]` decoder features of all users in a
/// subband to `[R, K, 2, N_t]` unit-norm directions.
#[derive(Clone, Debug)]
pub struct Jmp {
    fc1: Dense,
    bn1: BatchNorm,
    fc2: Dense,
    bn2: BatchNorm,
    fc3: Dense,
    width: usize,
}

impl Jmp {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        let width = 2 * cfg.users * cfg.bs_antennas;
        Ok(Jmp {
            fc1: Dense::new(params, "jmp.fc1", width, JMP_HIDDEN, rng)?,
            bn1: BatchNorm::new(params, "jmp.bn1", JMP_HIDDEN)?,
            fc2: Dense::new(params, "jmp.fc2", JMP_HIDDEN, JMP_HIDDEN, rng)?,
            bn2: BatchNorm::new(params, "jmp.bn2", JMP_HIDDEN)?,
            fc3: Dense::new(params, "jmp.fc3", JMP_HIDDEN, width, rng)?,
            width,
        })
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, features: Var<'g>) -> Result<Var<'g>> {
        let shape = features.shape();
        let rows = shape[0];
        let x = features.reshape(&[rows, self.width])?;
        let h = self.bn1.forward(s, self.fc1.forward(s, x)?)?.relu();
        let h = self.bn2.forward(s, self.fc2.forward(s, h)?)?.relu();
        let y = self.fc3.forward(s, h)?.reshape(&shape)?;
        normalize_directions(y)
    }

    pub fn output_layer(&self) -> &Dense {
        &self.fc3
    }
}

/// Unit-norm projection of each `[2, N_t]` (real, imaginary) block of a
/// `[R, K, 2, N_t]` tensor.
pub fn normalize_directions(x: Var<'_>) -> Result<Var<'_>> {
    let energy = x.square().sum_axis(3, true)?.sum_axis(2, true)?;
    Ok(x.div(energy.sqrt().add_scalar(NORM_GUARD))?)
}

/// Power network: per-user eigenvalues `[R, K]` plus the log-scaled
/// downlink noise power to `[R, K]` powers summing to `P`.
#[derive(Clone, Debug)]
pub struct PowerAllocator {
    fc1: Dense,
    bn1: BatchNorm,
    fc2: Dense,
    fc3: Dense,
    total_power: f64,
    log_noise: f64,
}

impl PowerAllocator {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        Ok(PowerAllocator {
            fc1: Dense::new(params, "pa.fc1", cfg.users * cfg.streams + 1, PA_HIDDEN, rng)?,
            bn1: BatchNorm::new(params, "pa.bn1", PA_HIDDEN)?,
            fc2: Dense::new(params, "pa.fc2", PA_HIDDEN, PA_HIDDEN, rng)?,
            fc3: Dense::new(params, "pa.fc3", PA_HIDDEN, cfg.users, rng)?,
            total_power: cfg.tx_power(),
            log_noise: cfg.noise_power_dl().log10(),
        })
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, eigvals: Var<'g>) -> Result<Var<'g>> {
        let rows = eigvals.shape()[0];
        let noise = s.constant(Tensor::full(&[rows, 1], self.log_noise));
        let x = Var::concat(&[eigvals, noise], 1)?;
        let h = self.bn1.forward(s, self.fc1.forward(s, x)?)?.relu();
        let h = self.fc2.forward(s, h)?.relu();
        Ok(self.fc3.forward(s, h)?.softmax().scale(self.total_power))
    }

    pub fn output_layer(&self) -> &Dense {
        &self.fc3
    }
}

/// Equal split `P/K` for every row.
pub fn equal_power<'g>(s: &Session<'g, '_>, rows: usize, cfg: &SystemConfig) -> Var<'g> {
    s.constant(Tensor::full(&[rows, cfg.users], cfg.tx_power() / cfg.users as f64))
}

/// `o = √p · v` for directions `[R, K, 2, N_t]` and powers `[R, K]`.
pub fn assemble<'g>(directions: Var<'g>, powers: Var<'g>) -> Result<Var<'g>> {
    let shape = powers.shape();
    let amp = powers.sqrt().reshape(&[shape[0], shape[1], 1, 1])?;
    Ok(directions.mul(amp)?)
}

/// Per-subband unit-norm directions and powers for every user.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecodingSolution {
    /// `[N_b][K]` vectors in `C^{N_t}`.
    pub directions: Vec<Vec<Vec<C64>>>,
    /// `[N_b][K]`
    pub powers: Vec<Vec<f64>>,
}

impl PrecodingSolution {
    pub fn new(directions: Vec<Vec<Vec<C64>>>, powers: Vec<Vec<f64>>) -> Result<Self> {
        if directions.len() != powers.len() || directions.iter().zip(&powers).any(|(d, p)| d.len() != p.len()) {
            return Err(Error::Dimension("directions and powers disagree in subbands or users".into()));
        }
        Ok(PrecodingSolution { directions, powers })
    }

    /// Reads sample `b` out of `[B·N_b, K, 2, N_t]` directions and
    /// `[B·N_b, K]` powers.
    pub fn from_tensors(directions: &Tensor, powers: &Tensor, b: usize, subbands: usize) -> Result<Self> {
        let ds = directions.shape();
        let (users, n_t) = (ds[1], ds[3]);
        if ds.len() != 4 || ds[2] != 2 || powers.shape() != [ds[0], users] {
            return Err(Error::Dimension(format!(
                "direction tensor {ds:?} with power tensor {:?}",
                powers.shape()
            )));
        }
        let d = directions.data();
        let p = powers.data();
        let mut dirs = Vec::with_capacity(subbands);
        let mut pows = Vec::with_capacity(subbands);
        for n_b in 0..subbands {
            let row = b * subbands + n_b;
            dirs.push(
                (0..users)
                    .map(|k| {
                        let base = (row * users + k) * 2 * n_t;
                        (0..n_t).map(|t| C64::new(d[base + t], d[base + n_t + t])).collect()
                    })
                    .collect(),
            );
            pows.push(p[row * users..(row + 1) * users].to_vec());
        }
        PrecodingSolution::new(dirs, pows)
    }

    pub fn subbands(&self) -> usize {
        self.directions.len()
    }

    pub fn users(&self) -> usize {
        self.directions.first().map_or(0, Vec::len)
    }

    /// `o_k^{(n_b)}` with 0-based subband index.
    pub fn precoder(&self, n_b: usize, k: usize) -> Vec<C64> {
        let amp = self.powers[n_b][k].sqrt();
        self.directions[n_b][k].iter().map(|z| z * amp).collect()
    }

    pub fn precoders(&self, n_b: usize) -> Vec<Vec<C64>> {
        (0..self.users()).map(|k| self.precoder(n_b, k)).collect()
    }

    /// User `k`'s precoders stacked as an `N_b × N_t` matrix.
    pub fn user_matrix(&self, k: usize) -> Result<CMatrix> {
        let rows: Vec<Vec<C64>> = (0..self.subbands()).map(|n_b| self.precoder(n_b, k)).collect();
        Ok(CMatrix::from_columns(&rows)?.transpose())
    }

    /// Checks unit-norm directions, nonnegative powers, and `Σ_k p_k = P` in
    /// every subband.
    pub fn check(&self, total_power: f64, tol: f64) -> Result<()> {
        for (n_b, (dirs, pows)) in self.directions.iter().zip(&self.powers).enumerate() {
            for (k, v) in dirs.iter().enumerate() {
                let n2 = norm(v).powi(2);
                if (n2 - 1.0).abs() > tol {
                    return Err(Error::Numerical(format!(
                        "subband {n_b} user {k}: direction norm² {n2}"
                    )));
                }
            }
            if pows.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Numerical(format!("subband {n_b}: negative power {pows:?}")));
            }
            let sum: f64 = pows.iter().sum();
            if (sum - total_power).abs() > tol * total_power.max(1.0) {
                return Err(Error::Numerical(format!(
                    "subband {n_b}: powers sum to {sum}, budget {total_power}"
                )));
            }
        }
        Ok(())
    }
}
