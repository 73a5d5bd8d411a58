//! The end-to-end feedback-and-precoding network and its ablations.

use std::path::Path;

use jfp_autograd::{read_checkpoint, Graph, Mode, ModelParams, NamedTensor, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::Batch;
use crate::feedback::{latent_from_real, Decoder, Encoder};
use crate::linalg::C64;
use crate::precoder::{assemble, equal_power, normalize_directions, Jmp, PowerAllocator, PrecodingSolution};
use crate::rate::sum_rate_objective;
use crate::{Error, Result, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder, decoder, direction network and power network, trained on
    /// the sum-rate.
    Full,
    /// Decoder features normalized directly into directions.
    NoJmp,
    /// Equal power `P/K` in place of the power network.
    NoPa,
    /// Encoder and decoder only, trained to reconstruct the eigenvectors.
    Reconstruction,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "jfpnet",
            Variant::NoJmp => "jfpnet-no-jmp",
            Variant::NoPa => "jfpnet-no-pa",
            Variant::Reconstruction => "djscc-mse",
        }
    }

    fn has_jmp(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPa)
    }

    fn has_pa(self) -> bool {
        matches!(self, Variant::Full | Variant::NoJmp)
    }
}

/// Tape outputs of one forward pass.
pub struct Forward<'g> {
    /// `[B·K, 2, N_b, N_t]`
    pub features: Var<'g>,
    /// `[B·N_b, K, 2, N_t]`, absent for [`Variant::Reconstruction`].
    pub directions: Option<Var<'g>>,
    /// `[B·N_b, K]`, absent for [`Variant::Reconstruction`].
    pub powers: Option<Var<'g>>,
}

#[derive(Clone, Debug)]
pub struct JfpNet {
    pub cfg: SystemConfig,
    pub variant: Variant,
    encoder: Encoder,
    decoder: Decoder,
    jmp: Option<Jmp>,
    pa: Option<PowerAllocator>,
    pub params: ModelParams,
}

impl JfpNet {
    pub fn new(cfg: &SystemConfig, variant: Variant, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let encoder = Encoder::new(&mut params, cfg, &mut rng)?;
        let decoder = Decoder::new(&mut params, cfg, &mut rng)?;
        let jmp = if variant.has_jmp() {
            Some(Jmp::new(&mut params, cfg, &mut rng)?)
        } else {
            None
        };
        let pa = if variant.has_pa() {
            Some(PowerAllocator::new(&mut params, cfg, &mut rng)?)
        } else {
            None
        };
        Ok(JfpNet {
            cfg: cfg.clone(),
            variant,
            encoder,
            decoder,
            jmp,
            pa,
            params,
        })
    }

    /// Rebuilds a model from checkpoint records, reading the variant off the
    /// parameter names.
    pub fn from_records(cfg: &SystemConfig, records: Vec<NamedTensor>) -> Result<Self> {
        let has = |prefix: &str| records.iter().any(|r| r.name.starts_with(prefix));
        let variant = match (has("jmp."), has("pa.")) {
            (true, true) => Variant::Full,
            (false, true) => Variant::NoJmp,
            (true, false) => Variant::NoPa,
            (false, false) => Variant::Reconstruction,
        };
        let mut model = JfpNet::new(cfg, variant, 0)?;
        model
            .params
            .load_records(records)
            .map_err(|e| Error::Config(format!("checkpoint does not fit the configuration: {e}")))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.params.save(path)?)
    }

    pub fn load(cfg: &SystemConfig, path: &Path) -> Result<Self> {
        JfpNet::from_records(cfg, read_checkpoint(path)?)
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, batch: &Batch) -> Result<Forward<'g>> {
        let cfg = &self.cfg;
        let (b, k_users, n_b, n_t) = (batch.size, cfg.users, cfg.num_subbands(), cfg.bs_antennas);
        let latent = self.encoder.forward(s, s.constant(batch.m.clone()))?;
        let received = latent.add(s.constant(batch.noise.clone()))?;
        let features = self.decoder.forward(s, received)?;
        if self.variant == Variant::Reconstruction {
            return Ok(Forward {
                features,
                directions: None,
                powers: None,
            });
        }
        let per_subband = features
            .reshape(&[b, k_users, 2, n_b, n_t])?
            .permute(&[0, 3, 1, 2, 4])?
            .reshape(&[b * n_b, k_users, 2, n_t])?;
        let directions = match &self.jmp {
            Some(jmp) => jmp.forward(s, per_subband)?,
            None => normalize_directions(per_subband)?,
        };
        let powers = match &self.pa {
            Some(pa) => pa.forward(s, s.constant(batch.eig.clone()))?,
            None => equal_power(s, b * n_b, cfg),
        };
        Ok(Forward {
            features,
            directions: Some(directions),
            powers: Some(powers),
        })
    }

    /// Per-sample average sum-rate `[B]` of a forward pass.
    pub fn sum_rates<'g>(&self, fwd: &Forward<'g>, batch: &Batch) -> Result<Var<'g>> {
        let cfg = &self.cfg;
        let (Some(d), Some(p)) = (fwd.directions, fwd.powers) else {
            return Err(Error::Config(format!("{} produces no precoders", self.variant.name())));
        };
        let o = assemble(d, p)?.reshape(&[batch.size, cfg.num_subbands(), cfg.users, 2, cfg.bs_antennas])?;
        sum_rate_objective(o, &batch.channels, cfg)
    }

    /// Scalar training loss: negative mean sum-rate, or the reconstruction
    /// MSE for [`Variant::Reconstruction`].
    pub fn loss<'g>(&self, s: &Session<'g, '_>, batch: &Batch) -> Result<Var<'g>> {
        let fwd = self.forward(s, batch)?;
        if self.variant == Variant::Reconstruction {
            let diff = fwd.features.sub(s.constant(batch.m.clone()))?;
            return Ok(diff.square().mean());
        }
        Ok(self.sum_rates(&fwd, batch)?.mean().neg())
    }

    /// Inference-mode precoders of every sample in the batch.
    pub fn precode(&self, batch: &Batch) -> Result<Vec<PrecodingSolution>> {
        let g = Graph::new();
        let s = Session::new(&g, &self.params, Mode::Infer);
        let fwd = self.forward(&s, batch)?;
        let (Some(d), Some(p)) = (fwd.directions, fwd.powers) else {
            return Err(Error::Config(format!("{} produces no precoders", self.variant.name())));
        };
        let (d, p) = (d.value().clone(), p.value().clone());
        (0..batch.size)
            .map(|b| PrecodingSolution::from_tensors(&d, &p, b, self.cfg.num_subbands()))
            .collect()
    }

    /// Inference-mode decoder outputs as `[B][N_b][K]` complex vectors.
    pub fn reconstruct(&self, batch: &Batch) -> Result<Vec<Vec<Vec<Vec<C64>>>>> {
        let g = Graph::new();
        let s = Session::new(&g, &self.params, Mode::Infer);
        let features = self.forward(&s, batch)?.features.value().clone();
        Ok(split_features(&features, &self.cfg, batch.size))
    }

    /// Inference-mode latent vectors `[B·K][n]` before the uplink.
    pub fn encode(&self, m: &Tensor) -> Result<Vec<Vec<C64>>> {
        let g = Graph::new();
        let s = Session::new(&g, &self.params, Mode::Infer);
        let z = self.encoder.forward(&s, s.constant(m.clone()))?.value().clone();
        Ok(z.data().chunks(2 * self.cfg.latent_symbols).map(latent_from_real).collect())
    }
}

fn split_features(t: &Tensor, cfg: &SystemConfig, b: usize) -> Vec<Vec<Vec<Vec<C64>>>> {
    let (k_users, n_b, n_t) = (cfg.users, cfg.num_subbands(), cfg.bs_antennas);
    let d = t.data();
    (0..b)
        .map(|bi| {
            (0..n_b)
                .map(|sb| {
                    (0..k_users)
                        .map(|k| {
                            let base = (bi * k_users + k) * 2 * n_b * n_t;
                            (0..n_t)
                                .map(|i| C64::new(d[base + sb * n_t + i], d[base + (n_b + sb) * n_t + i]))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}
