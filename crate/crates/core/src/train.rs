//! Mini-batch training with mixed uplink SNRs, plateau learning-rate decay
//! and best-epoch selection on a fixed validation draw.

use jfp_autograd::{Adam, Graph, Mode, ModelParams, PlateauScheduler, Session};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{draw_feedback_noise, eval_noise_seed, Batch, PreparedSample};
use crate::linalg::{inner, norm};
use crate::model::{JfpNet, Variant};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training SNRs are drawn per sample, uniform in `[snr_min_db, snr_max_db]`.
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            seed: 1,
            snr_min_db: -10.0,
            snr_max_db: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr >= 1e-4) || !(self.snr_min_db <= self.snr_max_db) {
            return Err(Error::Config(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// One row of the training log. Epoch 0 describes the initial parameters
/// and has no training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    /// Mean validation sum-rate, or for reconstruction models the mean
    /// cosine similarity between decoded and true eigenvectors.
    pub val_metric: f64,
    pub lr: f64,
    pub best_val_loss: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_metric,lr,best_val_loss,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.train_loss.map_or(String::new(), |l| l.to_string()),
            self.val_loss,
            self.val_metric,
            self.lr,
            self.best_val_loss,
            self.seconds
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The model at its best validation epoch.
    pub model: JfpNet,
    pub log: Vec<EpochLog>,
    /// Set when a non-finite loss or gradient stopped training early.
    pub aborted: Option<String>,
}

/// Validation batches with a fixed SNR and noise draw per sample.
pub struct ValidationSet {
    batches: Vec<Batch>,
    samples: usize,
}

impl ValidationSet {
    /// Each sample gets an SNR uniform in the training range (or `fixed_snr`)
    /// and noise seeded from `seed` and the sample itself.
    pub fn new(
        samples: &[PreparedSample],
        model_cfg: &crate::SystemConfig,
        tc: &TrainConfig,
        fixed_snr: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut snr_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batches = Vec::new();
        for chunk in samples.chunks(tc.batch_size.max(1)) {
            let mut noise = Vec::with_capacity(chunk.len());
            for s in chunk {
                let snr = fixed_snr.unwrap_or_else(|| snr_rng.random_range(tc.snr_min_db..=tc.snr_max_db));
                let mut rng = ChaCha8Rng::seed_from_u64(eval_noise_seed(seed, s.seed, snr));
                noise.push(draw_feedback_noise(s, snr, &mut rng)?);
            }
            let refs: Vec<&PreparedSample> = chunk.iter().collect();
            batches.push(Batch::new(&refs, &noise, model_cfg)?);
        }
        Ok(ValidationSet {
            batches,
            samples: samples.len(),
        })
    }

    /// Sample-weighted mean loss and metric in inference mode.
    pub fn evaluate(&self, model: &JfpNet) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut metric = 0.0;
        for batch in &self.batches {
            let g = Graph::new();
            let s = Session::new(&g, &model.params, Mode::Infer);
            let w = batch.size as f64;
            let l = model.loss(&s, batch)?.item();
            loss += l * w;
            metric += if model.variant == Variant::Reconstruction {
                reconstruction_similarity(model, batch)? * w
            } else {
                -l * w
            };
        }
        let n = self.samples.max(1) as f64;
        Ok((loss / n, metric / n))
    }
}

/// Mean `|⟨m̂, m⟩|/‖m̂‖` over users and subbands of a batch.
pub fn reconstruction_similarity(model: &JfpNet, batch: &Batch) -> Result<f64> {
    let decoded = model.reconstruct(batch)?;
    let cfg = &model.cfg;
    let (k_users, n_b, n_t) = (cfg.users, cfg.num_subbands(), cfg.bs_antennas);
    let m = batch.m.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, per_subband) in decoded.iter().enumerate() {
        for (sb, users) in per_subband.iter().enumerate() {
            for (k, est) in users.iter().enumerate() {
                let base = (b * k_users + k) * 2 * n_b * n_t;
                let truth: Vec<_> = (0..n_t)
                    .map(|i| crate::linalg::C64::new(m[base + sb * n_t + i], m[base + (n_b + sb) * n_t + i]))
                    .collect();
                let n = norm(est);
                total += if n > 0.0 { inner(est, &truth).norm() / n } else { 0.0 };
                count += 1;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

fn finite_grads(params: &ModelParams) -> bool {
    params.params().all(|p| p.grad.as_ref().is_none_or(|g| g.is_finite()))
}

/// Trains `model` on `train`, selecting the epoch with the lowest
/// validation loss. `on_epoch` sees every log row as it is produced.
pub fn train(
    mut model: JfpNet,
    train: &[PreparedSample],
    val: &ValidationSet,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut lr = tc.lr;
    let mut sched = PlateauScheduler::default();
    let mut log = Vec::with_capacity(tc.epochs + 1);

    let (val_loss, val_metric) = val.evaluate(&model)?;
    if !val_loss.is_finite() {
        return Err(Error::Numerical(format!("initial validation loss is {val_loss}")));
    }
    let mut best_loss = val_loss;
    let mut best_params = model.params.clone();
    let row = EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss,
        val_metric,
        lr,
        best_val_loss: best_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    on_epoch(&row);
    log.push(row);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut aborted = None;
    'epochs: for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let samples: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let noise = samples
                .iter()
                .map(|s| {
                    let snr = rng.random_range(tc.snr_min_db..=tc.snr_max_db);
                    draw_feedback_noise(s, snr, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::new(&samples, &noise, &model.cfg)?;
            let last_good = model.params.clone();
            let g = Graph::new();
            let s = Session::new(&g, &model.params, Mode::Train);
            let loss = model.loss(&s, &batch)?;
            let value = loss.item();
            let grads = g.backward(loss)?;
            s.finish(Some(&grads)).apply(&mut model.params)?;
            if !value.is_finite() || !finite_grads(&model.params) {
                model.params = last_good;
                aborted = Some(format!("non-finite loss or gradient in epoch {epoch} (loss {value})"));
                break 'epochs;
            }
            Adam::with_lr(lr).step(&mut model.params)?;
            loss_sum += value * chunk.len() as f64;
        }
        let (val_loss, val_metric) = val.evaluate(&model)?;
        if !val_loss.is_finite() {
            aborted = Some(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best_params = model.params.clone();
        }
        let row = EpochLog {
            epoch,
            train_loss: Some(loss_sum / train.len() as f64),
            val_loss,
            val_metric,
            lr,
            best_val_loss: best_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.push(row);
        lr = sched.step(val_loss, lr);
    }
    model.params = best_params;
    Ok(TrainOutcome { model, log, aborted })
}
