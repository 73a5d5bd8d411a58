//! Test-set evaluation of learned and classical precoders at a given uplink
//! SNR, with a noise draw shared by every method.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{perfect_feedback, precode_bd_wf, precode_direct, BaselineKind};
use crate::batch::{draw_feedback_noise, eval_noise_seed, Batch, PreparedSample};
use crate::linalg::C64;
use crate::model::{JfpNet, Variant};
use crate::precoder::PrecodingSolution;
use crate::rate::{sum_rate, RateReport};
use crate::{Error, Result, SystemConfig};

pub const RESULTS_HEADER: &str = "method,uplink_snr_db,latent_n,mean_sum_rate_bps_hz,ci95";

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub uplink_snr_db: f64,
    pub latent_n: usize,
    pub report: RateReport,
}

impl EvalRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.method, self.uplink_snr_db, self.latent_n, self.report.mean, self.report.ci95
        )
    }
}

/// Label of a trained model in result tables.
pub fn model_label(variant: Variant) -> &'static str {
    match variant {
        Variant::Full => "JFPNet",
        Variant::NoJmp => "JFPNet_NO_JMP",
        Variant::NoPa => "JFPNet_NO_PA",
        Variant::Reconstruction => "DJSCC_MSE_RECON",
    }
}

/// Feedback noise of every test sample at `snr_db`. Each draw depends only
/// on `seed`, the sample and the SNR.
pub fn test_noise(test: &[PreparedSample], snr_db: f64, seed: u64) -> Result<Vec<Vec<Vec<C64>>>> {
    test.iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(eval_noise_seed(seed, s.seed, snr_db));
            draw_feedback_noise(s, snr_db, &mut rng)
        })
        .collect()
}

fn batches<'a>(
    test: &'a [PreparedSample],
    noise: &[Vec<Vec<C64>>],
    cfg: &SystemConfig,
) -> Result<Vec<(Batch, &'a [PreparedSample])>> {
    test.chunks(EVAL_BATCH)
        .zip(noise.chunks(EVAL_BATCH))
        .map(|(samples, noise)| {
            let refs: Vec<&PreparedSample> = samples.iter().collect();
            Ok((Batch::new(&refs, noise, cfg)?, samples))
        })
        .collect()
}

fn rates_of(samples: &[PreparedSample], solutions: &[PrecodingSolution], cfg: &SystemConfig) -> Result<Vec<f64>> {
    samples
        .iter()
        .zip(solutions)
        .map(|(s, sol)| Ok(sum_rate(&s.reports, sol, cfg)?.sum_rate))
        .collect()
}

/// Sum-rates of a trained end-to-end model.
pub fn evaluate_model(model: &JfpNet, test: &[PreparedSample], snr_db: f64, seed: u64) -> Result<RateReport> {
    if model.variant == Variant::Reconstruction {
        return Err(Error::Config("a reconstruction model needs a baseline precoder".into()));
    }
    let noise = test_noise(test, snr_db, seed)?;
    let mut rates = Vec::with_capacity(test.len());
    for (batch, samples) in batches(test, &noise, &model.cfg)? {
        rates.extend(rates_of(samples, &model.precode(&batch)?, &model.cfg)?);
    }
    Ok(RateReport::from_samples(rates))
}

/// Sum-rates of a classical scheme. The `DJSCC_MSE*` kinds precode from the
/// vectors decoded by `recon`; the perfect-feedback kinds ignore it and the
/// SNR.
pub fn evaluate_baseline(
    kind: BaselineKind,
    recon: Option<&JfpNet>,
    cfg: &SystemConfig,
    test: &[PreparedSample],
    snr_db: f64,
    seed: u64,
) -> Result<RateReport> {
    let (p, noise_dl) = (cfg.tx_power(), cfg.noise_power_dl());
    let solve = |vectors: &[Vec<Vec<C64>>], eigvals: &[Vec<f64>]| -> Result<PrecodingSolution> {
        if kind.uses_bd() {
            Ok(precode_bd_wf(vectors, eigvals, p, noise_dl)?.0)
        } else {
            precode_direct(vectors, p)
        }
    };
    let rates = match kind {
        BaselineKind::Pf | BaselineKind::PfBdWf => test
            .iter()
            .map(|s| {
                let (vectors, eigvals) = perfect_feedback(&s.reports);
                Ok(sum_rate(&s.reports, &solve(&vectors, &eigvals)?, cfg)?.sum_rate)
            })
            .collect::<Result<Vec<f64>>>()?,
        BaselineKind::DjsccMse | BaselineKind::DjsccMseBdWf => {
            let model = recon
                .filter(|m| m.variant == Variant::Reconstruction)
                .ok_or_else(|| Error::Config(format!("{kind} needs a trained reconstruction model")))?;
            if model.cfg != *cfg {
                return Err(Error::Config(format!("{kind} model was trained for another configuration")));
            }
            let noise = test_noise(test, snr_db, seed)?;
            let mut rates = Vec::with_capacity(test.len());
            for (batch, samples) in batches(test, &noise, cfg)? {
                let decoded = model.reconstruct(&batch)?;
                for (s, vectors) in samples.iter().zip(&decoded) {
                    // BD-WF uses the true eigenvalues; only the vectors pass
                    // through the learned feedback link
                    let (_, eigvals) = perfect_feedback(&s.reports);
                    rates.push(sum_rate(&s.reports, &solve(vectors, &eigvals)?, cfg)?.sum_rate);
                }
            }
            rates
        }
        BaselineKind::JfpNet => return Err(Error::Config("use evaluate_model for JFPNet".into())),
    };
    Ok(RateReport::from_samples(rates))
}
