use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use jfp_autograd::read_checkpoint;
use jfp_core::baselines::BaselineKind;
use jfp_core::batch::{prepare_all, PreparedSample};
use jfp_core::channel::{generate, ChannelSample};
use jfp_core::csi::representative_subcarrier;
use jfp_core::dataset::{read_dataset, write_dataset, Dataset};
use jfp_core::eval::{evaluate_baseline, evaluate_model, model_label, EvalRow, RESULTS_HEADER};
use jfp_core::linalg::svd;
use jfp_core::model::{JfpNet, Variant};
use jfp_core::train::{self as trainer, ValidationSet, LOG_HEADER};
use jfp_core::SystemConfig;

use crate::config::{check_latent_list, ExperimentConfig};
use crate::output::CsvOut;
use crate::{Ablation, CliError, EvalArgs, GenDataArgs, Mode, ReproduceArgs, SweepArgs, TrainArgs};

/// Relative tolerance of the overhead trend check.
const TREND_TOL: f64 = 0.02;

pub fn init_config(out: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&ExperimentConfig::desk()).expect("configuration serializes");
    std::fs::write(out, text + "\n")?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let out = a.out.unwrap_or_else(|| cfg.paths.dataset.clone());
    generate_dataset(&cfg, &out, a.count.unwrap_or(cfg.total_samples()), a.seed.unwrap_or(cfg.data.seed))
}

fn generate_dataset(cfg: &ExperimentConfig, out: &Path, count: usize, seed: u64) -> Result<(), CliError> {
    let samples = generate(&cfg.system, &cfg.channel, seed, count)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_dataset(out, &cfg.system, &samples)?;
    let (energy, profile) = channel_statistics(&cfg.system, &samples)?;
    let profile: Vec<String> = profile.iter().map(|p| format!("{p:.3}")).collect();
    println!("wrote {count} samples (seed {seed}) to {}", out.display());
    println!("mean downlink element energy: {energy:.4}");
    println!("rank profile (mean share of σ² per singular value): [{}]", profile.join(", "));
    Ok(())
}

/// Mean `|h|²` over downlink elements and the mean normalized squared
/// singular values of the per-RB downlink channels.
fn channel_statistics(cfg: &SystemConfig, samples: &[ChannelSample]) -> Result<(f64, Vec<f64>), CliError> {
    let rank = cfg.ue_antennas.min(cfg.bs_antennas);
    let mut profile = vec![0.0; rank];
    let (mut energy, mut elements, mut count) = (0.0, 0usize, 0usize);
    for s in samples {
        for k in 0..cfg.users {
            for f in 0..cfg.subcarriers {
                let h = s.downlink(k, f);
                energy += h.frobenius_norm().powi(2);
                elements += h.rows() * h.cols();
            }
            for rb in 1..=cfg.num_rbs() {
                let sigma = svd(&s.downlink(k, representative_subcarrier(rb, cfg)? - 1))?.sigma;
                let total: f64 = sigma.iter().map(|x| x * x).sum();
                if total > 0.0 {
                    for (p, x) in profile.iter_mut().zip(&sigma) {
                        *p += x * x / total;
                    }
                    count += 1;
                }
            }
        }
    }
    profile.iter_mut().for_each(|p| *p /= count.max(1) as f64);
    Ok((energy / elements.max(1) as f64, profile))
}

/// Reads a dataset whose channels match the configuration. The latent size
/// does not affect the channels and may differ.
fn load_dataset(cfg: &SystemConfig, path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    let data = read_dataset(path)?;
    let stored = SystemConfig {
        latent_symbols: cfg.latent_symbols,
        ..data.config.clone()
    };
    if stored != *cfg {
        return Err(CliError::Config(format!(
            "dataset {} was generated for a different system configuration",
            path.display()
        )));
    }
    Ok(data)
}

enum Split {
    Train,
    Val,
    Test,
}

fn split<'a>(cfg: &ExperimentConfig, data: &'a Dataset, which: Split) -> Result<&'a [ChannelSample], CliError> {
    let d = &cfg.data;
    let (start, len) = match which {
        Split::Train => (0, d.train),
        Split::Val => (d.train, d.val),
        Split::Test => (d.train + d.val, d.test),
    };
    data.samples.get(start..start + len).ok_or_else(|| {
        CliError::Config(format!(
            "dataset holds {} samples, the configured splits need {}",
            data.samples.len(),
            start + len
        ))
    })
}

pub fn checkpoint_name(variant: Variant, n: usize) -> String {
    format!("{}-n{n}.jfpw", variant.name())
}

/// Loads a checkpoint of any variant, reading the latent size off the
/// encoder's output layer.
fn load_model(system: &SystemConfig, path: &Path) -> Result<JfpNet, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let records = read_checkpoint(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let n = records
        .iter()
        .find(|r| r.name == "enc.fc.bias")
        .map(|r| r.tensor.len() / 2)
        .ok_or_else(|| CliError::Config(format!("{} has no encoder", path.display())))?;
    let cfg = SystemConfig {
        latent_symbols: n,
        ..system.clone()
    };
    Ok(JfpNet::from_records(&cfg, records)?)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    let t = &mut cfg.training;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.lr = a.lr.unwrap_or(t.lr);
    t.seed = a.seed.unwrap_or(t.seed);
    cfg.system.latent_symbols = a.latent_n.unwrap_or(cfg.system.latent_symbols);
    cfg.validate()?;
    let variant = match (a.mode, a.ablate) {
        (Mode::Jfpnet, None) => Variant::Full,
        (Mode::Jfpnet, Some(Ablation::Jmp)) => Variant::NoJmp,
        (Mode::Jfpnet, Some(Ablation::Pa)) => Variant::NoPa,
        (Mode::DjsccMse, None) => Variant::Reconstruction,
        (Mode::DjsccMse, Some(_)) => return Err(CliError::Config("--ablate applies to --mode jfpnet only".into())),
    };
    let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
    let out = a.out.unwrap_or_else(|| cfg.paths.checkpoints.clone());
    train_model(&cfg, &data, &out, variant).map(|_| ())
}

fn train_model(cfg: &ExperimentConfig, data_path: &Path, out_dir: &Path, variant: Variant) -> Result<PathBuf, CliError> {
    let system = &cfg.system;
    let data = load_dataset(system, data_path)?;
    let train_set = prepare_all(split(cfg, &data, Split::Train)?, system)?;
    let val_set = prepare_all(split(cfg, &data, Split::Val)?, system)?;
    let val = ValidationSet::new(&val_set, system, &cfg.training, None, cfg.evaluation.seed)?;

    std::fs::create_dir_all(out_dir)?;
    let ckpt = out_dir.join(checkpoint_name(variant, system.latent_symbols));
    let log_path = ckpt.with_extension("log.csv");
    let mut log = CsvOut::create(&log_path, &format!("train {}", variant.name()), cfg, &[data_path], &[])?;
    log.line(LOG_HEADER)?;
    println!("training {} (n = {}) on {} samples", variant.name(), system.latent_symbols, train_set.len());
    let mut write_error = None;
    let outcome = trainer::train(JfpNet::new(system, variant, cfg.training.seed)?, &train_set, &val, &cfg.training, |row| {
        println!("{}", row.csv_row());
        if let Err(e) = log.line(&row.csv_row()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    log.finish()?;
    outcome.model.save(&ckpt)?;
    println!("saved {} and {}", ckpt.display(), log_path.display());
    match outcome.aborted {
        Some(reason) => Err(CliError::Numerical(format!(
            "{reason}; last good checkpoint kept at {}",
            ckpt.display()
        ))),
        None => Ok(ckpt),
    }
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let baselines = a
        .baselines
        .iter()
        .map(|s| s.parse::<BaselineKind>())
        .collect::<Result<Vec<_>, _>>()?;
    if baselines.contains(&BaselineKind::JfpNet) {
        return Err(CliError::Config("pass JFPNet models with --checkpoint".into()));
    }
    if a.checkpoint.is_empty() && baselines.is_empty() {
        return Err(CliError::Config("nothing to evaluate: give --checkpoint or --baselines".into()));
    }
    let snrs = a.snr_grid.unwrap_or_else(|| cfg.evaluation.snr_grid_db.clone());
    let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
    let out = a.out.unwrap_or_else(|| cfg.paths.results.join("eval.csv"));
    evaluate(&cfg, &data, &a.checkpoint, a.recon_checkpoint.as_deref(), &baselines, &snrs, &out)
}

/// Test split prepared for each latent size in use.
struct TestSets<'a> {
    samples: &'a [ChannelSample],
    prepared: BTreeMap<usize, Vec<PreparedSample>>,
}

impl TestSets<'_> {
    fn get(&mut self, system: &SystemConfig) -> Result<&[PreparedSample], CliError> {
        let n = system.latent_symbols;
        if !self.prepared.contains_key(&n) {
            self.prepared.insert(n, prepare_all(self.samples, system)?);
        }
        Ok(&self.prepared[&n])
    }
}

fn check_snrs(snrs: &[f64]) -> Result<(), CliError> {
    if snrs.is_empty() || snrs.iter().any(|s| !s.is_finite()) {
        return Err(CliError::Config("the SNR grid must be a non-empty list of finite values".into()));
    }
    Ok(())
}

fn evaluate(
    cfg: &ExperimentConfig,
    data_path: &Path,
    checkpoints: &[PathBuf],
    recon_path: Option<&Path>,
    baselines: &[BaselineKind],
    snrs: &[f64],
    out: &Path,
) -> Result<(), CliError> {
    check_snrs(snrs)?;
    let data = load_dataset(&cfg.system, data_path)?;
    let mut tests = TestSets {
        samples: split(cfg, &data, Split::Test)?,
        prepared: BTreeMap::new(),
    };
    let models = checkpoints
        .iter()
        .map(|p| {
            let m = load_model(&cfg.system, p)?;
            if m.variant == Variant::Reconstruction {
                return Err(CliError::Config(format!(
                    "{} is a reconstruction model; pass it with --recon-checkpoint",
                    p.display()
                )));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let recon = recon_path.map(|p| load_model(&cfg.system, p)).transpose()?;
    if let Some(kind) = baselines.iter().find(|k| k.needs_feedback_model()) {
        match &recon {
            Some(m) if m.variant == Variant::Reconstruction => {}
            Some(_) => return Err(CliError::Config("--recon-checkpoint is not a reconstruction model".into())),
            None => return Err(CliError::Config(format!("{kind} needs --recon-checkpoint"))),
        }
    }

    let mut rows = Vec::new();
    for model in &models {
        let test = tests.get(&model.cfg)?;
        for &snr in snrs {
            rows.push(EvalRow {
                method: model_label(model.variant).to_string(),
                uplink_snr_db: snr,
                latent_n: model.cfg.latent_symbols,
                report: evaluate_model(model, test, snr, cfg.evaluation.seed)?,
            });
        }
    }
    for &kind in baselines {
        let system = match (&recon, kind.needs_feedback_model()) {
            (Some(m), true) => m.cfg.clone(),
            _ => cfg.system.clone(),
        };
        let test = tests.get(&system)?;
        for &snr in snrs {
            rows.push(EvalRow {
                method: kind.name().to_string(),
                uplink_snr_db: snr,
                latent_n: system.latent_symbols,
                report: evaluate_baseline(kind, recon.as_ref(), &system, test, snr, cfg.evaluation.seed)?,
            });
        }
    }

    let mut inputs: Vec<&Path> = vec![data_path];
    inputs.extend(checkpoints.iter().map(PathBuf::as_path));
    inputs.extend(recon_path);
    let mut csv = CsvOut::create(out, "eval", cfg, &inputs, &[])?;
    csv.line(RESULTS_HEADER)?;
    println!("{RESULTS_HEADER}");
    for row in &rows {
        csv.line(&row.csv_row())?;
        println!("{}", row.csv_row());
    }
    csv.finish()?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn sweep_overhead(a: SweepArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let n_list = a.n_list.unwrap_or_else(|| cfg.evaluation.latent_list.clone());
    let snrs = a.snr_grid.unwrap_or_else(|| cfg.evaluation.snr_grid_db.clone());
    let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
    let dir = a.checkpoint_dir.unwrap_or_else(|| cfg.paths.checkpoints.clone());
    let out = a.out.unwrap_or_else(|| cfg.paths.results.join("overhead.csv"));
    sweep(&cfg, &data, &n_list, &dir, &snrs, &out)
}

fn sweep(cfg: &ExperimentConfig, data_path: &Path, n_list: &[usize], dir: &Path, snrs: &[f64], out: &Path) -> Result<(), CliError> {
    check_latent_list(n_list)?;
    check_snrs(snrs)?;
    let data = load_dataset(&cfg.system, data_path)?;
    let samples = split(cfg, &data, Split::Test)?;
    let paths: Vec<PathBuf> = n_list.iter().map(|&n| dir.join(checkpoint_name(Variant::Full, n))).collect();

    // table[i][j]: latent n_list[i] at snrs[j]
    let mut table = Vec::with_capacity(n_list.len());
    let mut rows = Vec::new();
    for (&n, path) in n_list.iter().zip(&paths) {
        let model = load_model(&cfg.system, path)?;
        if model.variant != Variant::Full || model.cfg.latent_symbols != n {
            return Err(CliError::Config(format!(
                "{} is {} with n = {}, expected jfpnet with n = {n}",
                path.display(),
                model.variant.name(),
                model.cfg.latent_symbols
            )));
        }
        let test = prepare_all(samples, &model.cfg)?;
        let mut means = Vec::with_capacity(snrs.len());
        for &snr in snrs {
            let report = evaluate_model(&model, &test, snr, cfg.evaluation.seed)?;
            means.push(report.mean);
            rows.push(EvalRow {
                method: model_label(Variant::Full).to_string(),
                uplink_snr_db: snr,
                latent_n: n,
                report,
            });
        }
        table.push(means);
    }

    let n_echo = n_list.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
    let snr_echo = snrs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    let mut inputs: Vec<&Path> = vec![data_path];
    inputs.extend(paths.iter().map(PathBuf::as_path));
    let extra = [format!("n_list: {n_echo}"), format!("snr_grid_db: {snr_echo}")];
    let mut csv = CsvOut::create(out, "sweep-overhead", cfg, &inputs, &extra)?;
    csv.line(RESULTS_HEADER)?;
    println!("n_list: {n_echo}");
    println!("{RESULTS_HEADER}");
    for row in &rows {
        csv.line(&row.csv_row())?;
        println!("{}", row.csv_row());
    }
    csv.finish()?;

    // the trend is checked at the lowest SNR of the grid
    let (j, low) = snrs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..n_list.len()).collect();
        idx.sort_by_key(|&i| n_list[i]);
        idx
    };
    let monotone = order.windows(2).all(|w| table[w[1]][j] >= table[w[0]][j] * (1.0 - TREND_TOL));
    println!(
        "trend at {low} dB: sum-rate non-decreasing in n within {:.0}%: {}",
        100.0 * TREND_TOL,
        if monotone { "yes" } else { "no" }
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn reproduce(a: ReproduceArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.training.epochs = a.epochs.unwrap_or(cfg.training.epochs);
    cfg.validate()?;
    let data = cfg.paths.dataset.clone();
    let dir = cfg.paths.checkpoints.clone();
    generate_dataset(&cfg, &data, cfg.total_samples(), cfg.data.seed)?;

    let mut trained = Vec::new();
    for variant in [Variant::Full, Variant::NoJmp, Variant::NoPa, Variant::Reconstruction] {
        trained.push(train_model(&cfg, &data, &dir, variant)?);
    }
    let recon = trained.pop().expect("four models");
    for &n in &cfg.evaluation.latent_list {
        if n != cfg.system.latent_symbols {
            let mut at_n = cfg.clone();
            at_n.system.latent_symbols = n;
            train_model(&at_n, &data, &dir, Variant::Full)?;
        }
    }
    let baselines = [
        BaselineKind::Pf,
        BaselineKind::PfBdWf,
        BaselineKind::DjsccMse,
        BaselineKind::DjsccMseBdWf,
    ];
    let snrs = cfg.evaluation.snr_grid_db.clone();
    evaluate(&cfg, &data, &trained, Some(&recon), &baselines, &snrs, &cfg.paths.results.join("eval.csv"))?;
    sweep(
        &cfg,
        &data,
        &cfg.evaluation.latent_list,
        &dir,
        &snrs,
        &cfg.paths.results.join("overhead.csv"),
    )
}
