use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use jfp_core::channel::ChannelModel;
use jfp_core::train::TrainConfig;
use jfp_core::SystemConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything an experiment needs. Every field is required in the JSON
/// file; `jfp init-config` writes the desk defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub channel: ChannelModel,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub evaluation: EvalConfig,
    pub paths: Paths,
}

/// Contiguous, disjoint splits of one dataset file: the first `train`
/// samples, then `val`, then `test`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Seeds the feedback noise of validation and test draws.
    pub seed: u64,
    pub snr_grid_db: Vec<f64>,
    /// Latent sizes of the feedback-overhead sweep.
    pub latent_list: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub results: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 4000/500/1000 samples, 200 epochs of batch 64.
    pub fn desk() -> Self {
        ExperimentConfig {
            system: SystemConfig::desk(),
            channel: ChannelModel::default(),
            training: TrainConfig::default(),
            data: DataConfig {
                seed: 1,
                train: 4000,
                val: 500,
                test: 1000,
            },
            evaluation: EvalConfig {
                seed: 2024,
                snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
                latent_list: vec![8, 16, 32, 64],
            },
            paths: Paths {
                dataset: "data/desk.jfpc".into(),
                checkpoints: "checkpoints".into(),
                results: "results".into(),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate()?;
        self.training.validate()?;
        let fail = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return fail("data splits must all be non-empty");
        }
        if self.evaluation.snr_grid_db.is_empty() || self.evaluation.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return fail("snr_grid_db must be a non-empty list of finite values");
        }
        check_latent_list(&self.evaluation.latent_list)?;
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.data.train + self.data.val + self.data.test
    }

    /// Single-line JSON for output headers.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}

pub fn check_latent_list(list: &[usize]) -> Result<(), CliError> {
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::Config("latent sizes must be a non-empty list of positive values".into()));
    }
    let unique: BTreeSet<_> = list.iter().collect();
    if unique.len() != list.len() {
        return Err(CliError::Config(format!("duplicate latent sizes in {list:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_round_trip_and_validate() {
        let cfg = ExperimentConfig::desk();
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!((cfg.system.num_rbs(), cfg.system.num_subbands()), (12, 3));
    }

    #[test]
    fn missing_seed_is_rejected() {
        let mut value = serde_json::to_value(ExperimentConfig::desk()).unwrap();
        value["data"].as_object_mut().unwrap().remove("seed");
        assert!(serde_json::from_value::<ExperimentConfig>(value).is_err());
    }

    #[test]
    fn duplicate_latent_sizes_are_rejected() {
        assert!(check_latent_list(&[8, 16, 8]).is_err());
        assert!(check_latent_list(&[8, 16]).is_ok());
    }
}
