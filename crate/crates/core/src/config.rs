//! Run configuration file (TOML) and its fingerprint.
//!
//! ```toml
//! [cohort]
//! n_per_stage = 100
//! test_n_per_stage = 40
//! [backbone]
//! embed_dim = 32
//! [train]
//! stage1_epochs = 10
//! [paths]
//! work_dir = "runs/demo"
//! ```
//!
//! Every section and key is optional and defaults as documented on the
//! corresponding struct; unknown keys are rejected. The fingerprint covers
//! everything except `[paths]`, so a run can be relocated without
//! invalidating its checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::pipeline::TrainConfig;
use crate::preprocess::PreprocessConfig;
use crate::synth::CohortConfig;

pub const WORKDIR_ENV: &str = "BRAINAGE_WORKDIR";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    pub n_per_stage: usize,
    pub test_n_per_stage: usize,
    pub volume_dim: usize,
    pub noise_sigma: f64,
    pub missing_prob: f64,
    pub seed: u64,
}

impl Default for CohortSection {
    fn default() -> Self {
        let c = CohortConfig::default();
        Self {
            n_per_stage: c.n_per_stage,
            test_n_per_stage: 4,
            volume_dim: c.volume_dim,
            noise_sigma: c.noise_sigma,
            missing_prob: c.missing_prob,
            seed: c.seed,
        }
    }
}

impl CohortSection {
    pub fn train(&self) -> CohortConfig {
        CohortConfig {
            n_per_stage: self.n_per_stage,
            volume_dim: self.volume_dim,
            noise_sigma: self.noise_sigma,
            missing_prob: self.missing_prob,
            seed: self.seed,
            subject_prefix: "sub".into(),
        }
    }

    /// Held-out split: same seed, sample indices after the training split.
    pub fn test(&self) -> (CohortConfig, usize) {
        let cfg = CohortConfig {
            n_per_stage: self.test_n_per_stage,
            subject_prefix: "sub".into(),
            ..self.train()
        };
        (cfg, self.n_per_stage * crate::staging::Stage::COUNT)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Falls back to `$BRAINAGE_WORKDIR`, then `brainage-run`.
    pub work_dir: Option<PathBuf>,
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            work_dir: None,
            train_dir: "cohort/train".into(),
            test_dir: "cohort/test".into(),
            checkpoint_dir: "checkpoints".into(),
            predictions: "predictions.csv".into(),
            report: "report.json".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cohort: CohortSection,
    pub backbone: BackboneConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

#[derive(Serialize)]
struct Fingerprinted<'a> {
    cohort: &'a CohortSection,
    backbone: &'a BackboneConfig,
    preprocess: &'a PreprocessConfig,
    train: &'a TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.train().validate()?;
        if self.cohort.test_n_per_stage == 0 {
            return Err(Error::Config("test_n_per_stage must be positive".into()));
        }
        self.backbone.validate()?;
        if self.backbone.volume_dim != self.cohort.volume_dim {
            return Err(Error::Config(format!(
                "backbone.volume_dim {} differs from cohort.volume_dim {}",
                self.backbone.volume_dim, self.cohort.volume_dim
            )));
        }
        self.preprocess.validate()?;
        self.train.validate()
    }

    /// 64-bit hash of the canonical serialisation of every non-path setting.
    pub fn fingerprint(&self) -> u64 {
        let canon = serde_json::to_string(&Fingerprinted {
            cohort: &self.cohort,
            backbone: &self.backbone,
            preprocess: &self.preprocess,
            train: &self.train,
        })
        .expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Work directory: config value, else `$BRAINAGE_WORKDIR`, else `brainage-run`.
    pub fn work_dir(&self) -> PathBuf {
        self.paths
            .work_dir
            .clone()
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("brainage-run"))
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.work_dir().join(&self.paths.train_dir).join(crate::manifest::MANIFEST_FILE)
    }

    pub fn test_manifest(&self) -> PathBuf {
        self.work_dir().join(&self.paths.test_dir).join(crate::manifest::MANIFEST_FILE)
    }

    pub fn checkpoint(&self, tag: crate::pipeline::StageTag) -> PathBuf {
        self.work_dir().join(&self.paths.checkpoint_dir).join(format!("{tag}.ckpt"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.work_dir().join(&self.paths.predictions)
    }

    pub fn report_path(&self) -> PathBuf {
        self.work_dir().join(&self.paths.report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[cohort]\nn_per_stag = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[extra]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_keeps_fingerprint() {
        let c = RunConfig::from_toml("[backbone]\nembed_dim = 32\n[train]\nroute_by = \"predicted\"\n").unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn fingerprint_ignores_paths_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.work_dir = Some("/elsewhere".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.train.seed += 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn cross_section_validation() {
        assert!(RunConfig::from_toml("[cohort]\nvolume_dim = 16\n").is_err());
        assert!(RunConfig::from_toml("[cohort]\nvolume_dim = 16\n[backbone]\nvolume_dim = 16\n").is_ok());
    }
}
