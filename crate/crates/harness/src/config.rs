use std::fs;
use std::path::{Path, PathBuf};

use mldgseg_core::data::{PhantomConfig, MANIFEST_FILE};
use mldgseg_core::segnet::NetworkConfig;
use mldgseg_core::trainer::TrainConfig;
use mldgseg_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    Baseline,
    #[default]
    Mldg,
    Oracle,
    Kshot,
}

impl Procedure {
    pub const ALL: [Procedure; 4] = [
        Procedure::Baseline,
        Procedure::Mldg,
        Procedure::Oracle,
        Procedure::Kshot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Baseline => "baseline",
            Procedure::Mldg => "mldg",
            Procedure::Oracle => "oracle",
            Procedure::Kshot => "kshot",
        }
    }
}

impl std::str::FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Procedure::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown procedure {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset manifest; `<out>/data/manifest.toml` when unset.
    pub manifest: Option<PathBuf>,
    pub sources: Vec<String>,
    pub target: String,
    pub procedure: Procedure,
    pub k: usize,
    /// Trained checkpoint to fine-tune (k-shot) or to predict with.
    pub checkpoint: Option<PathBuf>,
    /// Procedures compared by `stats`; the first is the reference.
    pub compare: Vec<String>,
    /// Patches per test subject written by `export-features`.
    pub feature_patches: usize,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub phantom: PhantomConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: None,
            sources: vec![
                "cervical".into(),
                "upper_thoracic".into(),
                "lower_thoracic".into(),
            ],
            target: "lumbar".into(),
            procedure: Procedure::Mldg,
            k: 1,
            checkpoint: None,
            compare: vec!["baseline".into(), "mldg".into()],
            feature_patches: 5,
            train: TrainConfig {
                lr: 0.05,
                ..TrainConfig::default()
            },
            network: NetworkConfig::desk(),
            phantom: PhantomConfig::default(),
            out: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Laptop-scale defaults: 4 domains × 6 subjects of 48³, patch 16, channels [4, 8, 16].
    pub fn desk() -> Self {
        Self::default()
    }

    /// The full-size network on 64³ patches (not run by the test suite).
    pub fn paper() -> Self {
        ExperimentConfig {
            network: NetworkConfig::paper(),
            phantom: PhantomConfig {
                extents: [128, 128, 128],
                ..PhantomConfig::default()
            },
            train: TrainConfig::default(),
            ..Self::default()
        }
    }

    /// Reduced profile sized for repeated training on a single CPU core.
    pub fn benchmark() -> Self {
        ExperimentConfig {
            network: NetworkConfig {
                encoder_channels: vec![4, 8],
                patch_extent: 8,
                ..NetworkConfig::paper()
            },
            phantom: PhantomConfig {
                extents: [22, 22, 32],
                train_subjects: 3,
                validation_subjects: 1,
                test_subjects: 4,
                ..PhantomConfig::default()
            },
            train: TrainConfig {
                lr: 0.05,
                epochs: 10,
                batch_size: 2,
                patches_per_subject: 12,
                augment_per_subject: 6,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.out.join("data").join(MANIFEST_FILE))
    }

    /// Directory name for the configured procedure's artifacts.
    pub fn run_name(&self) -> String {
        match self.procedure {
            Procedure::Kshot => format!("kshot_k{}", self.k),
            p => p.name().to_string(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.run_name())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.network.validate()?;
        if self.sources.contains(&self.target) {
            return Err(Error::Config(format!(
                "target domain {} is also a source",
                self.target
            )));
        }
        match self.procedure {
            Procedure::Mldg if self.sources.len() < 2 => Err(Error::Config(
                "mldg needs at least 2 source domains".into(),
            )),
            Procedure::Baseline if self.sources.is_empty() => {
                Err(Error::Config("baseline needs source domains".into()))
            }
            Procedure::Kshot if self.checkpoint.is_none() => Err(Error::Config(
                "kshot requires a source checkpoint path".into(),
            )),
            Procedure::Kshot if self.k == 0 => Err(Error::Config("kshot requires k ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

/// Deterministic per-component seed: the leading 8 bytes of
/// SHA-256(global seed ‖ component name).
pub fn derive_seed(global: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(component.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_fan_out_by_component() {
        assert_eq!(derive_seed(1, "init"), derive_seed(1, "init"));
        assert_ne!(derive_seed(1, "init"), derive_seed(1, "train"));
        assert_ne!(derive_seed(1, "init"), derive_seed(2, "init"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let cfg = ExperimentConfig::benchmark();
        cfg.write(&path).unwrap();
        assert_eq!(ExperimentConfig::read(&path).unwrap(), cfg);
        std::fs::write(&path, "bogus_key = 3\n").unwrap();
        assert!(matches!(ExperimentConfig::read(&path), Err(Error::Config(_))));
    }

    #[test]
    fn invariants() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.target = "cervical".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            procedure: Procedure::Kshot,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        for cfg in [ExperimentConfig::desk(), ExperimentConfig::paper(), ExperimentConfig::benchmark()] {
            cfg.validate().unwrap();
            cfg.phantom.validate().unwrap();
        }
    }
}
