//! Experiment configuration: one TOML file, every field optional.
//!
//! Missing fields take full-scale defaults (1024→512 px patches, 40000-sample
//! epochs, lr 5e-5). [`ExperimentConfig::desk`] gives the laptop-scale
//! variant used by the examples and tests.
//!
//! ```toml
//! seeds = [1, 2, 3]
//! output_dir = "runs/desk"
//!
//! [data]
//! source_manifest = "data/source/manifest.jsonl"
//! target_manifest = "data/target/manifest.jsonl"
//!
//! [patch]
//! crop_size = 128
//! out_size = 64
//!
//! [train]
//! epochs = 5
//! epoch_size = 2000
//! adam = { lr = 1e-3 }
//!
//! [hm]
//! enabled = true
//! source_samples = 300
//! target_samples = 66
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::DEFAULT_TEMPERATURE;
use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::histmatch::COMMON_LEVELS;
use crate::nn::adam::AdamConfig;
use crate::nn::train::TrainConfig;
use crate::nn::NetConfig;
use crate::patch::{PatchSpec, DEFAULT_THRESHOLD_FRACTION};
use crate::synth::SyntheticDomainSpec;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "HARMONIZE_OUTPUT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source_manifest: Option<PathBuf>,
    pub target_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmConfig {
    pub enabled: bool,
    /// Shared intensity grid for CDFs and LUTs.
    pub levels: u32,
    /// Images averaged into each domain's CDF (equal thirds of normal,
    /// benign and malignant).
    pub source_samples: usize,
    pub target_samples: usize,
    /// Build CDFs from foreground pixels only (threshold_fraction of the max level).
    pub foreground_only: bool,
}

impl Default for HmConfig {
    fn default() -> Self {
        Self { enabled: true, levels: COMMON_LEVELS, source_samples: 1200, target_samples: 600, foreground_only: false }
    }
}

/// Target-domain adaptation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub epoch_size: usize,
    pub batch_size: usize,
    pub bn_momentum: f64,
    pub adam: AdamConfig,
    /// Gumbel-softmax temperature for block routing.
    pub temperature: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            epoch_size: t.epoch_size,
            batch_size: t.batch_size,
            bn_momentum: t.bn_momentum,
            adam: AdamConfig::fine_tuning(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl AdaptConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            epoch_size: self.epoch_size,
            batch_size: self.batch_size,
            bn_momentum: self.bn_momentum,
            adam: self.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub patch: PatchSpec,
    /// Foreground threshold as a fraction of the maximum level.
    pub threshold_fraction: f64,
    pub augment: AugmentConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub finetune: AdaptConfig,
    pub hm: HmConfig,
    pub synth: SyntheticDomainSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            patch: PatchSpec::default(),
            threshold_fraction: DEFAULT_THRESHOLD_FRACTION,
            augment: AugmentConfig::default(),
            net: NetConfig::desk(),
            train: TrainConfig::default(),
            finetune: AdaptConfig::default(),
            hm: HmConfig::default(),
            synth: SyntheticDomainSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Laptop scale: 128→64 px patches on 256 px images, 2000-sample epochs,
    /// a higher source learning rate so a few epochs suffice.
    pub fn desk() -> Self {
        let patch = PatchSpec { crop_size: 128, out_size: 64 };
        Self {
            patch,
            augment: AugmentConfig::default().scaled_translation(patch.out_size as f64 / 512.0),
            train: TrainConfig {
                epochs: 5,
                epoch_size: 2000,
                adam: AdamConfig { lr: 1e-3, ..AdamConfig::base_training() },
                ..TrainConfig::default()
            },
            finetune: AdaptConfig {
                epochs: 3,
                epoch_size: 1000,
                adam: AdamConfig { lr: 5e-4, ..AdamConfig::fine_tuning() },
                ..AdaptConfig::default()
            },
            hm: HmConfig { source_samples: 300, target_samples: 66, ..HmConfig::default() },
            ..Self::default()
        }
    }

    /// Parse TOML; relative data paths and `output_dir` resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_else(|| "<root>".into());
            Error::config(field, e.message().to_string())
        })?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.data.source_manifest.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.data.target_manifest.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    /// Load, apply the output-root override from the environment, validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::load_settings(path)?;
        cfg.validate_data()?;
        Ok(cfg)
    }

    /// Like [`load`](Self::load) but without requiring the manifests to exist
    /// yet, for generating the data they will point at.
    pub fn load_settings(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(root);
        }
        cfg.validate_settings()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(format!("serialize config: {e}")))
    }

    /// Every check reports the dotted path of the offending field.
    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        self.validate_data()
    }

    fn validate_settings(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        self.patch.validate()?;
        if self.net.input_size != self.patch.out_size {
            return Err(Error::config(
                "net.input_size",
                format!("must equal patch.out_size ({})", self.patch.out_size),
            ));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(Error::config("threshold_fraction", "must lie in (0, 1)"));
        }
        self.augment.validate()?;
        self.net.validate()?;
        self.train.validate("train")?;
        self.finetune.train_config().validate("finetune")?;
        if !(self.finetune.temperature > 0.0 && self.finetune.temperature.is_finite()) {
            return Err(Error::config("finetune.temperature", "must be finite and > 0"));
        }
        if !(2..=65536).contains(&self.hm.levels) {
            return Err(Error::config("hm.levels", "must lie in [2, 65536]"));
        }
        for (field, n) in [("hm.source_samples", self.hm.source_samples), ("hm.target_samples", self.hm.target_samples)] {
            if n == 0 || !n.is_multiple_of(3) {
                return Err(Error::config(field, "must be a positive multiple of 3"));
            }
        }
        self.synth.validate()
    }

    fn validate_data(&self) -> Result<()> {
        for (field, p) in [
            ("data.source_manifest", &self.data.source_manifest),
            ("data.target_manifest", &self.data.target_manifest),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::config(field, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// The source manifest path, or a config error naming the missing field.
    pub fn require_manifest(&self, source: bool) -> Result<&Path> {
        let (field, p) = if source {
            ("data.source_manifest", &self.data.source_manifest)
        } else {
            ("data.target_manifest", &self.data.target_manifest)
        };
        p.as_deref().ok_or_else(|| Error::config(field, "required by this command"))
    }
}
