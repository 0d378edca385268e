//! Run configuration, read from a TOML file of flat dotted keys such as
//!
//! ```toml
//! seed = 7
//! overlap.threshold = 0.1
//! model.d_model = 32
//! train.epochs = 6
//! prefixes.intent = "made to"
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{QuestionType, SplitRatios};
use crate::error::{Error, Result};
use crate::geometry::OverlapConfig;
use crate::model::{AblationConfig, ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub annotations: PathBuf,
    /// Directory of `<image_id>.source.emuf` and `<image_id>.edited.emuf`.
    pub features: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            annotations: "annotations.jsonl".into(),
            features: "features".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

/// Sizes of a generated synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub train_images: usize,
    pub test_images: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            train_images: 2000,
            test_images: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub overlap: OverlapConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub split: SplitRatios,
    pub synth: SynthSettings,
    /// Generation prefix per question-type tag.
    pub prefixes: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            overlap: OverlapConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
            split: SplitRatios::STANDARD,
            synth: SynthSettings::default(),
            prefixes: BTreeMap::new(),
        }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::STANDARD
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.overlap.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        if let Some(tag) = self.prefixes.keys().find(|t| QuestionType::from_tag(t).is_none()) {
            return Err(Error::Config(format!("prefix for unknown question type {tag:?}")));
        }
        Ok(())
    }
}
