use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tokenizer::VOCAB_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Most regions per image (per source/edited block).
    pub max_regions: usize,
    /// Most token positions fed to the model.
    pub max_tokens: usize,
    pub vocab_size: usize,
    /// Width of the region feature vectors.
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            max_regions: 16,
            max_tokens: 48,
            vocab_size: VOCAB_SIZE,
            feature_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_regions == 0 || self.max_tokens == 0 {
            return Err(Error::Config("max_regions and max_tokens must be at least 1".into()));
        }
        if self.vocab_size != VOCAB_SIZE {
            return Err(Error::Config(format!(
                "vocab_size must match the tokenizer ({VOCAB_SIZE}), got {}",
                self.vocab_size
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Which mechanisms are active. The defaults describe the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub use_priority_graph: bool,
    pub use_annotated_features: bool,
    pub use_source_image: bool,
    /// Tag only: no pretrained weights exist, so training is always from
    /// scratch.
    pub from_scratch: bool,
    pub use_edited_image: bool,
    /// Append the question subject's region vector after the edited block.
    pub append_subject_region: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            use_priority_graph: true,
            use_annotated_features: true,
            use_source_image: true,
            from_scratch: false,
            use_edited_image: true,
            append_subject_region: false,
        }
    }
}

const FLAG_NAMES: [&str; 6] = [
    "no_graph",
    "no_annotated",
    "no_source",
    "from_scratch",
    "no_edited",
    "subject_append",
];

impl AblationConfig {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn without_priority_graph() -> Self {
        AblationConfig {
            use_priority_graph: false,
            ..Self::default()
        }
    }

    pub fn without_annotated_features() -> Self {
        AblationConfig {
            use_annotated_features: false,
            ..Self::default()
        }
    }

    pub fn without_source_image() -> Self {
        AblationConfig {
            use_source_image: false,
            ..Self::default()
        }
    }

    pub fn without_pretraining() -> Self {
        AblationConfig {
            from_scratch: true,
            ..Self::default()
        }
    }

    /// Language-only: both region blocks removed.
    pub fn text_only() -> Self {
        AblationConfig {
            use_priority_graph: false,
            use_annotated_features: false,
            use_source_image: false,
            use_edited_image: false,
            ..Self::default()
        }
    }

    /// Regions as a flat prefix with the subject's vector appended.
    pub fn cross_modal() -> Self {
        AblationConfig {
            use_priority_graph: false,
            use_annotated_features: false,
            use_source_image: true,
            append_subject_region: true,
            ..Self::default()
        }
    }

    fn flags(&self) -> [bool; 6] {
        [
            !self.use_priority_graph,
            !self.use_annotated_features,
            !self.use_source_image,
            self.from_scratch,
            !self.use_edited_image,
            self.append_subject_region,
        ]
    }

    /// Parses a comma-separated flag list such as `no_graph,no_source`.
    /// `full` or an empty string gives the defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut cfg = AblationConfig::default();
        for raw in spec.split(',') {
            let flag = raw.trim().replace('-', "_");
            match flag.as_str() {
                "" | "full" => {}
                "no_graph" => cfg.use_priority_graph = false,
                "no_annotated" => cfg.use_annotated_features = false,
                "no_source" => cfg.use_source_image = false,
                "from_scratch" => cfg.from_scratch = true,
                "no_edited" => cfg.use_edited_image = false,
                "subject_append" => cfg.append_subject_region = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation flag {other:?}; expected one of full, {}",
                        FLAG_NAMES.join(", ")
                    )))
                }
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let active: Vec<&str> = FLAG_NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect();
        if active.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&active.join("+"))
        }
    }
}
