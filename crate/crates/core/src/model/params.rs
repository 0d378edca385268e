use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::data::EditLabel;
use crate::error::Result;
use crate::nn::checkpoint;
use crate::nn::layers::{Block, LayerNorm, Linear, INIT_STD};
use crate::nn::{Parameter, Tensor};

/// Every learnable tensor of the model. The language-model head reuses
/// `token_embedding`.
#[derive(Debug, Clone, PartialEq)]
pub struct PelicanParams {
    pub config: ModelConfig,
    pub feature_proj: Linear,
    pub token_embedding: Parameter,
    pub token_position: Parameter,
    pub region_position: Parameter,
    /// Single row added to every source-image region.
    pub source_marker: Parameter,
    /// Row `k` is the embedding of priority rank `k`. Unreachable regions
    /// get no row (an exact zero contribution).
    pub priority: Parameter,
    pub edit_label: Parameter,
    pub blocks: Vec<Block>,
    pub final_ln: LayerNorm,
}

impl PelicanParams {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let table = |name: &str, rows: usize, rng: &mut ChaCha8Rng| {
            Parameter::new(name, Tensor::randn(&[rows, d], INIT_STD, rng))
        };
        let feature_proj = Linear::new("feature_proj", config.feature_dim, d, &mut rng);
        let token_embedding = table("token_embedding", config.vocab_size, &mut rng);
        let token_position = table("token_position", config.max_tokens, &mut rng);
        let region_position = table("region_position", config.max_regions, &mut rng);
        let source_marker = table("source_marker", 1, &mut rng);
        let priority = table("priority", config.max_regions, &mut rng);
        let edit_label = table("edit_label", EditLabel::ALL.len(), &mut rng);
        let blocks = (0..config.n_layers)
            .map(|i| Block::new(&format!("blocks.{i}"), d, config.n_heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(PelicanParams {
            config,
            feature_proj,
            token_embedding,
            token_position,
            region_position,
            source_marker,
            priority,
            edit_label,
            blocks,
            final_ln: LayerNorm::new("final_ln", d),
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.feature_proj.parameters();
        v.extend([
            &self.token_embedding,
            &self.token_position,
            &self.region_position,
            &self.source_marker,
            &self.priority,
            &self.edit_label,
        ]);
        for b in &self.blocks {
            v.extend(b.parameters());
        }
        v.extend(self.final_ln.parameters());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.feature_proj.parameters_mut();
        v.extend([
            &mut self.token_embedding,
            &mut self.token_position,
            &mut self.region_position,
            &mut self.source_marker,
            &mut self.priority,
            &mut self.edit_label,
        ]);
        for b in &mut self.blocks {
            v.extend(b.parameters_mut());
        }
        v.extend(self.final_ln.parameters_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        checkpoint::write_checkpoint(&self.parameters())
    }

    /// Builds parameters for `config` and fills them from checkpoint bytes.
    pub fn from_checkpoint(config: ModelConfig, bytes: &[u8]) -> Result<Self> {
        let mut params = PelicanParams::new(config, 0)?;
        let stored = checkpoint::read_checkpoint(bytes)?;
        checkpoint::load_into(&mut params.parameters_mut(), &stored)?;
        Ok(params)
    }
}
