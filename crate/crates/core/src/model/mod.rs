//! The multimodal transformer: configuration, parameters, input assembly,
//! forward/backward and training.

pub mod config;
pub mod forward;
pub mod input;
pub mod params;
pub mod train;

pub use config::{AblationConfig, ModelConfig};
pub use forward::{accumulate_gradients, forward, score, ExampleOutcome, Layout};
pub use input::{answer_tokens, build_input, label_token, token_label, PelicanInput};
pub use params::PelicanParams;
pub use train::{
    classify_yes_no, generate, label_accuracy, perplexity, train, BatchObjective, Classification, EpochLog,
    TrainConfig, TrainLog,
};
