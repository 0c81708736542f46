//! Tokenizer, block stack and classification head.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{ModelConfig, Preset};
pub use forward::{block_forward, model_forward, tokenize};
pub use params::{init_params, param_spec, BlockParams, Weights};
