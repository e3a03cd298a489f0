//! Hand-built models with analytically known outputs.

use crate::error::Result;
use crate::vocab::Token;

use super::{ModelConfig, ModelParams};

/// Every next-token distribution is uniform over the vocabulary.
pub fn uniform_model(config: &ModelConfig) -> Result<ModelParams<f32>> {
    ModelParams::zeros(config)
}

/// Predicts `token` with probability one (to f32 precision) at every
/// position, regardless of input.
pub fn constant_model(config: &ModelConfig, token: Token) -> Result<ModelParams<f32>> {
    let mut p = ModelParams::zeros(config)?;
    let (d, v) = (config.embed_dim, config.vocab_size);
    p.tensor_mut("tok_emb").expect("tok_emb").fill(1.0);
    let head = p.tensor_mut("lm_head").expect("lm_head");
    for j in 0..d {
        head[j * v + token.id()] = 60.0 / d as f32;
    }
    Ok(p)
}
