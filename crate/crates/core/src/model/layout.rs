use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// One named tensor inside the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }

    pub fn is_norm_gain(&self) -> bool {
        self.name.ends_with("norm")
    }

    pub fn is_residual_projection(&self) -> bool {
        self.name.ends_with(".wo") || self.name.ends_with(".w_down")
    }

    /// Matrices get weight decay; gains do not.
    pub fn is_matrix(&self) -> bool {
        self.shape.len() >= 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub mlp_norm: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

/// Tensor directory of a model. The order is fixed by the config:
/// `tok_emb`, then per layer `attn_norm, wq, wk, wv, wo, mlp_norm, w_gate,
/// w_up, w_down`, then `final_norm` and `lm_head`. Matrices are stored
/// `[in, out]`, so a projection is `x · W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    pub(crate) tok_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) final_norm: usize,
    pub(crate) lm_head: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let (v, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.mlp_dim);
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let at = offset;
            offset += shape.iter().product::<usize>();
            specs.push(TensorSpec { name, shape, offset: at });
            at
        };
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let layers = (0..cfg.num_layers)
            .map(|l| LayerOffsets {
                attn_norm: push(format!("layers.{l}.attn_norm"), vec![d]),
                wq: push(format!("layers.{l}.wq"), vec![d, d]),
                wk: push(format!("layers.{l}.wk"), vec![d, d]),
                wv: push(format!("layers.{l}.wv"), vec![d, d]),
                wo: push(format!("layers.{l}.wo"), vec![d, d]),
                mlp_norm: push(format!("layers.{l}.mlp_norm"), vec![d]),
                w_gate: push(format!("layers.{l}.w_gate"), vec![d, f]),
                w_up: push(format!("layers.{l}.w_up"), vec![d, f]),
                w_down: push(format!("layers.{l}.w_down"), vec![f, d]),
            })
            .collect();
        let final_norm = push("final_norm".into(), vec![d]);
        let lm_head = push("lm_head".into(), vec![d, v]);
        Layout { specs, tok_emb, layers, final_norm, lm_head, total: offset }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}
