//! A small decoder-only transformer.
//!
//! Pre-norm blocks with RMS normalization, rotary position embeddings in
//! causal multi-head attention, and a SiLU-gated feed-forward layer. The same
//! network serves both reading directions; direction lives in the data.

mod backward;
mod forward;
mod layout;
pub mod reference;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::vocab::{TokenSequence, VOCAB_SIZE};

pub use backward::{loss_and_grad, BatchLoss};
pub use forward::{batch_logprobs, last_logprobs};
pub use layout::{Layout, TensorSpec};

pub const NORM_EPS: f64 = 1e-5;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
}

impl Default for ModelConfig {
    /// The desk-scale model: about 2M parameters.
    fn default() -> Self {
        ModelConfig {
            num_layers: 3,
            num_heads: 4,
            embed_dim: 256,
            mlp_dim: 512,
            vocab_size: VOCAB_SIZE,
            max_seq_len: 32,
            rope_base: 10_000.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_layers == 0 || self.num_heads == 0 || self.embed_dim == 0 || self.mlp_dim == 0 {
            return bad("layer count, head count and dimensions must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!("embed_dim {} is not divisible by num_heads {}", self.embed_dim, self.num_heads));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!("head dimension {} must be even for rotary embeddings", self.head_dim()));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("vocab_size and max_seq_len must be positive".into());
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return bad(format!("rope_base must be a positive real, got {}", self.rope_base));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Total number of trainable scalars, without allocating them.
    pub fn num_params(&self) -> usize {
        Layout::new(self).total()
    }
}

/// Trainable parameters stored as one flat buffer with a named tensor
/// directory (see [`Layout`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S = f32> {
    config: ModelConfig,
    layout: Layout,
    data: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Zero-filled parameters with norm gains set to one.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![S::zero(); layout.total()];
        for spec in layout.specs() {
            if spec.is_norm_gain() {
                data[spec.range()].fill(S::one());
            }
        }
        Ok(ModelParams { config: config.clone(), layout, data })
    }

    pub fn from_data(config: &ModelConfig, data: Vec<S>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if data.len() != layout.total() {
            return Err(Error::Config(format!(
                "parameter buffer has {} values, layout needs {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(ModelParams { config: config.clone(), layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.layout.get(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Initializes a model deterministically from `seed`.
///
/// Matrices are drawn from a normal with std 0.02 truncated at two standard
/// deviations; the residual output projections (`wo`, `w_down`) are further
/// scaled by `1/sqrt(2 * num_layers)`. Norm gains start at one.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    let mut params = ModelParams::<f32>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual_scale = 1.0 / (2.0 * config.num_layers as f64).sqrt();
    let specs: Vec<TensorSpec> = params.layout.specs().to_vec();
    for spec in &specs {
        if spec.is_norm_gain() {
            continue;
        }
        let scale = if spec.is_residual_projection() { INIT_STD * residual_scale } else { INIT_STD };
        for x in &mut params.data[spec.range()] {
            let z = loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                if z.abs() <= 2.0 {
                    break z;
                }
            };
            *x = (z * scale) as f32;
        }
    }
    Ok(params)
}

/// Per-position next-token log-probabilities of a single sequence.
#[derive(Clone, Debug)]
pub struct LogProbs {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl LogProbs {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Log-distribution over the token following position `t`.
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }
}

fn check_length(config: &ModelConfig, len: usize) -> Result<()> {
    if len > config.max_seq_len {
        return Err(Error::Length { len, max: config.max_seq_len });
    }
    Ok(())
}

/// Row `t` is the model's log-distribution of the token at `t + 1` given
/// `input[..=t]`.
pub fn next_token_logprobs<S: Scalar>(params: &ModelParams<S>, input: &TokenSequence) -> Result<LogProbs> {
    check_length(&params.config, input.len())?;
    if input.is_empty() {
        return Err(Error::Range { start: 0, end: 0, len: 0 });
    }
    let ids = input.ids();
    let lp = batch_logprobs(params, &ids, 1, ids.len());
    Ok(LogProbs {
        rows: ids.len(),
        cols: params.config.vocab_size,
        data: lp.into_iter().map(|x| x.to_f64() as f32).collect(),
    })
}

/// Sum of `ln p(token_t | tokens_<t)` for `t` in `span` (nats).
pub fn span_logprob<S: Scalar>(
    params: &ModelParams<S>,
    sequence: &TokenSequence,
    span: std::ops::Range<usize>,
) -> Result<f64> {
    let len = sequence.len();
    if len == 0 || span.start > span.end || span.end > len || (span.start < 1 && span.end > span.start) {
        return Err(Error::Range { start: span.start, end: span.end, len });
    }
    if span.is_empty() {
        return Ok(0.0);
    }
    check_length(&params.config, span.end)?;
    let ids = sequence.ids();
    // Tokens past the span cannot influence it under causal masking.
    let input = &ids[..span.end - 1];
    let lp = batch_logprobs(params, input, 1, input.len());
    let v = params.config.vocab_size;
    Ok(span.map(|t| lp[(t - 1) * v + ids[t]].to_f64()).sum())
}
