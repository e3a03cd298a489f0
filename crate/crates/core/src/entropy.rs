//! Directional conditional entropy: Monte-Carlo estimates from a trained
//! model, and the exact value for uniformly drawn multiplication pairs.

use serde::{Deserialize, Serialize};

use crate::datagen::{ArithmeticInstance, Segment};
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::ModelParams;
use crate::sample::{sample_streams, SampleOptions};
use crate::scoring::generation_task;
use crate::vocab::{Direction, TokenSequence};

/// Largest `d` the exact oracle accepts (10^10 pairs).
pub const MAX_ORACLE_DIGITS: usize = 5;

const CHUNK: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Mean rollout negative log-likelihood (nats).
    pub mean_nll: f64,
    pub per_prompt: Vec<f64>,
    pub rollout_len: usize,
    pub rollouts_per_prompt: usize,
    pub direction: Direction,
}

impl EntropyEstimate {
    /// Standard error of `mean_nll` across prompts.
    pub fn std_error(&self) -> f64 {
        let n = self.per_prompt.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let var = self.per_prompt.iter().map(|x| (x - self.mean_nll).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub rollout_len: usize,
    pub rollouts_per_prompt: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { rollout_len: 10, rollouts_per_prompt: 1, temperature: 1.0, seed: 0 }
    }
}

/// Samples `rollouts_per_prompt` continuations of exactly `rollout_len`
/// tokens per prompt with EOS masked out, and averages their negative
/// log-likelihood under the model's unmasked distribution.
pub fn mc_conditional_entropy<S: Scalar>(
    params: &ModelParams<S>,
    direction: Direction,
    prompts: &[TokenSequence],
    rc: &RolloutConfig,
) -> Result<EntropyEstimate> {
    if rc.rollout_len == 0 || rc.rollouts_per_prompt == 0 {
        return Err(Error::Argument("rollout_len and rollouts_per_prompt must be positive".into()));
    }
    if prompts.is_empty() {
        return Err(Error::Argument("no prompts".into()));
    }
    let r = rc.rollouts_per_prompt;
    let expanded: Vec<TokenSequence> = prompts.iter().flat_map(|p| std::iter::repeat_n(p.clone(), r)).collect();
    let streams: Vec<u64> = (0..expanded.len() as u64).collect();
    let opts = SampleOptions { length: rc.rollout_len, temperature: rc.temperature, suppress_eos: true, seed: rc.seed };
    let rolls = sample_streams(params, &expanded, &opts, &streams)?;
    let per_prompt: Vec<f64> =
        rolls.chunks(r).map(|c| c.iter().map(|x| x.nll.max(0.0)).sum::<f64>() / r as f64).collect();
    let mean_nll = per_prompt.iter().sum::<f64>() / per_prompt.len() as f64;
    Ok(EntropyEstimate { mean_nll, per_prompt, rollout_len: rc.rollout_len, rollouts_per_prompt: r, direction })
}

/// Prompts that end right before `target` in `direction`'s reading order,
/// e.g. `BOS m × n =` for an L2R product, or `BOS rev(p) =` for an R2L
/// factor pair.
pub fn entropy_prompts(
    instances: &[ArithmeticInstance],
    direction: Direction,
    target: Segment,
) -> Result<Vec<TokenSequence>> {
    instances.iter().map(|i| generation_task(i, direction, target).map(|(p, _)| p)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntropyTarget {
    /// `H(P | M, N)`
    Product,
    /// `H(M, N | P)`
    FactorPair,
    /// `H(M | P, N)`, equivalently `H(N | P, M)`: nonzero only through the
    /// ambiguity of `0 = m · 0`.
    SingleFactor,
}

/// Calls `f(p, c_p)` for every product `p` with `c_p > 0` pairs
/// `(m, n) ∈ [0, 10^d)²` such that `m·n = p`, in increasing `p`.
///
/// Counts are accumulated over fixed-size windows of `p` with 32-bit
/// counters, so memory stays bounded regardless of `d`.
pub fn product_multiplicities(d: usize, mut f: impl FnMut(u64, u32)) -> Result<()> {
    if d == 0 {
        return Err(Error::Argument("d must be positive".into()));
    }
    if d > MAX_ORACLE_DIGITS {
        return Err(Error::Capacity(format!(
            "exact enumeration supports d <= {MAX_ORACLE_DIGITS}; d = {d} means 10^{} pairs",
            2 * d
        )));
    }
    let base = 10u64.pow(d as u32);
    f(0, (2 * base - 1) as u32);
    let max_p = (base - 1) * (base - 1);
    let mut counts = vec![0u32; CHUNK.min(max_p) as usize];
    let mut lo = 1;
    while lo <= max_p {
        let hi = (lo + CHUNK).min(max_p + 1);
        counts[..(hi - lo) as usize].fill(0);
        for m in 1..base {
            let n_start = lo.div_ceil(m).max(1);
            let n_end = hi.div_ceil(m).min(base);
            let mut p = m * n_start;
            for _ in n_start..n_end {
                counts[(p - lo) as usize] += 1;
                p += m;
            }
        }
        for (i, &c) in counts[..(hi - lo) as usize].iter().enumerate() {
            if c > 0 {
                f(lo + i as u64, c);
            }
        }
        lo = hi;
    }
    Ok(())
}

/// Exact conditional entropy (nats) when `(m, n)` is uniform over
/// `[0, 10^d)²`: zero for the product, `Σ_p (c_p / 10^{2d}) ln c_p` for the
/// factor pair, and `10^{-d} · d ln 10` for one factor given the other.
pub fn theoretical_mult_entropy(d: usize, target: EntropyTarget) -> Result<f64> {
    if d == 0 {
        return Err(Error::Argument("d must be positive".into()));
    }
    match target {
        EntropyTarget::Product => Ok(0.0),
        EntropyTarget::SingleFactor => Ok(d as f64 * std::f64::consts::LN_10 / 10f64.powi(d as i32)),
        EntropyTarget::FactorPair => {
            let total = 10f64.powi(2 * d as i32);
            let mut acc = 0.0f64;
            product_multiplicities(d, |_, c| {
                if c > 1 {
                    let c = c as f64;
                    acc += c * c.ln();
                }
            })?;
            Ok(acc / total)
        }
    }
}
