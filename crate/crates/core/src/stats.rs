//! Bootstrap accuracy spreads and paired t-tests over replicate means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicate_means: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the replicate means.
    pub std: f64,
    pub replicates: usize,
    pub fraction: f64,
    /// Items drawn per replicate, `round(fraction * n)`.
    pub draws: usize,
    pub seed: u64,
}

/// Resamples `correctness` with replacement `replicates` times, each time
/// drawing `round(fraction * n)` items, and records each resample's mean.
pub fn bootstrap_accuracy(
    correctness: &[bool],
    replicates: usize,
    fraction: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if correctness.is_empty() {
        return Err(Error::Argument("empty correctness vector".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if replicates == 0 {
        return Err(Error::Argument("need at least one replicate".into()));
    }
    let n = correctness.len();
    let draws = ((fraction * n as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replicate_means: Vec<f64> = (0..replicates)
        .map(|_| (0..draws).filter(|_| correctness[rng.gen_range(0..n)]).count() as f64 / draws as f64)
        .collect();
    let mean = replicate_means.iter().sum::<f64>() / replicates as f64;
    let std = (replicate_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / replicates as f64).sqrt();
    Ok(BootstrapResult { replicate_means, mean, std, replicates, fraction, draws, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Two-sided p-value of Student's t with `df` degrees of freedom:
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired t-test on `a - b`. A zero spread in the differences gives
/// `t = 0, p = 1` when the mean difference is zero and `t = ±∞, p = 0`
/// otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Argument("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    // Differences that agree to rounding error count as constant.
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if sd <= scale * 1e-12 {
        if mean.abs() <= scale * 1e-12 {
            return Ok(TTest { t: 0.0, p: 1.0, df });
        }
        return Ok(TTest { t: mean.signum() * f64::INFINITY, p: 0.0, df });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest { t, p: student_t_two_sided(t, df as f64), df })
}
