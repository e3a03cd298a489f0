//! Ancestral sampling.
//!
//! There is no key/value cache: every step reruns the prefix. Sequences are
//! short, and prefixes of equal length are advanced together as a batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::{last_logprobs, ModelParams};
use crate::vocab::{Token, TokenSequence};

const MAX_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub length: usize,
    pub temperature: f64,
    pub suppress_eos: bool,
    pub seed: u64,
}

impl SampleOptions {
    pub fn new(length: usize, seed: u64) -> Self {
        SampleOptions { length, temperature: 1.0, suppress_eos: false, seed }
    }
}

/// Tokens appended to one prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<Token>,
    /// `-Σ ln p(token)` of the appended tokens under the model's own
    /// (unmasked, temperature 1) distribution.
    pub nll: f64,
}

impl Rollout {
    pub fn ended_with_eos(&self) -> bool {
        self.tokens.last() == Some(&Token::EOS)
    }
}

fn validate<S: Scalar>(params: &ModelParams<S>, prefix_len: usize, opts: &SampleOptions) -> Result<()> {
    if opts.length == 0 {
        return Err(Error::Argument("sample length must be positive".into()));
    }
    if !(opts.temperature.is_finite() && opts.temperature > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {}", opts.temperature)));
    }
    if prefix_len == 0 {
        return Err(Error::Argument("prefix must not be empty".into()));
    }
    let max = params.config().max_seq_len;
    if prefix_len + opts.length > max {
        return Err(Error::Length { len: prefix_len + opts.length, max });
    }
    Ok(())
}

fn draw(lp: &[f64], opts: &SampleOptions, rng: &mut ChaCha8Rng) -> usize {
    let eos = Token::EOS.id();
    let inv_t = 1.0 / opts.temperature;
    let mut weights: Vec<f64> = lp.iter().map(|&l| l * inv_t).collect();
    if opts.suppress_eos {
        weights[eos] = f64::NEG_INFINITY;
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in &mut weights {
        *w = (*w - max).exp();
        total += *w;
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Continues every prefix independently. Prefix `i` uses its own random
/// stream derived from `(opts.seed, stream_offset + i)`, so results do not
/// depend on how prefixes are batched.
///
/// Without `suppress_eos`, a rollout stops after emitting EOS and may be
/// shorter than `opts.length`.
pub fn sample_many<S: Scalar>(
    params: &ModelParams<S>,
    prefixes: &[TokenSequence],
    opts: &SampleOptions,
    stream_offset: u64,
) -> Result<Vec<Rollout>> {
    let streams: Vec<u64> = (0..prefixes.len() as u64).map(|i| stream_offset + i).collect();
    sample_streams(params, prefixes, opts, &streams)
}

/// Like [`sample_many`] with an explicit random stream per prefix.
pub fn sample_streams<S: Scalar>(
    params: &ModelParams<S>,
    prefixes: &[TokenSequence],
    opts: &SampleOptions,
    streams: &[u64],
) -> Result<Vec<Rollout>> {
    if streams.len() != prefixes.len() {
        return Err(Error::Argument(format!("{} streams for {} prefixes", streams.len(), prefixes.len())));
    }
    for p in prefixes {
        validate(params, p.len(), opts)?;
    }
    let v = params.config().vocab_size;
    let mut out: Vec<Rollout> = vec![Rollout { tokens: Vec::new(), nll: 0.0 }; prefixes.len()];
    let mut rngs: Vec<ChaCha8Rng> = streams
        .iter()
        .map(|&stream| {
            let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
            r.set_stream(stream);
            r
        })
        .collect();

    let mut by_len: Vec<usize> = (0..prefixes.len()).collect();
    by_len.sort_by_key(|&i| prefixes[i].len());
    for group in by_len.chunk_by(|&a, &b| prefixes[a].len() == prefixes[b].len()) {
        for chunk in group.chunks(MAX_BATCH) {
            let mut active: Vec<usize> = chunk.to_vec();
            let mut seqs: Vec<Vec<usize>> = active.iter().map(|&i| prefixes[i].ids()).collect();
            for _ in 0..opts.length {
                if active.is_empty() {
                    break;
                }
                let len = seqs[0].len();
                let flat: Vec<usize> = seqs.iter().flatten().copied().collect();
                let lp = last_logprobs(params, &flat, active.len(), len);
                let mut next_active = Vec::with_capacity(active.len());
                let mut next_seqs = Vec::with_capacity(active.len());
                for (k, &i) in active.iter().enumerate() {
                    let row: Vec<f64> = lp[k * v..(k + 1) * v].iter().map(|&x| Scalar::to_f64(x)).collect();
                    let tok = draw(&row, opts, &mut rngs[i]);
                    out[i].nll -= row[tok];
                    out[i].tokens.push(Token::new(tok)?);
                    if tok != Token::EOS.id() {
                        let mut s = std::mem::take(&mut seqs[k]);
                        s.push(tok);
                        next_active.push(i);
                        next_seqs.push(s);
                    }
                }
                active = next_active;
                seqs = next_seqs;
            }
        }
    }
    Ok(out)
}

/// Appends up to `length` sampled tokens to `prefix`.
pub fn sample<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &TokenSequence,
    length: usize,
    temperature: f64,
    suppress_eos: bool,
    seed: u64,
) -> Result<TokenSequence> {
    let opts = SampleOptions { length, temperature, suppress_eos, seed };
    let roll = sample_many(params, std::slice::from_ref(prefix), &opts, 0)?.pop().expect("one prefix");
    let mut seq = prefix.clone();
    for t in roll.tokens {
        seq.push(t);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference::{constant_model, uniform_model};
    use crate::model::{init_model, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig { num_layers: 1, num_heads: 2, embed_dim: 16, mlp_dim: 32, ..ModelConfig::default() }
    }

    #[test]
    fn suppressed_eos_gives_exact_length() {
        let p = constant_model(&cfg(), Token::EOS).unwrap();
        let prefix = TokenSequence::parse("^12×").unwrap();
        let out = sample(&p, &prefix, 10, 1.0, true, 3).unwrap();
        assert_eq!(out.len(), prefix.len() + 10);
        assert_eq!(&out.tokens()[..prefix.len()], prefix.tokens());
        assert!(out.tokens()[prefix.len()..].iter().all(|t| *t != Token::EOS));
    }

    #[test]
    fn eos_stops_generation() {
        let p = constant_model(&cfg(), Token::EOS).unwrap();
        let prefix = TokenSequence::parse("^1").unwrap();
        let out = sample(&p, &prefix, 5, 1.0, false, 0).unwrap();
        assert_eq!(out, TokenSequence::parse("^1$").unwrap());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = init_model(&cfg(), 1).unwrap();
        let prefix = TokenSequence::parse("^3").unwrap();
        let a = sample(&p, &prefix, 8, 1.0, true, 11).unwrap();
        let b = sample(&p, &prefix, 8, 1.0, true, 11).unwrap();
        assert_eq!(a, b);
        let outs: Vec<_> = (0..8).map(|s| sample(&p, &prefix, 8, 1.0, true, s).unwrap()).collect();
        assert!(outs.iter().any(|o| *o != outs[0]));
    }

    #[test]
    fn batching_does_not_change_streams() {
        let p = init_model(&cfg(), 2).unwrap();
        let prefixes: Vec<TokenSequence> =
            ["^1", "^22", "^3", "^444", "^5"].iter().map(|s| TokenSequence::parse(s).unwrap()).collect();
        let opts = SampleOptions { suppress_eos: true, ..SampleOptions::new(6, 9) };
        let all = sample_many(&p, &prefixes, &opts, 0).unwrap();
        for (i, pre) in prefixes.iter().enumerate() {
            let one = sample_many(&p, std::slice::from_ref(pre), &opts, i as u64).unwrap();
            assert_eq!(one[0], all[i]);
        }
    }

    #[test]
    fn uniform_rollout_nll() {
        let p = uniform_model(&cfg()).unwrap();
        let opts = SampleOptions { suppress_eos: true, ..SampleOptions::new(4, 0) };
        let r = sample_many(&p, &[TokenSequence::parse("^").unwrap()], &opts, 0).unwrap();
        assert!((r[0].nll - 4.0 * 15f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn argument_errors() {
        let p = uniform_model(&cfg()).unwrap();
        let prefix = TokenSequence::parse("^1").unwrap();
        assert!(matches!(sample(&p, &prefix, 0, 1.0, false, 0), Err(Error::Argument(_))));
        assert!(matches!(sample(&p, &prefix, 31, 1.0, false, 0), Err(Error::Length { .. })));
        assert!(sample(&p, &prefix, 30, 1.0, true, 0).is_ok());
        assert!(matches!(sample(&p, &prefix, 3, 0.0, false, 0), Err(Error::Argument(_))));
    }
}
