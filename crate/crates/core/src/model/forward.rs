use crate::linalg::{log_softmax_rows, matmul, sigmoid, Scalar};

use super::layout::LayerOffsets;
use super::{ModelParams, NORM_EPS};

/// Activations of one block kept for the backward pass.
#[derive(Default)]
pub(crate) struct LayerCache<S> {
    pub x_in: Vec<S>,
    pub r1: Vec<S>,
    pub h1: Vec<S>,
    pub q: Vec<S>,
    pub k: Vec<S>,
    pub v: Vec<S>,
    pub probs: Vec<S>,
    pub att: Vec<S>,
    pub x_mid: Vec<S>,
    pub r2: Vec<S>,
    pub h2: Vec<S>,
    pub gate: Vec<S>,
    pub up: Vec<S>,
    pub act: Vec<S>,
}

pub(crate) struct ForwardCache<S> {
    pub batch: usize,
    pub seq_len: usize,
    pub tokens: Vec<usize>,
    pub layers: Vec<LayerCache<S>>,
    pub x_final: Vec<S>,
    pub r_final: Vec<S>,
    pub h_final: Vec<S>,
}

/// Rotary angle tables, `[seq_len, head_dim / 2]`.
pub(crate) struct Rope<S> {
    pub cos: Vec<S>,
    pub sin: Vec<S>,
    pub half: usize,
}

impl<S: Scalar> Rope<S> {
    pub fn new(seq_len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq_len * half);
        let mut sin = Vec::with_capacity(seq_len * half);
        for pos in 0..seq_len {
            for i in 0..half {
                let freq = base.powf(-(2.0 * i as f64) / head_dim as f64);
                let angle = pos as f64 * freq;
                cos.push(S::from_f64(angle.cos()));
                sin.push(S::from_f64(angle.sin()));
            }
        }
        Rope { cos, sin, half }
    }

    /// Rotates each adjacent pair `(2i, 2i+1)` of every head; `inverse`
    /// applies the transpose rotation (used for gradients).
    pub fn apply(&self, x: &mut [S], seq_len: usize, dim: usize, head_dim: usize, inverse: bool) {
        for (row, xr) in x.chunks_exact_mut(dim).enumerate() {
            let pos = row % seq_len;
            let cos = &self.cos[pos * self.half..(pos + 1) * self.half];
            let sin = &self.sin[pos * self.half..(pos + 1) * self.half];
            for head in xr.chunks_exact_mut(head_dim) {
                for i in 0..self.half {
                    let (a, b) = (head[2 * i], head[2 * i + 1]);
                    let (c, s) = (cos[i], if inverse { -sin[i] } else { sin[i] });
                    head[2 * i] = a * c - b * s;
                    head[2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
}

/// `out = x * rsqrt(mean(x^2) + eps) * gain`, storing the reciprocal RMS per row.
pub(crate) fn rms_norm<S: Scalar>(x: &[S], gain: &[S], out: &mut Vec<S>, inv_rms: &mut Vec<S>, dim: usize) {
    let rows = x.len() / dim;
    out.resize(x.len(), S::zero());
    inv_rms.resize(rows, S::zero());
    let eps = S::from_f64(NORM_EPS);
    let inv_dim = S::from_f64(1.0 / dim as f64);
    for (r, (xr, yr)) in x.chunks_exact(dim).zip(out.chunks_exact_mut(dim)).enumerate() {
        let ms = xr.iter().fold(S::zero(), |acc, &v| acc + v * v) * inv_dim;
        let inv = S::one() / (ms + eps).sqrt();
        inv_rms[r] = inv;
        for ((y, &v), &g) in yr.iter_mut().zip(xr).zip(gain) {
            *y = v * inv * g;
        }
    }
}

/// Causal softmax attention over `heads` heads for a batch of equal-length
/// sequences. Probabilities are stored `[batch, heads, t, t]`, zero above
/// the diagonal.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    probs: &mut Vec<S>,
    out: &mut Vec<S>,
    batch: usize,
    seq_len: usize,
    heads: usize,
    head_dim: usize,
) {
    let dim = heads * head_dim;
    let t = seq_len;
    probs.clear();
    probs.resize(batch * heads * t * t, S::zero());
    out.clear();
    out.resize(batch * t * dim, S::zero());
    let scale = S::from_f64(1.0 / (head_dim as f64).sqrt());
    for b in 0..batch {
        for h in 0..heads {
            let col = h * head_dim;
            let pbase = (b * heads + h) * t * t;
            for i in 0..t {
                let qi = &q[(b * t + i) * dim + col..][..head_dim];
                let prow = &mut probs[pbase + i * t..pbase + i * t + t];
                let mut max = S::neg_infinity();
                for (j, p) in prow.iter_mut().enumerate().take(i + 1) {
                    let kj = &k[(b * t + j) * dim + col..][..head_dim];
                    let s = qi.iter().zip(kj).fold(S::zero(), |acc, (&x, &y)| acc + x * y) * scale;
                    *p = s;
                    max = max.max(s);
                }
                let mut sum = S::zero();
                for p in prow.iter_mut().take(i + 1) {
                    *p = (*p - max).exp();
                    sum = sum + *p;
                }
                let inv = S::one() / sum;
                let orow = &mut out[(b * t + i) * dim + col..][..head_dim];
                for (j, p) in prow.iter_mut().enumerate().take(i + 1) {
                    *p = *p * inv;
                    let vj = &v[(b * t + j) * dim + col..][..head_dim];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o = *o + *p * vv;
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

fn layer_forward<S: Scalar>(
    w: &[S],
    off: &LayerOffsets,
    x: &mut Vec<S>,
    c: &mut LayerCache<S>,
    rope: &Rope<S>,
    dims: (usize, usize, usize, usize, usize),
) {
    let (batch, t, d, f, heads) = dims;
    let n = batch * t;
    let hd = d / heads;
    c.x_in.clear();
    c.x_in.extend_from_slice(x);

    rms_norm(&c.x_in, &w[off.attn_norm..off.attn_norm + d], &mut c.h1, &mut c.r1, d);
    for (buf, woff) in [(&mut c.q, off.wq), (&mut c.k, off.wk), (&mut c.v, off.wv)] {
        buf.resize(n * d, S::zero());
        matmul(&c.h1, &w[woff..woff + d * d], buf, n, d, d, false);
    }
    rope.apply(&mut c.q, t, d, hd, false);
    rope.apply(&mut c.k, t, d, hd, false);
    attention(&c.q, &c.k, &c.v, &mut c.probs, &mut c.att, batch, t, heads, hd);

    c.x_mid.clear();
    c.x_mid.extend_from_slice(&c.x_in);
    matmul(&c.att, &w[off.wo..off.wo + d * d], &mut c.x_mid, n, d, d, true);

    rms_norm(&c.x_mid, &w[off.mlp_norm..off.mlp_norm + d], &mut c.h2, &mut c.r2, d);
    c.gate.resize(n * f, S::zero());
    c.up.resize(n * f, S::zero());
    matmul(&c.h2, &w[off.w_gate..off.w_gate + d * f], &mut c.gate, n, d, f, false);
    matmul(&c.h2, &w[off.w_up..off.w_up + d * f], &mut c.up, n, d, f, false);
    c.act.resize(n * f, S::zero());
    for ((a, &g), &u) in c.act.iter_mut().zip(&c.gate).zip(&c.up) {
        *a = silu(g) * u;
    }

    x.clear();
    x.extend_from_slice(&c.x_mid);
    matmul(&c.act, &w[off.w_down..off.w_down + f * d], x, n, f, d, true);
}

/// Runs the network on `batch` sequences of `seq_len` token ids laid out
/// row-major. Returns log-probabilities `[batch * seq_len, vocab]`, plus the
/// activation cache when `keep` is set.
pub(crate) fn forward<S: Scalar>(
    params: &ModelParams<S>,
    tokens: &[usize],
    batch: usize,
    seq_len: usize,
    keep: bool,
) -> (Vec<S>, Option<ForwardCache<S>>) {
    let (x_final, layers) = trunk(params, tokens, batch, seq_len, keep);
    let cfg = &params.config;
    let (d, v) = (cfg.embed_dim, cfg.vocab_size);
    let w = &params.data;
    let lay = &params.layout;
    let mut h_final = Vec::new();
    let mut r_final = Vec::new();
    rms_norm(&x_final, &w[lay.final_norm..lay.final_norm + d], &mut h_final, &mut r_final, d);
    let n = batch * seq_len;
    let mut logits = vec![S::zero(); n * v];
    matmul(&h_final, &w[lay.lm_head..lay.lm_head + d * v], &mut logits, n, d, v, false);
    log_softmax_rows(&mut logits, v);
    let cache = layers.map(|layers| ForwardCache {
        batch,
        seq_len,
        tokens: tokens.to_vec(),
        layers,
        x_final,
        r_final,
        h_final,
    });
    (logits, cache)
}

fn trunk<S: Scalar>(
    params: &ModelParams<S>,
    tokens: &[usize],
    batch: usize,
    seq_len: usize,
    keep: bool,
) -> (Vec<S>, Option<Vec<LayerCache<S>>>) {
    let cfg = &params.config;
    assert_eq!(tokens.len(), batch * seq_len, "token buffer does not match batch shape");
    assert!(seq_len <= cfg.max_seq_len, "sequence longer than max_seq_len");
    let d = cfg.embed_dim;
    let w = &params.data;
    let lay = &params.layout;

    let mut x = Vec::with_capacity(tokens.len() * d);
    for &tok in tokens {
        assert!(tok < cfg.vocab_size, "token id {tok} outside vocabulary");
        x.extend_from_slice(&w[lay.tok_emb + tok * d..lay.tok_emb + (tok + 1) * d]);
    }
    let rope = Rope::new(seq_len, cfg.head_dim(), cfg.rope_base);
    let dims = (batch, seq_len, d, cfg.mlp_dim, cfg.num_heads);
    if keep {
        let mut caches = Vec::with_capacity(lay.layers.len());
        for off in &lay.layers {
            let mut c = LayerCache::default();
            layer_forward(w, off, &mut x, &mut c, &rope, dims);
            caches.push(c);
        }
        (x, Some(caches))
    } else {
        let mut scratch = LayerCache::default();
        for off in &lay.layers {
            layer_forward(w, off, &mut x, &mut scratch, &rope, dims);
        }
        (x, None)
    }
}

/// Log-probabilities `[batch * seq_len, vocab]` for equal-length sequences.
pub fn batch_logprobs<S: Scalar>(params: &ModelParams<S>, tokens: &[usize], batch: usize, seq_len: usize) -> Vec<S> {
    forward(params, tokens, batch, seq_len, false).0
}

/// Log-distribution of the next token after the final position of each
/// sequence, `[batch, vocab]`.
pub fn last_logprobs<S: Scalar>(params: &ModelParams<S>, tokens: &[usize], batch: usize, seq_len: usize) -> Vec<S> {
    let (x, _) = trunk(params, tokens, batch, seq_len, false);
    let cfg = &params.config;
    let (d, v) = (cfg.embed_dim, cfg.vocab_size);
    let last: Vec<S> = x.chunks_exact(seq_len * d).flat_map(|seq| seq[(seq_len - 1) * d..].iter().copied()).collect();
    let w = &params.data;
    let lay = &params.layout;
    let mut h = Vec::new();
    let mut r = Vec::new();
    rms_norm(&last, &w[lay.final_norm..lay.final_norm + d], &mut h, &mut r, d);
    let mut logits = vec![S::zero(); batch * v];
    matmul(&h, &w[lay.lm_head..lay.lm_head + d * v], &mut logits, batch, d, v, false);
    log_softmax_rows(&mut logits, v);
    logits
}
