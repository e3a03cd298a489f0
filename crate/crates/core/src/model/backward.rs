use crate::linalg::{matmul_at, matmul_bt, sigmoid, Scalar};
use crate::vocab::Token;

use super::forward::{forward, ForwardCache, LayerCache, Rope};
use super::layout::LayerOffsets;
use super::ModelParams;

/// Mean next-token cross-entropy of a batch and its gradient.
#[derive(Clone, Debug)]
pub struct BatchLoss<S> {
    /// Mean negative log-likelihood over scored positions (nats).
    pub mean_nll: f64,
    /// Number of scored target positions.
    pub scored: usize,
    /// Gradient, laid out like the parameter buffer.
    pub grads: Vec<S>,
}

/// Cross-entropy of `batch` sequences of `full_len` token ids (right-padded
/// with PAD). Inputs are positions `0..full_len-1`, targets `1..full_len`;
/// PAD targets are not scored. BOS only ever appears at position 0 and is
/// therefore never a target.
pub fn loss_and_grad<S: Scalar>(
    params: &ModelParams<S>,
    sequences: &[usize],
    batch: usize,
    full_len: usize,
) -> BatchLoss<S> {
    assert!(full_len >= 2, "need at least two tokens per sequence");
    assert_eq!(sequences.len(), batch * full_len);
    let t = full_len - 1;
    let mut inputs = Vec::with_capacity(batch * t);
    let mut targets = Vec::with_capacity(batch * t);
    for seq in sequences.chunks_exact(full_len) {
        inputs.extend_from_slice(&seq[..t]);
        targets.extend_from_slice(&seq[1..]);
    }
    // PAD inputs never influence scored positions under causal masking, so
    // they are fed through as ordinary ids.
    let (logprobs, cache) = forward(params, &inputs, batch, t, true);
    let cache = cache.expect("cache requested");
    let v = params.config.vocab_size;
    let pad = Token::PAD.id();
    let scored = targets.iter().filter(|&&y| y != pad).count();
    let mut dlogits = vec![S::zero(); batch * t * v];
    let mut nll = 0.0f64;
    if scored > 0 {
        let inv = S::from_f64(1.0 / scored as f64);
        for (row, &y) in targets.iter().enumerate() {
            if y == pad {
                continue;
            }
            let lp = &logprobs[row * v..(row + 1) * v];
            nll -= lp[y].to_f64();
            let g = &mut dlogits[row * v..(row + 1) * v];
            for (gi, &l) in g.iter_mut().zip(lp) {
                *gi = l.exp() * inv;
            }
            g[y] = g[y] - inv;
        }
        nll /= scored as f64;
    }
    let grads = backward(params, &cache, &dlogits);
    BatchLoss { mean_nll: nll, scored, grads }
}

/// Backward for RMS normalization. Accumulates into `dx` and `dgain`.
fn rms_norm_backward<S: Scalar>(
    x: &[S],
    inv_rms: &[S],
    gain: &[S],
    dy: &[S],
    dx: &mut [S],
    dgain: &mut [S],
    dim: usize,
) {
    let inv_dim = S::from_f64(1.0 / dim as f64);
    for (r, ((xr, dyr), dxr)) in x.chunks_exact(dim).zip(dy.chunks_exact(dim)).zip(dx.chunks_exact_mut(dim)).enumerate()
    {
        let inv = inv_rms[r];
        let mut dot = S::zero();
        for j in 0..dim {
            dgain[j] = dgain[j] + dyr[j] * xr[j] * inv;
            dot = dot + dyr[j] * gain[j] * xr[j];
        }
        let coef = dot * inv * inv * inv * inv_dim;
        for j in 0..dim {
            dxr[j] = dxr[j] + dyr[j] * gain[j] * inv - xr[j] * coef;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<S: Scalar>(
    c: &LayerCache<S>,
    datt: &[S],
    dq: &mut [S],
    dk: &mut [S],
    dv: &mut [S],
    batch: usize,
    t: usize,
    heads: usize,
    head_dim: usize,
) {
    let dim = heads * head_dim;
    let scale = S::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut dp = vec![S::zero(); t];
    for b in 0..batch {
        for h in 0..heads {
            let col = h * head_dim;
            let pbase = (b * heads + h) * t * t;
            for i in 0..t {
                let prow = &c.probs[pbase + i * t..pbase + i * t + i + 1];
                let doi = &datt[(b * t + i) * dim + col..][..head_dim];
                // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
                let mut weighted = S::zero();
                for j in 0..=i {
                    let vrow = (b * t + j) * dim + col;
                    let vj = &c.v[vrow..vrow + head_dim];
                    dp[j] = doi.iter().zip(vj).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
                    weighted = weighted + dp[j] * prow[j];
                    let p = prow[j];
                    for (dvv, &g) in dv[vrow..vrow + head_dim].iter_mut().zip(doi) {
                        *dvv = *dvv + p * g;
                    }
                }
                let qrow = (b * t + i) * dim + col;
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    if ds == S::zero() {
                        continue;
                    }
                    let krow = (b * t + j) * dim + col;
                    for e in 0..head_dim {
                        dq[qrow + e] = dq[qrow + e] + ds * c.k[krow + e];
                        dk[krow + e] = dk[krow + e] + ds * c.q[qrow + e];
                    }
                }
            }
        }
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<S: Scalar>(
    w: &[S],
    grads: &mut [S],
    off: &LayerOffsets,
    c: &LayerCache<S>,
    dx: &mut [S],
    rope: &Rope<S>,
    dims: (usize, usize, usize, usize, usize),
) {
    let (batch, t, d, f, heads) = dims;
    let n = batch * t;
    let hd = d / heads;

    // Feed-forward branch: x_out = x_mid + (silu(gate) * up) · W_down
    matmul_at(&c.act, dx, &mut grads[off.w_down..off.w_down + f * d], f, n, d, true);
    let mut dact = vec![S::zero(); n * f];
    matmul_bt(dx, &w[off.w_down..off.w_down + f * d], &mut dact, n, d, f, false);
    let mut dgate = vec![S::zero(); n * f];
    let mut dup = vec![S::zero(); n * f];
    for i in 0..n * f {
        let g = c.gate[i];
        let sg = sigmoid(g);
        let silu = g * sg;
        dup[i] = dact[i] * silu;
        dgate[i] = dact[i] * c.up[i] * sg * (S::one() + g * (S::one() - sg));
    }
    matmul_at(&c.h2, &dgate, &mut grads[off.w_gate..off.w_gate + d * f], d, n, f, true);
    matmul_at(&c.h2, &dup, &mut grads[off.w_up..off.w_up + d * f], d, n, f, true);
    let mut dh2 = vec![S::zero(); n * d];
    matmul_bt(&dgate, &w[off.w_gate..off.w_gate + d * f], &mut dh2, n, f, d, false);
    matmul_bt(&dup, &w[off.w_up..off.w_up + d * f], &mut dh2, n, f, d, true);
    // dx currently holds d(x_out), which is also the residual part of d(x_mid).
    {
        let (gain, dgain) = (&w[off.mlp_norm..off.mlp_norm + d], &mut grads[off.mlp_norm..off.mlp_norm + d]);
        rms_norm_backward(&c.x_mid, &c.r2, gain, &dh2, dx, dgain, d);
    }

    // Attention branch: x_mid = x_in + att · W_o
    matmul_at(&c.att, dx, &mut grads[off.wo..off.wo + d * d], d, n, d, true);
    let mut datt = vec![S::zero(); n * d];
    matmul_bt(dx, &w[off.wo..off.wo + d * d], &mut datt, n, d, d, false);
    let mut dq = vec![S::zero(); n * d];
    let mut dk = vec![S::zero(); n * d];
    let mut dv = vec![S::zero(); n * d];
    attention_backward(c, &datt, &mut dq, &mut dk, &mut dv, batch, t, heads, hd);
    rope.apply(&mut dq, t, d, hd, true);
    rope.apply(&mut dk, t, d, hd, true);
    let mut dh1 = vec![S::zero(); n * d];
    for (g, woff) in [(&dq, off.wq), (&dk, off.wk), (&dv, off.wv)] {
        matmul_at(&c.h1, g, &mut grads[woff..woff + d * d], d, n, d, true);
        matmul_bt(g, &w[woff..woff + d * d], &mut dh1, n, d, d, true);
    }
    let (gain, dgain) = (&w[off.attn_norm..off.attn_norm + d], &mut grads[off.attn_norm..off.attn_norm + d]);
    rms_norm_backward(&c.x_in, &c.r1, gain, &dh1, dx, dgain, d);
}

/// Gradient of `Σ dlogits ∘ logits` with respect to every parameter.
pub(crate) fn backward<S: Scalar>(params: &ModelParams<S>, cache: &ForwardCache<S>, dlogits: &[S]) -> Vec<S> {
    let cfg = &params.config;
    let (d, v, f) = (cfg.embed_dim, cfg.vocab_size, cfg.mlp_dim);
    let (batch, t) = (cache.batch, cache.seq_len);
    let n = batch * t;
    let w = &params.data;
    let lay = &params.layout;
    let mut grads = vec![S::zero(); w.len()];

    matmul_at(&cache.h_final, dlogits, &mut grads[lay.lm_head..lay.lm_head + d * v], d, n, v, true);
    let mut dh = vec![S::zero(); n * d];
    matmul_bt(dlogits, &w[lay.lm_head..lay.lm_head + d * v], &mut dh, n, v, d, false);
    let mut dx = vec![S::zero(); n * d];
    {
        let (gain, dgain) = (&w[lay.final_norm..lay.final_norm + d], &mut grads[lay.final_norm..lay.final_norm + d]);
        rms_norm_backward(&cache.x_final, &cache.r_final, gain, &dh, &mut dx, dgain, d);
    }

    let rope = Rope::new(t, cfg.head_dim(), cfg.rope_base);
    let dims = (batch, t, d, f, cfg.num_heads);
    for (off, c) in lay.layers.iter().zip(&cache.layers).rev() {
        layer_backward(w, &mut grads, off, c, &mut dx, &rope, dims);
    }

    for (row, &tok) in cache.tokens.iter().enumerate() {
        let g = &mut grads[lay.tok_emb + tok * d..lay.tok_emb + (tok + 1) * d];
        add_into(g, &dx[row * d..(row + 1) * d]);
    }
    grads
}
