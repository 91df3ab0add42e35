//! Decoder-only self-attention model with hand-written backpropagation.
//!
//! Pre-LayerNorm blocks (causal multi-head attention, GELU feed-forward),
//! learned absolute positions and an output layer tied to the token
//! embeddings. All parameters live in one flat buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, View};
use super::{LmError, Scalar};
use crate::tokenizer::TokenId;

const LN_EPS: f64 = 1e-5;
const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.99;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Maximum sequence length; also the training window length.
    pub context: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub init_std: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            context: 512,
            batch_size: 16,
            steps: 1000,
            learning_rate: 3e-3,
            warmup_steps: 100,
            grad_clip: 1.0,
            init_std: 0.02,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::Config(m.to_string()));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("model dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context < 2 {
            return bad("context must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &TransformerConfig, vocab: usize) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(vocab * d);
        let pos = take(cfg.context * d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Layout {
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<T: Scalar> {
    cfg: TransformerConfig,
    vocab_size: usize,
    params: Vec<T>,
    layout: Layout,
}

struct LayerCache<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    h2: Vec<T>,
    u: Vec<T>,
    t: Vec<T>,
    g: Vec<T>,
}

struct Cache<T> {
    batch: usize,
    len: usize,
    layers: Vec<LayerCache<T>>,
    xhatf: Vec<T>,
    rstdf: Vec<T>,
    hf: Vec<T>,
    logits: Vec<T>,
}

/// Incremental decoding state: key/value caches per layer.
#[derive(Debug, Clone)]
pub struct TransformerState<T> {
    tokens: Vec<TokenId>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU of `u` into `g`; `t` receives the tanh values
/// for the backward pass.
fn gelu<T: Scalar>(u: &[T], t: &mut [T], g: &mut [T]) {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    for (ti, &x) in t.iter_mut().zip(u) {
        *ti = c * (x + a * x * x * x);
    }
    T::tanh_in_place(t);
    for ((gi, &x), &ti) in g.iter_mut().zip(u).zip(t.iter()) {
        *gi = half * x * (T::one() + ti);
    }
}

/// Multiplies `du` by the GELU derivative at `u`, given its tanh values.
fn gelu_back<T: Scalar>(du: &mut [T], u: &[T], t: &[T]) {
    let (c, a3, half) = (T::of(GELU_C), T::of(3.0 * GELU_A), T::of(0.5));
    for ((d, &x), &ti) in du.iter_mut().zip(u).zip(t) {
        let dinner = c * (T::one() + a3 * x * x);
        *d = *d * (half * (T::one() + ti) + half * x * (T::one() - ti * ti) * dinner);
    }
}

fn layer_norm<T: Scalar>(x: &[T], g: &[T], b: &[T], y: &mut [T], xhat: &mut [T], rstd: &mut [T]) {
    let d = g.len();
    let inv_d = T::one() / T::of(d as f64);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            y[r * d + c] = xh * g[c] + b[c];
        }
    }
}

/// Accumulates the input gradient into `dx` and parameter gradients into
/// `dg` / `db`.
fn layer_norm_back<T: Scalar>(dy: &[T], xhat: &[T], rstd: &[T], g: &[T], dx: &mut [T], dg: &mut [T], db: &mut [T]) {
    let d = g.len();
    let inv_d = T::one() / T::of(d as f64);
    for r in 0..rstd.len() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_x = T::zero();
        for c in 0..d {
            let dxh = dyr[c] * g[c];
            mean_dxh = mean_dxh + dxh;
            mean_dxh_x = mean_dxh_x + dxh * xr[c];
            dg[c] = dg[c] + dyr[c] * xr[c];
            db[c] = db[c] + dyr[c];
        }
        mean_dxh = mean_dxh * inv_d;
        mean_dxh_x = mean_dxh_x * inv_d;
        for c in 0..d {
            let dxh = dyr[c] * g[c];
            dx[r * d + c] = dx[r * d + c] + rstd[r] * (dxh - mean_dxh - xr[c] * mean_dxh_x);
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    for row in y.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

fn sum_rows_into<T: Scalar>(dy: &[T], out: &mut [T]) {
    for row in dy.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = *o + *v;
        }
    }
}

/// In-place log-softmax of one row.
/// Normalizes in `f64` whatever `T` is.
pub(crate) fn log_softmax<T: Scalar>(row: &mut [T]) {
    let wide = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let max = wide(row.iter().copied().fold(T::neg_infinity(), T::max));
    let lse = max + row.iter().map(|&v| (wide(v) - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v = T::of(wide(*v) - lse);
    }
}

impl<T: Scalar> Transformer<T> {
    /// Randomly initialised model.
    pub fn new(cfg: TransformerConfig, vocab_size: usize) -> Result<Self, LmError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg, vocab_size);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| LmError::Config(e.to_string()))?;
        let residual_scale = 1.0 / (2.0 * cfg.n_layers as f64).sqrt();
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let mut fill = |off: usize, n: usize, scale: f64, params: &mut [T]| {
            for p in &mut params[off..off + n] {
                *p = T::of(normal.sample(&mut rng) * scale);
            }
        };
        fill(layout.tok, vocab_size * d, 1.0, &mut params);
        fill(layout.pos, cfg.context * d, 1.0, &mut params);
        for l in &layout.layers {
            fill(l.w_qkv, d * 3 * d, 1.0, &mut params);
            fill(l.w_o, d * d, residual_scale, &mut params);
            fill(l.w1, d * f, 1.0, &mut params);
            fill(l.w2, f * d, residual_scale, &mut params);
            for p in &mut params[l.ln1_g..l.ln1_g + d] {
                *p = T::one();
            }
            for p in &mut params[l.ln2_g..l.ln2_g + d] {
                *p = T::one();
            }
        }
        for p in &mut params[layout.lnf_g..layout.lnf_g + d] {
            *p = T::one();
        }
        Ok(Transformer {
            cfg,
            vocab_size,
            params,
            layout,
        })
    }

    pub fn from_params(cfg: TransformerConfig, vocab_size: usize, params: Vec<T>) -> Result<Self, LmError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg, vocab_size);
        if params.len() != layout.total {
            return Err(LmError::Config(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Transformer {
            cfg,
            vocab_size,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn p(&self, off: usize, n: usize) -> &[T] {
        &self.params[off..off + n]
    }

    /// Forward pass over `batch` sequences of `len` tokens laid out back to back.
    fn forward(&self, tokens: &[TokenId], batch: usize, len: usize) -> Cache<T> {
        let cfg = &self.cfg;
        let (d, f, h, v) = (cfg.d_model, cfg.d_ff, cfg.n_heads, self.vocab_size);
        let dh = d / h;
        let n = batch * len;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let w = &self.params;

        let mut x = vec![T::zero(); n * d];
        for (r, &tok) in tokens.iter().enumerate() {
            let pos = r % len;
            let e = self.p(self.layout.tok + tok as usize * d, d);
            let pe = self.p(self.layout.pos + pos * d, d);
            for c in 0..d {
                x[r * d + c] = e[c] + pe[c];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.layout.layers {
            let mut lc = LayerCache {
                xhat1: vec![T::zero(); n * d],
                rstd1: vec![T::zero(); n],
                h1: vec![T::zero(); n * d],
                qkv: vec![T::zero(); n * 3 * d],
                probs: vec![T::zero(); batch * h * len * len],
                ctx: vec![T::zero(); n * d],
                xhat2: vec![T::zero(); n * d],
                rstd2: vec![T::zero(); n],
                h2: vec![T::zero(); n * d],
                u: vec![T::zero(); n * f],
                t: vec![T::zero(); n * f],
                g: vec![T::zero(); n * f],
            };
            layer_norm(&x, self.p(lo.ln1_g, d), self.p(lo.ln1_b, d), &mut lc.h1, &mut lc.xhat1, &mut lc.rstd1);
            gemm(T::one(), &lc.h1, View::rm(0, n, d), w, View::rm(lo.w_qkv, d, 3 * d), T::zero(), &mut lc.qkv, View::rm(0, n, 3 * d));
            add_bias(&mut lc.qkv, self.p(lo.b_qkv, 3 * d));

            for b in 0..batch {
                for hd in 0..h {
                    let base = b * len * 3 * d + hd * dh;
                    let qv = View::strided(base, len, dh, 3 * d);
                    let kv = View::strided(base + d, len, dh, 3 * d);
                    let vv = View::strided(base + 2 * d, len, dh, 3 * d);
                    let pbase = (b * h + hd) * len * len;
                    gemm(scale, &lc.qkv, qv, &lc.qkv, kv.t(), T::zero(), &mut lc.probs, View::rm(pbase, len, len));
                    for i in 0..len {
                        let row = &mut lc.probs[pbase + i * len..pbase + (i + 1) * len];
                        let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                        let inv = T::one() / T::exp_shifted(&mut row[..=i], max);
                        for val in row[..=i].iter_mut() {
                            *val = *val * inv;
                        }
                        for val in row[i + 1..].iter_mut() {
                            *val = T::zero();
                        }
                    }
                    gemm(
                        T::one(),
                        &lc.probs,
                        View::rm(pbase, len, len),
                        &lc.qkv,
                        vv,
                        T::zero(),
                        &mut lc.ctx,
                        View::strided(b * len * d + hd * dh, len, dh, d),
                    );
                }
            }
            gemm(T::one(), &lc.ctx, View::rm(0, n, d), w, View::rm(lo.w_o, d, d), T::one(), &mut x, View::rm(0, n, d));
            add_bias(&mut x, self.p(lo.b_o, d));

            layer_norm(&x, self.p(lo.ln2_g, d), self.p(lo.ln2_b, d), &mut lc.h2, &mut lc.xhat2, &mut lc.rstd2);
            gemm(T::one(), &lc.h2, View::rm(0, n, d), w, View::rm(lo.w1, d, f), T::zero(), &mut lc.u, View::rm(0, n, f));
            add_bias(&mut lc.u, self.p(lo.b1, f));
            gelu(&lc.u, &mut lc.t, &mut lc.g);
            gemm(T::one(), &lc.g, View::rm(0, n, f), w, View::rm(lo.w2, f, d), T::one(), &mut x, View::rm(0, n, d));
            add_bias(&mut x, self.p(lo.b2, d));
            layers.push(lc);
        }

        let mut xhatf = vec![T::zero(); n * d];
        let mut rstdf = vec![T::zero(); n];
        let mut hf = vec![T::zero(); n * d];
        layer_norm(&x, self.p(self.layout.lnf_g, d), self.p(self.layout.lnf_b, d), &mut hf, &mut xhatf, &mut rstdf);
        let mut logits = vec![T::zero(); n * v];
        gemm(T::one(), &hf, View::rm(0, n, d), w, View::rm(self.layout.tok, v, d).t(), T::zero(), &mut logits, View::rm(0, n, v));
        Cache {
            batch,
            len,
            layers,
            xhatf,
            rstdf,
            hf,
            logits,
        }
    }

    /// Log-probabilities of the next token after every position of `tokens`
    /// (one row of `vocab_size` entries per position). At most `context`
    /// tokens.
    pub fn sequence_logprobs(&self, tokens: &[TokenId]) -> Vec<T> {
        assert!(tokens.len() <= self.cfg.context, "sequence longer than the context");
        if tokens.is_empty() {
            return Vec::new();
        }
        let mut logits = self.forward(tokens, 1, tokens.len()).logits;
        for row in logits.chunks_exact_mut(self.vocab_size) {
            log_softmax(row);
        }
        logits
    }

    /// Mean next-token cross-entropy over `batch` windows of `len + 1`
    /// tokens each.
    pub fn loss(&self, windows: &[&[TokenId]]) -> T {
        let (inputs, targets, len) = split_windows(windows);
        let cache = self.forward(&inputs, windows.len(), len);
        cross_entropy(&cache.logits, &targets, self.vocab_size).0
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, windows: &[&[TokenId]]) -> (T, Vec<T>) {
        let (inputs, targets, len) = split_windows(windows);
        let cache = self.forward(&inputs, windows.len(), len);
        let (loss, dlogits) = cross_entropy(&cache.logits, &targets, self.vocab_size);
        (loss, self.backward(&inputs, &cache, dlogits))
    }

    fn backward(&self, tokens: &[TokenId], cache: &Cache<T>, dlogits: Vec<T>) -> Vec<T> {
        let cfg = &self.cfg;
        let (d, f, h, v) = (cfg.d_model, cfg.d_ff, cfg.n_heads, self.vocab_size);
        let dh = d / h;
        let (batch, len) = (cache.batch, cache.len);
        let n = batch * len;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let w = &self.params;
        let lay = &self.layout;
        let mut grads = vec![T::zero(); lay.total];

        let mut dhf = vec![T::zero(); n * d];
        gemm(T::one(), &dlogits, View::rm(0, n, v), w, View::rm(lay.tok, v, d), T::zero(), &mut dhf, View::rm(0, n, d));
        gemm(T::one(), &dlogits, View::rm(0, n, v).t(), &cache.hf, View::rm(0, n, d), T::one(), &mut grads, View::rm(lay.tok, v, d));

        let mut dx = vec![T::zero(); n * d];
        {
            let (dg, db) = two_mut(&mut grads, lay.lnf_g, lay.lnf_b, d);
            layer_norm_back(&dhf, &cache.xhatf, &cache.rstdf, self.p(lay.lnf_g, d), &mut dx, dg, db);
        }

        let mut dh_buf = vec![T::zero(); n * d];
        let mut du = vec![T::zero(); n * f];
        let mut dctx = vec![T::zero(); n * d];
        let mut dqkv = vec![T::zero(); n * 3 * d];
        let mut da = vec![T::zero(); len * len];

        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward sublayer.
            gemm(T::one(), &lc.g, View::rm(0, n, f).t(), &dx, View::rm(0, n, d), T::one(), &mut grads, View::rm(lo.w2, f, d));
            sum_rows_into(&dx, &mut grads[lo.b2..lo.b2 + d]);
            gemm(T::one(), &dx, View::rm(0, n, d), w, View::rm(lo.w2, f, d).t(), T::zero(), &mut du, View::rm(0, n, f));
            gelu_back(&mut du, &lc.u, &lc.t);
            gemm(T::one(), &lc.h2, View::rm(0, n, d).t(), &du, View::rm(0, n, f), T::one(), &mut grads, View::rm(lo.w1, d, f));
            sum_rows_into(&du, &mut grads[lo.b1..lo.b1 + f]);
            gemm(T::one(), &du, View::rm(0, n, f), w, View::rm(lo.w1, d, f).t(), T::zero(), &mut dh_buf, View::rm(0, n, d));
            {
                let (dg, db) = two_mut(&mut grads, lo.ln2_g, lo.ln2_b, d);
                layer_norm_back(&dh_buf, &lc.xhat2, &lc.rstd2, self.p(lo.ln2_g, d), &mut dx, dg, db);
            }

            // Attention sublayer.
            gemm(T::one(), &lc.ctx, View::rm(0, n, d).t(), &dx, View::rm(0, n, d), T::one(), &mut grads, View::rm(lo.w_o, d, d));
            sum_rows_into(&dx, &mut grads[lo.b_o..lo.b_o + d]);
            gemm(T::one(), &dx, View::rm(0, n, d), w, View::rm(lo.w_o, d, d).t(), T::zero(), &mut dctx, View::rm(0, n, d));
            for b in 0..batch {
                for hd in 0..h {
                    let base = b * len * 3 * d + hd * dh;
                    let qv = View::strided(base, len, dh, 3 * d);
                    let kv = View::strided(base + d, len, dh, 3 * d);
                    let vv = View::strided(base + 2 * d, len, dh, 3 * d);
                    let cv = View::strided(b * len * d + hd * dh, len, dh, d);
                    let pv = View::rm((b * h + hd) * len * len, len, len);
                    gemm(T::one(), &dctx, cv, &lc.qkv, vv.t(), T::zero(), &mut da, View::rm(0, len, len));
                    gemm(T::one(), &lc.probs, pv.t(), &dctx, cv, T::zero(), &mut dqkv, vv);
                    for i in 0..len {
                        let p = &lc.probs[pv.off + i * len..pv.off + (i + 1) * len];
                        let row = &mut da[i * len..(i + 1) * len];
                        let dot = (0..=i).map(|j| p[j] * row[j]).sum::<T>();
                        for j in 0..=i {
                            row[j] = p[j] * (row[j] - dot);
                        }
                        for val in row[i + 1..].iter_mut() {
                            *val = T::zero();
                        }
                    }
                    gemm(scale, &da, View::rm(0, len, len), &lc.qkv, kv, T::zero(), &mut dqkv, qv);
                    gemm(scale, &da, View::rm(0, len, len).t(), &lc.qkv, qv, T::zero(), &mut dqkv, kv);
                }
            }
            gemm(T::one(), &lc.h1, View::rm(0, n, d).t(), &dqkv, View::rm(0, n, 3 * d), T::one(), &mut grads, View::rm(lo.w_qkv, d, 3 * d));
            sum_rows_into(&dqkv, &mut grads[lo.b_qkv..lo.b_qkv + 3 * d]);
            gemm(T::one(), &dqkv, View::rm(0, n, 3 * d), w, View::rm(lo.w_qkv, d, 3 * d).t(), T::zero(), &mut dh_buf, View::rm(0, n, d));
            {
                let (dg, db) = two_mut(&mut grads, lo.ln1_g, lo.ln1_b, d);
                layer_norm_back(&dh_buf, &lc.xhat1, &lc.rstd1, self.p(lo.ln1_g, d), &mut dx, dg, db);
            }
        }

        for (r, &tok) in tokens.iter().enumerate() {
            let pos = r % len;
            let te = lay.tok + tok as usize * d;
            let pe = lay.pos + pos * d;
            for c in 0..d {
                grads[te + c] = grads[te + c] + dx[r * d + c];
                grads[pe + c] = grads[pe + c] + dx[r * d + c];
            }
        }
        grads
    }

    pub fn start(&self) -> TransformerState<T> {
        let cap = self.cfg.context * self.cfg.d_model;
        TransformerState {
            tokens: Vec::new(),
            keys: (0..self.cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..self.cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
        }
    }

    /// Appends one token and returns log-probabilities of the next. When the
    /// context is full the state restarts from the most recent half.
    pub fn feed(&self, state: &mut TransformerState<T>, token: TokenId) -> Vec<T> {
        if state.tokens.len() == self.cfg.context {
            let keep = state.tokens[state.tokens.len() - self.cfg.context / 2..].to_vec();
            *state = self.start();
            for t in keep {
                self.step(state, t);
            }
        }
        let mut logits = self.step(state, token);
        log_softmax(&mut logits);
        logits
    }

    fn step(&self, state: &mut TransformerState<T>, token: TokenId) -> Vec<T> {
        let cfg = &self.cfg;
        let (d, f, h, v) = (cfg.d_model, cfg.d_ff, cfg.n_heads, self.vocab_size);
        let dh = d / h;
        let pos = state.tokens.len();
        let scale = T::one() / T::of(dh as f64).sqrt();
        let w = &self.params;

        let e = self.p(self.layout.tok + token as usize * d, d);
        let pe = self.p(self.layout.pos + pos * d, d);
        let mut x: Vec<T> = e.iter().zip(pe).map(|(a, b)| *a + *b).collect();
        let mut hbuf = vec![T::zero(); d];
        let mut xhat = vec![T::zero(); d];
        let mut rstd = [T::zero()];
        let mut qkv = vec![T::zero(); 3 * d];
        let mut ctx = vec![T::zero(); d];
        let mut u = vec![T::zero(); f];
        let mut tbuf = vec![T::zero(); f];
        let mut scores = vec![T::zero(); pos + 1];

        for (l, lo) in self.layout.layers.iter().enumerate() {
            layer_norm(&x, self.p(lo.ln1_g, d), self.p(lo.ln1_b, d), &mut hbuf, &mut xhat, &mut rstd);
            gemm(T::one(), &hbuf, View::rm(0, 1, d), w, View::rm(lo.w_qkv, d, 3 * d), T::zero(), &mut qkv, View::rm(0, 1, 3 * d));
            add_bias(&mut qkv, self.p(lo.b_qkv, 3 * d));
            state.keys[l].extend_from_slice(&qkv[d..2 * d]);
            state.values[l].extend_from_slice(&qkv[2 * d..]);
            let keys = &state.keys[l];
            let values = &state.values[l];
            for hd in 0..h {
                let q = &qkv[hd * dh..(hd + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + hd * dh..j * d + (hd + 1) * dh];
                    *s = q.iter().zip(k).map(|(a, b)| *a * *b).sum::<T>() * scale;
                }
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let sum = T::exp_shifted(&mut scores, max);
                let out = &mut ctx[hd * dh..(hd + 1) * dh];
                out.iter_mut().for_each(|o| *o = T::zero());
                for (j, s) in scores.iter().enumerate() {
                    let a = *s / sum;
                    let vrow = &values[j * d + hd * dh..j * d + (hd + 1) * dh];
                    for (o, vv) in out.iter_mut().zip(vrow) {
                        *o = *o + a * *vv;
                    }
                }
            }
            gemm(T::one(), &ctx, View::rm(0, 1, d), w, View::rm(lo.w_o, d, d), T::one(), &mut x, View::rm(0, 1, d));
            add_bias(&mut x, self.p(lo.b_o, d));
            layer_norm(&x, self.p(lo.ln2_g, d), self.p(lo.ln2_b, d), &mut hbuf, &mut xhat, &mut rstd);
            gemm(T::one(), &hbuf, View::rm(0, 1, d), w, View::rm(lo.w1, d, f), T::zero(), &mut u, View::rm(0, 1, f));
            add_bias(&mut u, self.p(lo.b1, f));
            let pre = u.clone();
            gelu(&pre, &mut tbuf, &mut u);
            gemm(T::one(), &u, View::rm(0, 1, f), w, View::rm(lo.w2, f, d), T::one(), &mut x, View::rm(0, 1, d));
            add_bias(&mut x, self.p(lo.b2, d));
        }
        layer_norm(
            &x,
            self.p(self.layout.lnf_g, d),
            self.p(self.layout.lnf_b, d),
            &mut hbuf,
            &mut xhat,
            &mut rstd,
        );
        let mut logits = vec![T::zero(); v];
        gemm(T::one(), &hbuf, View::rm(0, 1, d), w, View::rm(self.layout.tok, v, d).t(), T::zero(), &mut logits, View::rm(0, 1, v));
        state.tokens.push(token);
        logits
    }
}

/// Trains a fresh model on windows of `context + 1` tokens that start at
/// segment boundaries. Returns the model and the per-step training loss.
pub fn train<T: Scalar>(
    segments: &[Vec<TokenId>],
    vocab_size: usize,
    cfg: &TransformerConfig,
) -> Result<(Transformer<T>, Vec<f64>), LmError> {
    let mut model = Transformer::<T>::new(cfg.clone(), vocab_size)?;
    let stream: Vec<TokenId> = segments.iter().flatten().copied().collect();
    if let Some(&bad) = stream.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(LmError::OutOfVocab(bad));
    }
    let window = cfg.context + 1;
    if stream.len() < window {
        return Err(LmError::StreamTooShort {
            len: stream.len(),
            needed: window,
        });
    }
    let mut starts = Vec::new();
    let mut off = 0;
    for seg in segments {
        if off + window <= stream.len() {
            starts.push(off);
        }
        off += seg.len();
    }
    if starts.is_empty() {
        starts.push(0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model.num_params());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let windows: Vec<&[TokenId]> = (0..cfg.batch_size)
            .map(|_| {
                let s = starts[rng.gen_range(0..starts.len())];
                &stream[s..s + window]
            })
            .collect();
        let (loss, mut grads) = model.loss_and_grad(&windows);
        let norm = clip_grads(&mut grads, cfg.grad_clip);
        let lr = learning_rate(cfg, step);
        adam.update(&mut model.params, &grads, lr);
        let loss = loss.to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(LmError::Diverged(step));
        }
        losses.push(loss);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!("step {step} loss {loss:.4} grad-norm {norm:.3} lr {lr:.2e}");
        }
    }
    Ok((model, losses))
}

fn two_mut<T>(buf: &mut [T], a: usize, b: usize, n: usize) -> (&mut [T], &mut [T]) {
    assert!(a + n <= b, "parameter ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + n], &mut hi[..n])
}

fn split_windows(windows: &[&[TokenId]]) -> (Vec<TokenId>, Vec<TokenId>, usize) {
    let len = windows[0].len() - 1;
    let mut inputs = Vec::with_capacity(windows.len() * len);
    let mut targets = Vec::with_capacity(windows.len() * len);
    for w in windows {
        assert_eq!(w.len(), len + 1, "windows must share one length");
        inputs.extend_from_slice(&w[..len]);
        targets.extend_from_slice(&w[1..]);
    }
    (inputs, targets, len)
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy<T: Scalar>(logits: &[T], targets: &[TokenId], v: usize) -> (T, Vec<T>) {
    let n = targets.len();
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = logits.to_vec();
    let mut loss = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let row = &mut grad[r * v..(r + 1) * v];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum = T::exp_shifted(row, max);
        loss = loss - (logits[r * v + t as usize] - max - sum.ln());
        let s = inv_n / sum;
        for val in row.iter_mut() {
            *val = *val * s;
        }
        row[t as usize] = row[t as usize] - inv_n;
    }
    (loss * inv_n, grad)
}

/// Adam optimiser state.
pub(crate) struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(ADAM_B1), T::of(ADAM_B2));
        let c1 = T::one() / (T::one() - b1.powi(self.t));
        let c2 = T::one() / (T::one() - b2.powi(self.t));
        let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] * c1;
            let vh = self.v[i] * c2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Linear warmup, then cosine decay to a tenth of the peak rate.
pub(crate) fn learning_rate(cfg: &TransformerConfig, step: usize) -> f64 {
    let peak = cfg.learning_rate;
    if step < cfg.warmup_steps {
        return peak * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1) as f64;
    let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
    let floor = 0.1 * peak;
    floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub(crate) fn clip_grads<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.to_f64().unwrap_or(0.0).powi(2)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g = *g * s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            context: 6,
            init_std: 0.3,
            seed: 11,
            ..TransformerConfig::default()
        }
    }

    #[test]
    fn wide_f32_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut row: Vec<f32> = (0..1000).map(|_| rng.gen_range(-15.0..15.0)).collect();
            log_softmax(&mut row);
            let total: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
            assert!((total - 1.0).abs() <= 1e-6, "sum {total}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model: Transformer<f64> = Transformer::new(tiny(), 11).unwrap();
        let a: Vec<TokenId> = vec![1, 4, 2, 9, 3, 3, 7];
        let b: Vec<TokenId> = vec![0, 10, 5, 5, 6, 2, 8];
        let windows = [&a[..], &b[..]];
        let (_, grads) = model.loss_and_grad(&windows);
        let lay = &model.layout;
        let lo = &lay.layers[0];
        let hi = &lay.layers[1];
        let probes = [
            lay.tok + 4 * 8 + 1,
            lay.pos + 2 * 8 + 3,
            lo.w_qkv + 5,
            lo.w_qkv + 8 * 24 - 2,
            lo.b_o + 1,
            lo.ln1_g + 2,
            hi.w1 + 7,
            hi.w2 + 13,
            hi.ln2_b + 4,
            lay.lnf_g + 6,
        ];
        let eps = 1e-5;
        for &i in &probes {
            let mut plus = model.clone();
            plus.params[i] += eps;
            let mut minus = model.clone();
            minus.params[i] -= eps;
            let numeric = (plus.loss(&windows) - minus.loss(&windows)) / (2.0 * eps);
            let analytic = grads[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel <= 1e-3, "param {i}: numeric {numeric} analytic {analytic} rel {rel}");
        }
    }

    #[test]
    fn incremental_matches_batched() {
        let model: Transformer<f64> = Transformer::new(tiny(), 11).unwrap();
        let toks: Vec<TokenId> = vec![3, 1, 4, 1, 5, 9];
        let batched = model.sequence_logprobs(&toks);
        let mut st = model.start();
        for (i, &t) in toks.iter().enumerate() {
            let row = model.feed(&mut st, t);
            for (a, b) in row.iter().zip(&batched[i * 11..(i + 1) * 11]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn feed_past_context_keeps_working() {
        let model: Transformer<f32> = Transformer::new(tiny(), 11).unwrap();
        let mut st = model.start();
        for t in 0..20u32 {
            let row = model.feed(&mut st, t % 11);
            let total: f64 = row.iter().map(|v| (*v as f64).exp()).sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn schedule_shape() {
        let cfg = TransformerConfig {
            steps: 100,
            warmup_steps: 10,
            learning_rate: 1.0,
            ..TransformerConfig::default()
        };
        assert!((learning_rate(&cfg, 9) - 1.0).abs() < 1e-12);
        assert!(learning_rate(&cfg, 0) < learning_rate(&cfg, 5));
        assert!((learning_rate(&cfg, 100) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = TransformerConfig {
            d_model: 10,
            n_heads: 3,
            ..TransformerConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TransformerConfig::default().validate().is_ok());
    }
}
