//! Decoder-only transformer over token ids: summed token/positional/type
//! embeddings, pre-norm causal attention blocks, a GELU feed-forward, and a
//! hand-derived backward pass in plain f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorError;

const LN_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum body length; sequences run to `block_size + 2` with markers.
    pub block_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub init_std: f64,
    /// Decoupled weight decay, applied to linear-layer weights only.
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl ModelConfig {
    pub fn paper(vocab_size: usize, block_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            block_size,
            dim: 256,
            layers: 8,
            heads: 8,
            ffn_dim: 1024,
            dropout: 0.10,
            init_std: 0.02,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }

    pub fn desk(vocab_size: usize, block_size: usize) -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 256,
            ..ModelConfig::paper(vocab_size, block_size)
        }
    }

    pub fn max_seq_len(&self) -> usize {
        self.block_size + 2
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.vocab_size == 0 || self.block_size == 0 {
            return Err(GeneratorError::InvalidConfig("empty vocab or block"));
        }
        if self.dim == 0 || self.layers == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(GeneratorError::InvalidConfig("zero-sized dimension"));
        }
        if self.dim % self.heads != 0 {
            return Err(GeneratorError::InvalidConfig("dim not divisible by heads"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GeneratorError::InvalidConfig("dropout outside [0,1)"));
        }
        if self.init_std <= 0.0 || self.grad_clip <= 0.0 || self.weight_decay < 0.0 {
            return Err(GeneratorError::InvalidConfig("non-positive training constant"));
        }
        Ok(())
    }
}

/// Row-major matrix; all model state and activations use this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for v in &mut m.data {
            *v = std * standard_normal(rng);
        }
        m
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn mul_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }
}

/// Box-Muller draw from N(0, 1).
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Whether a tensor participates in weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamClass {
    Linear,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Block {
    pub ln1_gamma: Mat,
    pub ln1_beta: Mat,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2_gamma: Mat,
    pub ln2_beta: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Parameters {
    pub token_emb: Mat,
    pub pos_emb: Mat,
    pub type_emb: Mat,
    pub blocks: Vec<Block>,
    pub lnf_gamma: Mat,
    pub lnf_beta: Mat,
    pub head_w: Mat,
    pub head_b: Mat,
}

impl Parameters {
    fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let std = cfg.init_std;
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                ln1_gamma: Mat::filled(1, d, 1.0),
                ln1_beta: Mat::zeros(1, d),
                wq: Mat::randn(d, d, std, rng),
                wk: Mat::randn(d, d, std, rng),
                wv: Mat::randn(d, d, std, rng),
                wo: Mat::randn(d, d, std, rng),
                ln2_gamma: Mat::filled(1, d, 1.0),
                ln2_beta: Mat::zeros(1, d),
                w1: Mat::randn(cfg.ffn_dim, d, std, rng),
                b1: Mat::zeros(1, cfg.ffn_dim),
                w2: Mat::randn(d, cfg.ffn_dim, std, rng),
                b2: Mat::zeros(1, d),
            })
            .collect();
        Parameters {
            token_emb: Mat::randn(cfg.vocab_size, d, std, rng),
            pos_emb: Mat::randn(cfg.max_seq_len(), d, std, rng),
            type_emb: Mat::randn(1, d, std, rng),
            blocks,
            lnf_gamma: Mat::filled(1, d, 1.0),
            lnf_beta: Mat::zeros(1, d),
            head_w: Mat::randn(cfg.vocab_size, d, std, rng),
            head_b: Mat::zeros(1, cfg.vocab_size),
        }
    }

    pub fn zeros_like(&self) -> Parameters {
        fn z(m: &Mat) -> Mat {
            Mat::zeros(m.rows, m.cols)
        }
        Parameters {
            token_emb: z(&self.token_emb),
            pos_emb: z(&self.pos_emb),
            type_emb: z(&self.type_emb),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_gamma: z(&b.ln1_gamma),
                    ln1_beta: z(&b.ln1_beta),
                    wq: z(&b.wq),
                    wk: z(&b.wk),
                    wv: z(&b.wv),
                    wo: z(&b.wo),
                    ln2_gamma: z(&b.ln2_gamma),
                    ln2_beta: z(&b.ln2_beta),
                    w1: z(&b.w1),
                    b1: z(&b.b1),
                    w2: z(&b.w2),
                    b2: z(&b.b2),
                })
                .collect(),
            lnf_gamma: z(&self.lnf_gamma),
            lnf_beta: z(&self.lnf_beta),
            head_w: z(&self.head_w),
            head_b: z(&self.head_b),
        }
    }

    /// Every tensor in a fixed order, paired with its decay class. The
    /// mutable variant below must list the same tensors in the same order.
    pub fn tensors(&self) -> Vec<(&Mat, ParamClass)> {
        let mut out = vec![
            (&self.token_emb, ParamClass::Other),
            (&self.pos_emb, ParamClass::Other),
            (&self.type_emb, ParamClass::Other),
        ];
        for b in &self.blocks {
            out.push((&b.ln1_gamma, ParamClass::Other));
            out.push((&b.ln1_beta, ParamClass::Other));
            out.push((&b.wq, ParamClass::Linear));
            out.push((&b.wk, ParamClass::Linear));
            out.push((&b.wv, ParamClass::Linear));
            out.push((&b.wo, ParamClass::Linear));
            out.push((&b.ln2_gamma, ParamClass::Other));
            out.push((&b.ln2_beta, ParamClass::Other));
            out.push((&b.w1, ParamClass::Linear));
            out.push((&b.b1, ParamClass::Other));
            out.push((&b.w2, ParamClass::Linear));
            out.push((&b.b2, ParamClass::Other));
        }
        out.push((&self.lnf_gamma, ParamClass::Other));
        out.push((&self.lnf_beta, ParamClass::Other));
        out.push((&self.head_w, ParamClass::Linear));
        out.push((&self.head_b, ParamClass::Other));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut Mat, ParamClass)> {
        let mut out = vec![
            (&mut self.token_emb, ParamClass::Other),
            (&mut self.pos_emb, ParamClass::Other),
            (&mut self.type_emb, ParamClass::Other),
        ];
        for b in &mut self.blocks {
            out.push((&mut b.ln1_gamma, ParamClass::Other));
            out.push((&mut b.ln1_beta, ParamClass::Other));
            out.push((&mut b.wq, ParamClass::Linear));
            out.push((&mut b.wk, ParamClass::Linear));
            out.push((&mut b.wv, ParamClass::Linear));
            out.push((&mut b.wo, ParamClass::Linear));
            out.push((&mut b.ln2_gamma, ParamClass::Other));
            out.push((&mut b.ln2_beta, ParamClass::Other));
            out.push((&mut b.w1, ParamClass::Linear));
            out.push((&mut b.b1, ParamClass::Other));
            out.push((&mut b.w2, ParamClass::Linear));
            out.push((&mut b.b2, ParamClass::Other));
        }
        out.push((&mut self.lnf_gamma, ParamClass::Other));
        out.push((&mut self.lnf_beta, ParamClass::Other));
        out.push((&mut self.head_w, ParamClass::Linear));
        out.push((&mut self.head_b, ParamClass::Other));
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(m, _)| m.data.len()).sum()
    }
}

pub(crate) struct LnCache {
    xhat: Mat,
    invstd: Vec<f64>,
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    concat: Mat,
    attn_mask: Option<Mat>,
    ln2: LnCache,
    b: Mat,
    h_pre: Mat,
    h_act: Mat,
    ffn_mask: Option<Mat>,
}

pub(crate) struct ForwardCache {
    ids: Vec<u32>,
    emb_mask: Option<Mat>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    y: Mat,
    pub logits: Mat,
}

/// y = x·Wᵀ (+ b); w is out×in, b is 1×out.
fn linear(x: &Mat, w: &Mat, b: Option<&Mat>) -> Mat {
    debug_assert_eq!(x.cols, w.cols);
    let mut y = Mat::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        for (r, out) in yi.iter_mut().enumerate() {
            let wr = w.row(r);
            let mut s = 0.0;
            for c in 0..x.cols {
                s += xi[c] * wr[c];
            }
            *out = s;
        }
        if let Some(b) = b {
            for (out, bias) in yi.iter_mut().zip(b.row(0)) {
                *out += bias;
            }
        }
    }
    y
}

/// Accumulates dw (+ db) and returns dx for y = x·Wᵀ (+ b).
fn linear_backward(
    dy: &Mat,
    x: &Mat,
    w: &Mat,
    dw: &mut Mat,
    db: Option<&mut Mat>,
) -> Mat {
    for i in 0..x.rows {
        let dyi = dy.row(i);
        let xi = x.row(i);
        for (r, &g) in dyi.iter().enumerate() {
            if g != 0.0 {
                for (acc, &xv) in dw.row_mut(r).iter_mut().zip(xi) {
                    *acc += g * xv;
                }
            }
        }
    }
    if let Some(db) = db {
        let dbr = db.row_mut(0);
        for i in 0..dy.rows {
            for (acc, &g) in dbr.iter_mut().zip(dy.row(i)) {
                *acc += g;
            }
        }
    }
    let mut dx = Mat::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let dyi = dy.row(i);
        let dxi = dx.row_mut(i);
        for (r, &g) in dyi.iter().enumerate() {
            if g != 0.0 {
                for (acc, &wv) in dxi.iter_mut().zip(w.row(r)) {
                    *acc += g * wv;
                }
            }
        }
    }
    dx
}

fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> (Mat, LnCache) {
    let (t, d) = (x.rows, x.cols);
    let mut out = Mat::zeros(t, d);
    let mut xhat = Mat::zeros(t, d);
    let mut invstd = vec![0.0; t];
    for i in 0..t {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        invstd[i] = inv;
        let g = gamma.row(0);
        let b = beta.row(0);
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            xhat.row_mut(i)[c] = xh;
            out.row_mut(i)[c] = g[c] * xh + b[c];
        }
    }
    (out, LnCache { xhat, invstd })
}

fn layer_norm_backward(
    dy: &Mat,
    cache: &LnCache,
    gamma: &Mat,
    dgamma: &mut Mat,
    dbeta: &mut Mat,
) -> Mat {
    let (t, d) = (dy.rows, dy.cols);
    let mut dx = Mat::zeros(t, d);
    for i in 0..t {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let g = gamma.row(0);
        let dg = dgamma.row_mut(0);
        let db = dbeta.row_mut(0);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in 0..d {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            let dxh = dyr[c] * g[c];
            m1 += dxh;
            m2 += dxh * xh[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let inv = cache.invstd[i];
        for c in 0..d {
            let dxh = dyr[c] * g[c];
            dx.row_mut(i)[c] = inv * (dxh - m1 - xh[c] * m2);
        }
    }
    dx
}

/// Multi-head causal attention; returns the head-concatenated context and
/// the per-head probability matrices (zero above the diagonal).
fn attention_forward(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> (Mat, Vec<Mat>) {
    let t = q.rows;
    let dk = q.cols / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = Mat::zeros(t, q.cols);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * dk;
        let mut p = Mat::zeros(t, t);
        for i in 0..t {
            let qi = &q.row(i)[off..off + dk];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k.row(j)[off..off + dk];
                let mut s = 0.0;
                for c in 0..dk {
                    s += qi[c] * kj[c];
                }
                let s = s * scale;
                p.row_mut(i)[j] = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for j in 0..=i {
                let e = (p.row(i)[j] - max).exp();
                p.row_mut(i)[j] = e;
                sum += e;
            }
            for j in 0..=i {
                p.row_mut(i)[j] /= sum;
            }
            for j in 0..=i {
                let w = p.row(i)[j];
                let vj = &v.row(j)[off..off + dk];
                let out = &mut concat.row_mut(i)[off..off + dk];
                for c in 0..dk {
                    out[c] += w * vj[c];
                }
            }
        }
        probs.push(p);
    }
    (concat, probs)
}

fn attention_backward(
    dconcat: &Mat,
    q: &Mat,
    k: &Mat,
    v: &Mat,
    probs: &[Mat],
    heads: usize,
) -> (Mat, Mat, Mat) {
    let t = q.rows;
    let dk = q.cols / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Mat::zeros(t, q.cols);
    let mut dkm = Mat::zeros(t, q.cols);
    let mut dv = Mat::zeros(t, q.cols);
    let mut dp = vec![0.0; t];
    let mut ds = vec![0.0; t];
    for h in 0..heads {
        let off = h * dk;
        let p = &probs[h];
        for i in 0..t {
            let doi = &dconcat.row(i)[off..off + dk];
            let mut dot = 0.0;
            for j in 0..=i {
                let vj = &v.row(j)[off..off + dk];
                let mut s = 0.0;
                for c in 0..dk {
                    s += doi[c] * vj[c];
                }
                dp[j] = s;
                let pij = p.row(i)[j];
                dot += s * pij;
                let dvj = &mut dv.row_mut(j)[off..off + dk];
                for c in 0..dk {
                    dvj[c] += pij * doi[c];
                }
            }
            for j in 0..=i {
                ds[j] = p.row(i)[j] * (dp[j] - dot);
            }
            for j in 0..=i {
                let s = ds[j] * scale;
                let kj = &k.row(j)[off..off + dk];
                let dqi = &mut dq.row_mut(i)[off..off + dk];
                for c in 0..dk {
                    dqi[c] += s * kj[c];
                }
            }
            let qi = &q.row(i)[off..off + dk];
            for j in 0..=i {
                let s = ds[j] * scale;
                let dkj = &mut dkm.row_mut(j)[off..off + dk];
                for c in 0..dk {
                    dkj[c] += s * qi[c];
                }
            }
        }
    }
    (dq, dkm, dv)
}

/// Inverted-dropout mask (entries 0 or 1/keep), or None when disabled.
fn maybe_mask(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Option<Mat> {
    let rng = rng.as_deref_mut()?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 - p;
    let mut m = Mat::zeros(rows, cols);
    for v in &mut m.data {
        *v = if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep };
    }
    Some(m)
}

pub(crate) fn forward_cached(
    params: &Parameters,
    cfg: &ModelConfig,
    ids: &[u32],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> ForwardCache {
    let t = ids.len();
    let d = cfg.dim;
    debug_assert!(t >= 1 && t <= cfg.max_seq_len());
    let mut x = Mat::zeros(t, d);
    for (i, &id) in ids.iter().enumerate() {
        debug_assert!((id as usize) < cfg.vocab_size);
        let tok = params.token_emb.row(id as usize);
        let pos = params.pos_emb.row(i);
        let ty = params.type_emb.row(0);
        let xi = x.row_mut(i);
        for c in 0..d {
            xi[c] = tok[c] + pos[c] + ty[c];
        }
    }
    let emb_mask = maybe_mask(t, d, cfg.dropout, &mut dropout_rng);
    if let Some(m) = &emb_mask {
        x.mul_assign(m);
    }
    let mut blocks = Vec::with_capacity(cfg.layers);
    for blk in &params.blocks {
        let (a, ln1) = layer_norm(&x, &blk.ln1_gamma, &blk.ln1_beta);
        let q = linear(&a, &blk.wq, None);
        let k = linear(&a, &blk.wk, None);
        let v = linear(&a, &blk.wv, None);
        let (concat, probs) = attention_forward(&q, &k, &v, cfg.heads);
        let mut attn = linear(&concat, &blk.wo, None);
        let attn_mask = maybe_mask(t, d, cfg.dropout, &mut dropout_rng);
        if let Some(m) = &attn_mask {
            attn.mul_assign(m);
        }
        x.add_assign(&attn);
        let (b, ln2) = layer_norm(&x, &blk.ln2_gamma, &blk.ln2_beta);
        let h_pre = linear(&b, &blk.w1, Some(&blk.b1));
        let mut h_act = h_pre.clone();
        for v in &mut h_act.data {
            *v = gelu(*v);
        }
        let mut f = linear(&h_act, &blk.w2, Some(&blk.b2));
        let ffn_mask = maybe_mask(t, d, cfg.dropout, &mut dropout_rng);
        if let Some(m) = &ffn_mask {
            f.mul_assign(m);
        }
        x.add_assign(&f);
        blocks.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            concat,
            attn_mask,
            ln2,
            b,
            h_pre,
            h_act,
            ffn_mask,
        });
    }
    let (y, lnf) = layer_norm(&x, &params.lnf_gamma, &params.lnf_beta);
    let logits = linear(&y, &params.head_w, Some(&params.head_b));
    ForwardCache {
        ids: ids.to_vec(),
        emb_mask,
        blocks,
        lnf,
        y,
        logits,
    }
}

/// Accumulates parameter gradients for one sequence given d(loss)/d(logits).
pub(crate) fn backward(
    params: &Parameters,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    dlogits: &Mat,
    grads: &mut Parameters,
) {
    let dy = linear_backward(
        dlogits,
        &cache.y,
        &params.head_w,
        &mut grads.head_w,
        Some(&mut grads.head_b),
    );
    let mut dx = layer_norm_backward(
        &dy,
        &cache.lnf,
        &params.lnf_gamma,
        &mut grads.lnf_gamma,
        &mut grads.lnf_beta,
    );
    for (blk, (bc, gb)) in params
        .blocks
        .iter()
        .zip(cache.blocks.iter().zip(grads.blocks.iter_mut()))
        .rev()
    {
        let mut df = dx.clone();
        if let Some(m) = &bc.ffn_mask {
            df.mul_assign(m);
        }
        let mut dh = linear_backward(&df, &bc.h_act, &blk.w2, &mut gb.w2, Some(&mut gb.b2));
        for (g, &pre) in dh.data.iter_mut().zip(&bc.h_pre.data) {
            *g *= gelu_prime(pre);
        }
        let db = linear_backward(&dh, &bc.b, &blk.w1, &mut gb.w1, Some(&mut gb.b1));
        let dmid = layer_norm_backward(&db, &bc.ln2, &blk.ln2_gamma, &mut gb.ln2_gamma, &mut gb.ln2_beta);
        dx.add_assign(&dmid);
        let mut dattn = dx.clone();
        if let Some(m) = &bc.attn_mask {
            dattn.mul_assign(m);
        }
        let dconcat = linear_backward(&dattn, &bc.concat, &blk.wo, &mut gb.wo, None);
        let (dq, dk, dv) = attention_backward(&dconcat, &bc.q, &bc.k, &bc.v, &bc.probs, cfg.heads);
        let mut da = linear_backward(&dq, &bc.a, &blk.wq, &mut gb.wq, None);
        da.add_assign(&linear_backward(&dk, &bc.a, &blk.wk, &mut gb.wk, None));
        da.add_assign(&linear_backward(&dv, &bc.a, &blk.wv, &mut gb.wv, None));
        let din = layer_norm_backward(&da, &bc.ln1, &blk.ln1_gamma, &mut gb.ln1_gamma, &mut gb.ln1_beta);
        dx.add_assign(&din);
    }
    if let Some(m) = &cache.emb_mask {
        dx.mul_assign(m);
    }
    let d = cfg.dim;
    for (i, &id) in cache.ids.iter().enumerate() {
        let dxi = dx.row(i);
        let te = grads.token_emb.row_mut(id as usize);
        for c in 0..d {
            te[c] += dxi[c];
        }
        let pe = grads.pos_emb.row_mut(i);
        for c in 0..d {
            pe[c] += dxi[c];
        }
        let ty = grads.type_emb.row_mut(0);
        for c in 0..d {
            ty[c] += dxi[c];
        }
    }
}

/// Sum of per-position cross-entropies of `targets` under the logits.
pub(crate) fn ce_from_logits(logits: &Mat, targets: &[u32]) -> f64 {
    debug_assert_eq!(logits.rows, targets.len());
    let mut sum = 0.0;
    for (i, &tgt) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += lse - row[tgt as usize];
    }
    sum
}

/// (softmax − onehot) · scale per position.
pub(crate) fn dlogits_from(logits: &Mat, targets: &[u32], scale: f64) -> Mat {
    let mut d = Mat::zeros(logits.rows, logits.cols);
    for (i, &tgt) in targets.iter().enumerate() {
        let out = d.row_mut(i);
        out.copy_from_slice(logits.row(i));
        softmax_in_place(out);
        out[tgt as usize] -= 1.0;
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
    d
}

/// Mean cross-entropy of (input, target) pairs, forward only, no dropout.
pub(crate) fn batch_loss(params: &Parameters, cfg: &ModelConfig, pairs: &[(&[u32], &[u32])]) -> f64 {
    let mut sum = 0.0;
    let mut total = 0usize;
    for (inp, tgt) in pairs {
        let cache = forward_cached(params, cfg, inp, None);
        sum += ce_from_logits(&cache.logits, tgt);
        total += tgt.len();
    }
    sum / total as f64
}

/// Mean cross-entropy plus accumulated gradients over a batch.
pub(crate) fn batch_loss_and_grads(
    params: &Parameters,
    cfg: &ModelConfig,
    pairs: &[(&[u32], &[u32])],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> (f64, Parameters) {
    let total: usize = pairs.iter().map(|(_, t)| t.len()).sum();
    let scale = 1.0 / total as f64;
    let mut grads = params.zeros_like();
    let mut sum = 0.0;
    for (inp, tgt) in pairs {
        let cache = forward_cached(params, cfg, inp, dropout_rng.as_deref_mut());
        sum += ce_from_logits(&cache.logits, tgt);
        let dl = dlogits_from(&cache.logits, tgt, scale);
        backward(params, cfg, &cache, &dl, &mut grads);
    }
    (sum * scale, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GptModel {
    config: ModelConfig,
    pub(crate) params: Parameters,
}

impl GptModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, GeneratorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Parameters::init(&config, &mut rng);
        Ok(GptModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn check_len(&self, len: usize) -> Result<(), GeneratorError> {
        if len == 0 || len > self.config.max_seq_len() {
            return Err(GeneratorError::LengthExceeded {
                len,
                max: self.config.max_seq_len(),
            });
        }
        Ok(())
    }

    /// Logits for every position, dropout disabled.
    pub fn forward(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>, GeneratorError> {
        self.check_len(ids.len())?;
        let cache = forward_cached(&self.params, &self.config, ids, None);
        Ok((0..cache.logits.rows)
            .map(|i| cache.logits.row(i).to_vec())
            .collect())
    }

    /// Logits at the last position only, for autoregressive sampling.
    pub(crate) fn last_logits(&self, ids: &[u32]) -> Result<Vec<f64>, GeneratorError> {
        self.check_len(ids.len())?;
        let cache = forward_cached(&self.params, &self.config, ids, None);
        Ok(cache.logits.row(cache.logits.rows - 1).to_vec())
    }

    fn check_pairs(&self, pairs: &[(&[u32], &[u32])]) -> Result<(), GeneratorError> {
        if pairs.is_empty() {
            return Err(GeneratorError::EmptyCorpus);
        }
        for (inp, tgt) in pairs {
            self.check_len(inp.len())?;
            if inp.len() != tgt.len() {
                return Err(GeneratorError::InvalidConfig("input/target length mismatch"));
            }
            if inp
                .iter()
                .chain(tgt.iter())
                .any(|&id| id as usize >= self.config.vocab_size)
            {
                return Err(GeneratorError::InvalidConfig("token id outside the vocabulary"));
            }
        }
        Ok(())
    }

    /// Mean next-token cross-entropy over (input, target) pairs, dropout
    /// disabled.
    pub fn batch_loss(&self, pairs: &[(&[u32], &[u32])]) -> Result<f64, GeneratorError> {
        self.check_pairs(pairs)?;
        Ok(batch_loss(&self.params, &self.config, pairs))
    }

    /// The same loss plus its analytic gradient, flattened in
    /// `parameters_flat` order.
    pub fn batch_gradient(
        &self,
        pairs: &[(&[u32], &[u32])],
    ) -> Result<(f64, Vec<f64>), GeneratorError> {
        self.check_pairs(pairs)?;
        let (loss, grads) = batch_loss_and_grads(&self.params, &self.config, pairs, None);
        let flat = grads
            .tensors()
            .iter()
            .flat_map(|(m, _)| m.data.iter().copied())
            .collect();
        Ok((loss, flat))
    }

    /// Every parameter in one flat vector, tensor by tensor in a fixed order.
    pub fn parameters_flat(&self) -> Vec<f64> {
        self.params
            .tensors()
            .iter()
            .flat_map(|(m, _)| m.data.iter().copied())
            .collect()
    }

    /// Replace every parameter from a flat vector in `parameters_flat` order.
    pub fn set_parameters_flat(&mut self, flat: &[f64]) -> Result<(), GeneratorError> {
        if flat.len() != self.params.count() {
            return Err(GeneratorError::InvalidConfig("flat parameter length mismatch"));
        }
        let mut values = flat.iter();
        for (m, _) in self.params.tensors_mut() {
            for slot in &mut m.data {
                *slot = *values.next().unwrap();
            }
        }
        Ok(())
    }
}
