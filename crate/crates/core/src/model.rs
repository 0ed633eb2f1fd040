//! Lightweight Transformer encoder mapping a 40×12 window to 28 success
//! probabilities.
//!
//! ```text
//! x ─ Linear(12→8) ─ (+pos) ─┬─ [LN → MHA(2 heads) → (+)] ─ [LN → FF(8→32→8, GELU) → (+)] ─┐ ×2
//!                             └───────────────────────────────────────────────────────────┘
//!   ─ LN ─ mean over 40 positions ─ Linear(8→32) ─ GELU ─ Linear(32→28) ─ logistic
//! ```
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] records the
//! offset of every tensor. Weight matrices are stored input-major, so a linear
//! layer computes `y[j] = b[j] + Σ_i x[i] · W[i·out + j]`. The backward pass is
//! written out by hand and checked against central finite differences in the
//! tests.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureWindow, NUM_FEATURES, WINDOW_LEN};
use crate::NUM_MCS;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Architecture hyper-parameters. Normalization is pre-LN, pooling is the
/// sequence mean and the output activation is the logistic function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub in_features: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub out_dim: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: WINDOW_LEN,
            in_features: NUM_FEATURES,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            out_dim: NUM_MCS,
            decoder_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.seq_len,
            self.in_features,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.decoder_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.out_dim != NUM_MCS {
            return Err(Error::InvalidArgument(format!(
                "out_dim must be {NUM_MCS}, got {}",
                self.out_dim
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Exact number of trainable scalars of `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let input = config.in_features * d + d;
    let pos = config.seq_len * d;
    let attention = 4 * (d * d + d);
    let norms = 2 * 2 * d;
    let ff = d * config.d_ff + config.d_ff + config.d_ff * d + d;
    let final_norm = 2 * d;
    let decoder = d * config.decoder_hidden
        + config.decoder_hidden
        + config.decoder_hidden * config.out_dim
        + config.out_dim;
    input + pos + config.n_layers * (attention + norms + ff) + final_norm + decoder
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

/// Role of a parameter tensor, used for initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Linear weight with the given fan-in.
    Weight {
        fan_in: usize,
    },
    Bias,
    NormGain,
    NormBias,
    Positional,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    in_w: usize,
    in_b: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    dec1_w: usize,
    dec1_b: usize,
    dec2_w: usize,
    dec2_b: usize,
    /// `(start, len, kind)` for each tensor, in storage order.
    pub tensors: Vec<(usize, usize, TensorKind)>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut tensors = Vec::new();
        let mut next = 0usize;
        let mut alloc = |len: usize, kind: TensorKind| {
            let start = next;
            tensors.push((start, len, kind));
            next += len;
            start
        };
        let w = |fan_in| TensorKind::Weight { fan_in };
        let in_w = alloc(c.in_features * d, w(c.in_features));
        let in_b = alloc(d, TensorKind::Bias);
        let pos = alloc(c.seq_len * d, TensorKind::Positional);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: alloc(d, TensorKind::NormGain),
                ln1_b: alloc(d, TensorKind::NormBias),
                wq: alloc(d * d, w(d)),
                bq: alloc(d, TensorKind::Bias),
                wk: alloc(d * d, w(d)),
                bk: alloc(d, TensorKind::Bias),
                wv: alloc(d * d, w(d)),
                bv: alloc(d, TensorKind::Bias),
                wo: alloc(d * d, w(d)),
                bo: alloc(d, TensorKind::Bias),
                ln2_g: alloc(d, TensorKind::NormGain),
                ln2_b: alloc(d, TensorKind::NormBias),
                ff1_w: alloc(d * c.d_ff, w(d)),
                ff1_b: alloc(c.d_ff, TensorKind::Bias),
                ff2_w: alloc(c.d_ff * d, w(c.d_ff)),
                ff2_b: alloc(d, TensorKind::Bias),
            })
            .collect();
        let lnf_g = alloc(d, TensorKind::NormGain);
        let lnf_b = alloc(d, TensorKind::NormBias);
        let dec1_w = alloc(d * c.decoder_hidden, w(d));
        let dec1_b = alloc(c.decoder_hidden, TensorKind::Bias);
        let dec2_w = alloc(c.decoder_hidden * c.out_dim, w(c.decoder_hidden));
        let dec2_b = alloc(c.out_dim, TensorKind::Bias);
        Self {
            in_w,
            in_b,
            pos,
            layers,
            lnf_g,
            lnf_b,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            tensors,
            total: next,
        }
    }

    /// `true` for parameters subject to decoupled weight decay (linear weights).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for &(start, len, kind) in &self.tensors {
            if matches!(kind, TensorKind::Weight { .. }) {
                mask[start..start + len].fill(true);
            }
        }
        mask
    }
}

/// Trainable parameters with a flat-vector view.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

/// Uniform fan-in initialization; biases and positional embeddings start at
/// zero, norm gains at one.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; layout.total];
    for &(start, len, kind) in &layout.tensors {
        let slot = &mut data[start..start + len];
        match kind {
            TensorKind::Weight { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                slot.iter_mut()
                    .for_each(|v| *v = rng.random_range(-bound..bound));
            }
            TensorKind::NormGain => slot.fill(1.0),
            TensorKind::Bias | TensorKind::NormBias | TensorKind::Positional => {}
        }
    }
    Ok(ModelParams {
        config: *config,
        layout,
        data,
    })
}

impl ModelParams {
    /// Every parameter zero, including norm gains.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let data = vec![0.0; layout.total];
        Ok(Self {
            config: *config,
            layout,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// FNV-1a style hash over the parameter bit patterns, one step per word;
    /// ties activation caches to their parameters.
    pub fn fingerprint(&self) -> u64 {
        self.data
            .iter()
            .fold(FNV_OFFSET, |h, v| (h ^ v.to_bits()).wrapping_mul(FNV_PRIME))
    }

    fn slice(&self, start: usize, len: usize) -> &[f64] {
        &self.data[start..start + len]
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
            for (yj, &wij) in yr.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *yj += xi * wij;
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Vec<f64> {
    let mut dx = if want_dx {
        vec![0.0; rows * n_in]
    } else {
        Vec::new()
    };
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (dbj, &g) in db.iter_mut().zip(dyr) {
            *dbj += g;
        }
        for i in 0..n_in {
            let xi = x[r * n_in + i];
            let wrow = &w[i * n_out..(i + 1) * n_out];
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0;
            for j in 0..n_out {
                dwrow[j] += xi * dyr[j];
                acc += wrow[j] * dyr[j];
            }
            if want_dx {
                dx[r * n_in + i] = acc;
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], rows: usize, d: usize) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = g[j] * h + b[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(
    cache: &NormCache,
    g: &[f64],
    dy: &[f64],
    rows: usize,
    d: usize,
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for j in 0..d {
            dx[r * d + j] = cache.rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `[head][query][key]`.
    attn: Vec<f64>,
    ctx: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    x: Vec<f64>,
    layers: Vec<LayerCache>,
    lnf: NormCache,
    pooled: Vec<f64>,
    z1: Vec<f64>,
    u: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Runs the model on one normalized window.
pub fn forward(params: &ModelParams, window: &FeatureWindow) -> Result<(Vec<f64>, ForwardCache)> {
    forward_raw(params, &window.data)
}

/// [`forward`] on a row-major `seq_len × in_features` slice.
pub fn forward_raw(params: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let c = &params.config;
    let lay = &params.layout;
    let (n, d, hd) = (c.seq_len, c.d_model, c.head_dim());
    if x.len() != n * c.in_features {
        return Err(Error::InvalidArgument(format!(
            "window has {} values, expected {}×{}",
            x.len(),
            n,
            c.in_features
        )));
    }
    let p = |start: usize, len: usize| params.slice(start, len);

    let mut h = linear(
        x,
        p(lay.in_w, c.in_features * d),
        p(lay.in_b, d),
        n,
        c.in_features,
        d,
    );
    for (hv, pv) in h.iter_mut().zip(p(lay.pos, n * d)) {
        *hv += pv;
    }

    let scale = 1.0 / (hd as f64).sqrt();
    let mut layers = Vec::with_capacity(c.n_layers);
    for lo in &lay.layers {
        let (a, ln1) = layer_norm(&h, p(lo.ln1_g, d), p(lo.ln1_b, d), n, d);
        let q = linear(&a, p(lo.wq, d * d), p(lo.bq, d), n, d, d);
        let k = linear(&a, p(lo.wk, d * d), p(lo.bk, d), n, d, d);
        let v = linear(&a, p(lo.wv, d * d), p(lo.bv, d), n, d, d);
        let mut attn = vec![0.0; c.n_heads * n * n];
        let mut ctx = vec![0.0; n * d];
        for head in 0..c.n_heads {
            let off = head * hd;
            for i in 0..n {
                let row = &mut attn[(head * n + i) * n..(head * n + i + 1) * n];
                let qi = &q[i * d + off..i * d + off + hd];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + hd];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    max = max.max(*s);
                }
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let ci = &mut ctx[i * d + off..i * d + off + hd];
                for (j, s) in row.iter_mut().enumerate() {
                    *s /= sum;
                    let vj = &v[j * d + off..j * d + off + hd];
                    for (cv, vv) in ci.iter_mut().zip(vj) {
                        *cv += *s * vv;
                    }
                }
            }
        }
        let o = linear(&ctx, p(lo.wo, d * d), p(lo.bo, d), n, d, d);
        for (hv, ov) in h.iter_mut().zip(&o) {
            *hv += ov;
        }
        let (b, ln2) = layer_norm(&h, p(lo.ln2_g, d), p(lo.ln2_b, d), n, d);
        let f_pre = linear(
            &b,
            p(lo.ff1_w, d * c.d_ff),
            p(lo.ff1_b, c.d_ff),
            n,
            d,
            c.d_ff,
        );
        let f_act: Vec<f64> = f_pre.iter().map(|&z| gelu(z)).collect();
        let g = linear(
            &f_act,
            p(lo.ff2_w, c.d_ff * d),
            p(lo.ff2_b, d),
            n,
            c.d_ff,
            d,
        );
        for (hv, gv) in h.iter_mut().zip(&g) {
            *hv += gv;
        }
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            ctx,
            ln2,
            b,
            f_pre,
            f_act,
        });
    }

    let (hf, lnf) = layer_norm(&h, p(lay.lnf_g, d), p(lay.lnf_b, d), n, d);
    let mut pooled = vec![0.0; d];
    for r in 0..n {
        for (pv, hv) in pooled.iter_mut().zip(&hf[r * d..(r + 1) * d]) {
            *pv += hv;
        }
    }
    pooled.iter_mut().for_each(|v| *v /= n as f64);
    let hid = c.decoder_hidden;
    let z1 = linear(
        &pooled,
        p(lay.dec1_w, d * hid),
        p(lay.dec1_b, hid),
        1,
        d,
        hid,
    );
    let u: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
    let z2 = linear(
        &u,
        p(lay.dec2_w, hid * c.out_dim),
        p(lay.dec2_b, c.out_dim),
        1,
        hid,
        c.out_dim,
    );
    let probs: Vec<f64> = z2.iter().map(|&z| sigmoid(z)).collect();

    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        x: x.to_vec(),
        layers,
        lnf,
        pooled,
        z1,
        u,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Gradient of `Σ_k output_gradient[k] · probs[k]` with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    output_gradient: &[f64],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    backward_accumulate(params, cache, output_gradient, &mut grad)?;
    Ok(grad)
}

/// [`backward`], adding into an existing gradient buffer.
pub fn backward_accumulate(
    params: &ModelParams,
    cache: &ForwardCache,
    output_gradient: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache);
    }
    let c = &params.config;
    let lay = &params.layout;
    if output_gradient.len() != c.out_dim || grad.len() != params.len() {
        return Err(Error::InvalidArgument(
            "gradient buffer shape mismatch".into(),
        ));
    }
    let (n, d, hd, hid) = (c.seq_len, c.d_model, c.head_dim(), c.decoder_hidden);
    let p = |start: usize, len: usize| params.slice(start, len);
    // Splits the gradient buffer so two tensors can be borrowed mutably at once.
    fn pair(grad: &mut [f64], a: (usize, usize), b: (usize, usize)) -> (&mut [f64], &mut [f64]) {
        debug_assert!(a.0 + a.1 <= b.0);
        let (lo, hi) = grad.split_at_mut(b.0);
        (&mut lo[a.0..a.0 + a.1], &mut hi[..b.1])
    }

    let dz2: Vec<f64> = output_gradient
        .iter()
        .zip(&cache.probs)
        .map(|(g, pr)| g * pr * (1.0 - pr))
        .collect();
    let (dw, db) = pair(grad, (lay.dec2_w, hid * c.out_dim), (lay.dec2_b, c.out_dim));
    let du = linear_backward(
        &cache.u,
        p(lay.dec2_w, hid * c.out_dim),
        &dz2,
        1,
        hid,
        c.out_dim,
        dw,
        db,
        true,
    );
    let dz1: Vec<f64> = du
        .iter()
        .zip(&cache.z1)
        .map(|(g, &z)| g * gelu_grad(z))
        .collect();
    let (dw, db) = pair(grad, (lay.dec1_w, d * hid), (lay.dec1_b, hid));
    let dpooled = linear_backward(
        &cache.pooled,
        p(lay.dec1_w, d * hid),
        &dz1,
        1,
        d,
        hid,
        dw,
        db,
        true,
    );

    let mut dhf = vec![0.0; n * d];
    for r in 0..n {
        for j in 0..d {
            dhf[r * d + j] = dpooled[j] / n as f64;
        }
    }
    let (dg, db) = pair(grad, (lay.lnf_g, d), (lay.lnf_b, d));
    let mut dh = layer_norm_backward(&cache.lnf, p(lay.lnf_g, d), &dhf, n, d, dg, db);

    let scale = 1.0 / (hd as f64).sqrt();
    for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        // Feed-forward branch: h_out = h_mid + FF(LN2(h_mid)).
        let (dw, db) = pair(grad, (lo.ff2_w, c.d_ff * d), (lo.ff2_b, d));
        let df_act = linear_backward(
            &lc.f_act,
            p(lo.ff2_w, c.d_ff * d),
            &dh,
            n,
            c.d_ff,
            d,
            dw,
            db,
            true,
        );
        let df_pre: Vec<f64> = df_act
            .iter()
            .zip(&lc.f_pre)
            .map(|(g, &z)| g * gelu_grad(z))
            .collect();
        let (dw, db) = pair(grad, (lo.ff1_w, d * c.d_ff), (lo.ff1_b, c.d_ff));
        let dbn = linear_backward(
            &lc.b,
            p(lo.ff1_w, d * c.d_ff),
            &df_pre,
            n,
            d,
            c.d_ff,
            dw,
            db,
            true,
        );
        let (dg, db) = pair(grad, (lo.ln2_g, d), (lo.ln2_b, d));
        let dh_ln2 = layer_norm_backward(&lc.ln2, p(lo.ln2_g, d), &dbn, n, d, dg, db);
        for (a, b) in dh.iter_mut().zip(&dh_ln2) {
            *a += b;
        }

        // Attention branch: h_mid = h_in + Wo·Attn(LN1(h_in)).
        let (dw, db) = pair(grad, (lo.wo, d * d), (lo.bo, d));
        let dctx = linear_backward(&lc.ctx, p(lo.wo, d * d), &dh, n, d, d, dw, db, true);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dprob = vec![0.0; n];
        for head in 0..c.n_heads {
            let off = head * hd;
            for i in 0..n {
                let row = &lc.attn[(head * n + i) * n..(head * n + i + 1) * n];
                let dci = &dctx[i * d + off..i * d + off + hd];
                let mut dot = 0.0;
                for j in 0..n {
                    let vj = &lc.v[j * d + off..j * d + off + hd];
                    dprob[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += row[j] * dprob[j];
                    let dvj = &mut dv[j * d + off..j * d + off + hd];
                    for (g, &dc) in dvj.iter_mut().zip(dci) {
                        *g += row[j] * dc;
                    }
                }
                for j in 0..n {
                    let ds = row[j] * (dprob[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..hd {
                        dq[i * d + off + t] += ds * lc.k[j * d + off + t];
                        dk[j * d + off + t] += ds * lc.q[i * d + off + t];
                    }
                }
            }
        }
        let mut da = vec![0.0; n * d];
        for (w, b, dproj) in [
            (lo.wq, lo.bq, &dq),
            (lo.wk, lo.bk, &dk),
            (lo.wv, lo.bv, &dv),
        ] {
            let (dw, db) = pair(grad, (w, d * d), (b, d));
            let part = linear_backward(&lc.a, p(w, d * d), dproj, n, d, d, dw, db, true);
            for (x, y) in da.iter_mut().zip(&part) {
                *x += y;
            }
        }
        let (dg, db) = pair(grad, (lo.ln1_g, d), (lo.ln1_b, d));
        let dh_ln1 = layer_norm_backward(&lc.ln1, p(lo.ln1_g, d), &da, n, d, dg, db);
        for (a, b) in dh.iter_mut().zip(&dh_ln1) {
            *a += b;
        }
    }

    // Positional embedding and input projection.
    for (g, &v) in grad[lay.pos..lay.pos + n * d].iter_mut().zip(&dh) {
        *g += v;
    }
    let (dw, db) = pair(grad, (lay.in_w, c.in_features * d), (lay.in_b, d));
    linear_backward(
        &cache.x,
        p(lay.in_w, c.in_features * d),
        &dh,
        n,
        c.in_features,
        d,
        dw,
        db,
        false,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint file
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"MCSPCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Model parameters as stored on disk, with the fingerprint of the run
/// configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config_fingerprint: u64,
}

impl Checkpoint {
    /// Layout (all little-endian):
    ///
    /// ```text
    /// magic        8 bytes  "MCSPCKPT"
    /// version      u32      1
    /// config       8 × u32  seq_len, in_features, d_model, n_layers,
    ///                       n_heads, d_ff, out_dim, decoder_hidden
    /// fingerprint  u64      run-configuration fingerprint
    /// count        u64      number of parameters
    /// params       count × f64
    /// ```
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.params.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [
            c.seq_len,
            c.in_features,
            c.d_model,
            c.n_layers,
            c.n_heads,
            c.d_ff,
            c.out_dim,
            c.decoder_hidden,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.config_fingerprint.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.params.len() * 8);
        for v in &self.params.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut dims = [0usize; 8];
        for v in &mut dims {
            *v = read_u32(&mut r)? as usize;
        }
        let config = ModelConfig {
            seq_len: dims[0],
            in_features: dims[1],
            d_model: dims[2],
            n_layers: dims[3],
            n_heads: dims[4],
            d_ff: dims[5],
            out_dim: dims[6],
            decoder_hidden: dims[7],
        };
        config.validate()?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let config_fingerprint = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let mut params = ModelParams::zeros(&config)?;
        if count != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                params.len()
            )));
        }
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        for (v, chunk) in params.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !v.is_finite() {
                return Err(Error::NonFinite("checkpoint parameter".into()));
            }
        }
        Ok(Self {
            params,
            config_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_window(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..WINDOW_LEN * NUM_FEATURES)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect()
    }

    /// Parameters with every tensor, including positional embeddings and
    /// biases, randomized so no gradient path is trivially zero.
    fn dense_params(seed: u64) -> ModelParams {
        let mut p = init_params(&ModelConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for v in &mut p.data {
            *v += rng.random_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn param_count_closed_form_pieces() {
        let c = ModelConfig::default();
        let d = c.d_model;
        assert_eq!(c.in_features * d + d, 104);
        assert_eq!(c.seq_len * d, 320);
        let attention = 4 * (d * d + d);
        let ff = d * c.d_ff + c.d_ff + c.d_ff * d + d;
        assert_eq!(attention, 288);
        assert_eq!(ff, 552);
        assert_eq!(attention + 4 * d + ff, 872);
        assert_eq!(param_count(&c), 104 + 320 + 2 * 872 + 16 + 288 + 924);
        assert_eq!(param_count(&c), 3396);
        assert_eq!(ParamLayout::new(&c).total, param_count(&c));
    }

    #[test]
    fn param_count_within_budget() {
        let n = param_count(&ModelConfig::default());
        assert!((3000..=4000).contains(&n));
    }

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::default();
        assert_eq!(
            init_params(&c, 7).unwrap().data,
            init_params(&c, 7).unwrap().data
        );
        assert_ne!(
            init_params(&c, 7).unwrap().data,
            init_params(&c, 8).unwrap().data
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let c = ModelConfig {
            n_heads: 3,
            ..Default::default()
        };
        assert!(init_params(&c, 0).is_err());
        let c = ModelConfig {
            out_dim: 10,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = ModelParams::zeros(&ModelConfig::default()).unwrap();
        let (probs, _) = forward_raw(&p, &random_window(1)).unwrap();
        assert_eq!(probs.len(), NUM_MCS);
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn outputs_are_probabilities() {
        let p = init_params(&ModelConfig::default(), 3).unwrap();
        for s in 0..5 {
            let (probs, _) = forward_raw(&p, &random_window(s)).unwrap();
            assert_eq!(probs.len(), 28);
            assert!(probs.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let p = init_params(&ModelConfig::default(), 3).unwrap();
        assert!(matches!(
            forward_raw(&p, &[0.0; 12]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sensitive_to_single_cell() {
        let p = init_params(&ModelConfig::default(), 3).unwrap();
        let x = random_window(4);
        let mut y = x.clone();
        y[17 * NUM_FEATURES + 5] += 1e-3;
        let (a, _) = forward_raw(&p, &x).unwrap();
        let (b, _) = forward_raw(&p, &y).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let p = dense_params(5);
        let x = random_window(9);
        assert_eq!(
            forward_raw(&p, &x).unwrap().0,
            forward_raw(&p, &x).unwrap().0
        );
    }

    #[test]
    fn row_permutation_changes_output() {
        let p = dense_params(6);
        let x = random_window(10);
        let mut y = Vec::with_capacity(x.len());
        for r in (0..WINDOW_LEN).rev() {
            y.extend_from_slice(&x[r * NUM_FEATURES..(r + 1) * NUM_FEATURES]);
        }
        let (a, _) = forward_raw(&p, &x).unwrap();
        let (b, _) = forward_raw(&p, &y).unwrap();
        assert!(a.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-9));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradient() {
        let p = dense_params(2);
        let (_, cache) = forward_raw(&p, &random_window(3)).unwrap();
        let g = backward(&p, &cache, &[0.0; NUM_MCS]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_detected() {
        let mut p = dense_params(2);
        let (_, cache) = forward_raw(&p, &random_window(3)).unwrap();
        p.data[0] += 1.0;
        assert!(matches!(
            backward(&p, &cache, &[1.0; NUM_MCS]),
            Err(Error::StaleCache)
        ));
    }

    fn objective(p: &ModelParams, x: &[f64], weights: &[f64]) -> f64 {
        let (probs, _) = forward_raw(p, x).unwrap();
        probs.iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst = 0.0f64;
        for w in 0..5 {
            let mut p = dense_params(100 + w);
            let x = random_window(200 + w);
            let weights: Vec<f64> = (0..NUM_MCS).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, cache) = forward_raw(&p, &x).unwrap();
            let grad = backward(&p, &cache, &weights).unwrap();
            // Sample every tensor at least once, then random extras.
            let mut idx: Vec<usize> = p
                .layout
                .tensors
                .iter()
                .map(|&(s, len, _)| s + len / 2)
                .collect();
            idx.extend((0..20).map(|_| rng.random_range(0..p.len())));
            for i in idx {
                let h = 1e-4;
                let orig = p.data[i];
                p.data[i] = orig + h;
                let up = objective(&p, &x, &weights);
                p.data[i] = orig - h;
                let down = objective(&p, &x, &weights);
                p.data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let ck = Checkpoint {
            params: dense_params(1),
            config_fingerprint: 0xfeed,
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"MCSPCKPT");
        assert_eq!(buf.len(), 8 + 4 + 32 + 8 + 8 + 8 * ck.params.len());
        assert_eq!(Checkpoint::read(buf.as_slice()).unwrap(), ck);
        buf[0] = b'X';
        assert!(Checkpoint::read(buf.as_slice()).is_err());
    }

    #[test]
    fn decay_mask_covers_only_linear_weights() {
        let layout = ParamLayout::new(&ModelConfig::default());
        let mask = layout.decay_mask();
        let decayed = mask.iter().filter(|&&m| m).count();
        let weights: usize = layout
            .tensors
            .iter()
            .filter(|t| matches!(t.2, TensorKind::Weight { .. }))
            .map(|t| t.1)
            .sum();
        assert_eq!(decayed, weights);
        assert!(!mask[layout.pos]);
    }
}
