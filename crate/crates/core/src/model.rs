//! Chunk classifier with a swappable first layer and explicit backpropagation.
//!
//! Pipeline: layer-norm(input) -> first-layer convolution -> abs -> max-pool
//! -> layer-norm -> leaky-ReLU -> dense -> layer-norm -> leaky-ReLU -> dense
//! -> softmax. The first layer is either a sinc filterbank (2F learnable
//! cutoff scalars, gradients chained through the analytic tap derivatives) or
//! a standard learned tap matrix (F*L scalars). Everything else is shared, so
//! the two variants are interchangeable in forward/backward/train.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{self, FeatureMap, SignalChunk};
use crate::dsp::{default_band_min, FilterBank, SincParams};
use crate::error::{Error, Result};

/// Epsilon inside the layer-norm square root.
pub const NORM_EPS: f64 = 1e-6;

const MIN_PROB: f64 = 1e-300;

/// First-layer variant: sinc filterbank or free tap matrix.
#[derive(Debug, Clone)]
pub enum FirstLayer {
    Sinc(FilterBank),
    Learned {
        /// Row-major F x L tap matrix; every tap is learnable.
        taps: Vec<Vec<f64>>,
        sample_rate: f64,
    },
}

impl FirstLayer {
    /// Learned variant with Glorot-uniform taps, each filter treated as an
    /// L-input linear map (limit sqrt(6/(L+1))).
    pub fn glorot_learned(filters: usize, length: usize, sample_rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (length as f64 + 1.0)).sqrt();
        let taps = (0..filters)
            .map(|_| (0..length).map(|_| rng.random_range(-limit..limit)).collect())
            .collect();
        FirstLayer::Learned { taps, sample_rate }
    }

    pub fn filters(&self) -> usize {
        match self {
            FirstLayer::Sinc(bank) => bank.len(),
            FirstLayer::Learned { taps, .. } => taps.len(),
        }
    }

    pub fn filter_len(&self) -> usize {
        match self {
            FirstLayer::Sinc(bank) => bank.spec().length,
            FirstLayer::Learned { taps, .. } => taps[0].len(),
        }
    }

    pub fn sample_rate(&self) -> f64 {
        match self {
            FirstLayer::Sinc(bank) => bank.spec().sample_rate,
            FirstLayer::Learned { sample_rate, .. } => *sample_rate,
        }
    }

    pub fn taps(&self, i: usize) -> &[f64] {
        match self {
            FirstLayer::Sinc(bank) => bank.taps(i),
            FirstLayer::Learned { taps, .. } => &taps[i],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FirstLayer::Sinc(_) => "sinc",
            FirstLayer::Learned { .. } => "learned",
        }
    }
}

/// Learnable parameter count of the first layer: F*L for the learned variant,
/// 2F for the sinc variant (independent of L).
pub fn count_params(layer: &FirstLayer) -> usize {
    match layer {
        FirstLayer::Sinc(bank) => 2 * bank.len(),
        FirstLayer::Learned { taps, .. } => taps.len() * taps[0].len(),
    }
}

/// Scalar gain and bias of one layer-norm site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gain: f64,
    pub bias: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        NormParams { gain: 1.0, bias: 0.0 }
    }
}

/// All learnable tensors plus the fixed architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub first_layer: FirstLayer,
    /// Row-major hidden x flat.
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    /// Row-major classes x hidden.
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub norm_input: NormParams,
    pub norm_feature: NormParams,
    pub norm_hidden: NormParams,
    pub pool_width: usize,
    pub leaky_slope: f64,
    pub chunk_len: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelState {
    /// Builds a model around the given first layer. Dense and output weights
    /// are Glorot-uniform from the seed, so two variants constructed with the
    /// same seed share their classifier initialization exactly.
    pub fn new(
        first_layer: FirstLayer,
        chunk_len: usize,
        pool_width: usize,
        hidden: usize,
        classes: usize,
        leaky_slope: f64,
        seed: u64,
    ) -> Result<Self> {
        let length = first_layer.filter_len();
        if chunk_len < length {
            return Err(Error::Config(format!(
                "chunk of {chunk_len} samples shorter than filter length {length}"
            )));
        }
        if pool_width == 0 || hidden == 0 || classes < 2 {
            return Err(Error::Config(
                "need pool_width >= 1, hidden >= 1, classes >= 2".into(),
            ));
        }
        let steps = chunk_len - length + 1;
        let pooled = steps / pool_width;
        if pooled == 0 {
            return Err(Error::Config(format!(
                "pool width {pool_width} swallows all {steps} convolution outputs"
            )));
        }
        let flat = first_layer.filters() * pooled;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let dense_w = glorot(flat, hidden, hidden * flat);
        let out_w = glorot(hidden, classes, classes * hidden);
        Ok(ModelState {
            first_layer,
            dense_w,
            dense_b: vec![0.0; hidden],
            out_w,
            out_b: vec![0.0; classes],
            norm_input: NormParams::default(),
            norm_feature: NormParams::default(),
            norm_hidden: NormParams::default(),
            pool_width,
            leaky_slope,
            chunk_len,
            hidden,
            classes,
        })
    }

    /// Convolution output length T = chunk_len - L + 1.
    pub fn steps(&self) -> usize {
        self.chunk_len - self.first_layer.filter_len() + 1
    }

    /// Pooled length per filter (trailing partial window dropped).
    pub fn pooled(&self) -> usize {
        self.steps() / self.pool_width
    }

    pub fn flat(&self) -> usize {
        self.first_layer.filters() * self.pooled()
    }
}

/// Cached activations of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Normalized input before gain/bias.
    x_hat0: Vec<f64>,
    /// Input after layer norm; the convolution input.
    a1: Vec<f64>,
    /// Pre-rectification convolution outputs, F x T.
    conv: FeatureMap,
    /// Argmax time index of each pool window, F*P.
    pool_idx: Vec<usize>,
    x_hat1: Vec<f64>,
    inv_std1: f64,
    a2: Vec<f64>,
    z2: Vec<f64>,
    x_hat2: Vec<f64>,
    inv_std2: f64,
    a3: Vec<f64>,
    z3: Vec<f64>,
    post: Vec<f64>,
}

fn ensure_finite(layer: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in {layer}")))
    }
}

fn layer_norm_cached(values: &[f64], p: NormParams) -> (Vec<f64>, Vec<f64>, f64) {
    let (mean, var) = conv::mean_var(values);
    let inv_std = 1.0 / (var + NORM_EPS).sqrt();
    let x_hat: Vec<f64> = values.iter().map(|&v| (v - mean) * inv_std).collect();
    let out = x_hat.iter().map(|&x| x * p.gain + p.bias).collect();
    (out, x_hat, inv_std)
}

/// Gradient of a layer-norm site: returns (d_input, d_gain, d_bias).
fn layer_norm_backward(
    d_out: &[f64],
    x_hat: &[f64],
    inv_std: f64,
    gain: f64,
) -> (Vec<f64>, f64, f64) {
    let n = d_out.len() as f64;
    let d_gain: f64 = d_out.iter().zip(x_hat).map(|(d, x)| d * x).sum();
    let d_bias: f64 = d_out.iter().sum();
    let mean_dxh = gain * d_bias / n;
    let mean_dxh_xh = gain * d_gain / n;
    let d_in = d_out
        .iter()
        .zip(x_hat)
        .map(|(&d, &x)| inv_std * (d * gain - mean_dxh - x * mean_dxh_xh))
        .collect();
    (d_in, d_gain, d_bias)
}

fn leaky(values: &[f64], slope: f64) -> Vec<f64> {
    values
        .iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect()
}

fn leaky_backward(d_out: &[f64], pre: &[f64], slope: f64) -> Vec<f64> {
    d_out
        .iter()
        .zip(pre)
        .map(|(&d, &a)| if a > 0.0 { d } else { slope * d })
        .collect()
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the full pipeline on one chunk, returning class posteriors (sum 1,
/// entries in (0,1)) and the activation cache for [`backward`].
pub fn forward(state: &ModelState, chunk: &SignalChunk) -> Result<(Vec<f64>, ForwardCache)> {
    if chunk.samples.len() != state.chunk_len {
        return Err(Error::Shape(format!(
            "chunk of {} samples, model expects {}",
            chunk.samples.len(),
            state.chunk_len
        )));
    }
    let filters = state.first_layer.filters();
    let steps = state.steps();
    let pooled = state.pooled();
    let width = state.pool_width;

    let (a1, x_hat0, _) = layer_norm_cached(&chunk.samples, state.norm_input);
    ensure_finite("input_norm", &a1)?;

    let mut conv_map = FeatureMap::new(filters, steps);
    for f in 0..filters {
        let taps = state.first_layer.taps(f);
        let row = match &state.first_layer {
            FirstLayer::Sinc(_) => conv::convolve_symmetric(&a1, taps)?,
            FirstLayer::Learned { .. } => conv::convolve_valid(&a1, taps)?,
        };
        conv_map.row_mut(f).copy_from_slice(&row);
    }
    ensure_finite("first_conv", &conv_map.values)?;

    // abs + max-pool, recording the earliest maximal index of each window
    let mut pool_vals = vec![0.0; filters * pooled];
    let mut pool_idx = vec![0usize; filters * pooled];
    for f in 0..filters {
        let row = conv_map.row(f);
        for p in 0..pooled {
            let start = p * width;
            let mut best = start;
            let mut best_val = row[start].abs();
            for t in start + 1..start + width {
                let v = row[t].abs();
                if v > best_val {
                    best_val = v;
                    best = t;
                }
            }
            pool_vals[f * pooled + p] = best_val;
            pool_idx[f * pooled + p] = best;
        }
    }

    let (a2, x_hat1, inv_std1) = {
        let (out, x_hat, inv_std) = layer_norm_cached(&pool_vals, state.norm_feature);
        (out, x_hat, inv_std)
    };
    ensure_finite("feature_norm", &a2)?;
    let z2 = leaky(&a2, state.leaky_slope);

    let flat = state.flat();
    let mut h = state.dense_b.clone();
    for (j, hj) in h.iter_mut().enumerate() {
        let row = &state.dense_w[j * flat..(j + 1) * flat];
        *hj += dot(row, &z2);
    }
    ensure_finite("dense", &h)?;

    let (a3, x_hat2, inv_std2) = layer_norm_cached(&h, state.norm_hidden);
    let z3 = leaky(&a3, state.leaky_slope);

    let mut logits = state.out_b.clone();
    for (c, lc) in logits.iter_mut().enumerate() {
        let row = &state.out_w[c * state.hidden..(c + 1) * state.hidden];
        *lc += dot(row, &z3);
    }
    ensure_finite("logits", &logits)?;

    let max_logit = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max_logit).exp()).collect();
    let total: f64 = exps.iter().sum();
    let post: Vec<f64> = exps.iter().map(|&e| e / total).collect();
    ensure_finite("softmax", &post)?;

    let cache = ForwardCache {
        x_hat0,
        a1,
        conv: conv_map,
        pool_idx,
        x_hat1,
        inv_std1,
        a2,
        z2,
        x_hat2,
        inv_std2,
        a3,
        z3,
        post: post.clone(),
    };
    Ok((post, cache))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-filter cutoff gradient of the sinc variant, in (f1, band) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CutoffGrad {
    pub f1: f64,
    pub band: f64,
}

/// First-layer gradients, matching the [`FirstLayer`] variant.
#[derive(Debug, Clone)]
pub enum FirstLayerGrads {
    Sinc(Vec<CutoffGrad>),
    Learned(Vec<Vec<f64>>),
}

/// Cross-entropy gradients for every learnable scalar in the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub first_layer: FirstLayerGrads,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub norm_input: (f64, f64),
    pub norm_feature: (f64, f64),
    pub norm_hidden: (f64, f64),
}

impl Gradients {
    pub fn zeros(state: &ModelState) -> Self {
        let first_layer = match &state.first_layer {
            FirstLayer::Sinc(bank) => {
                FirstLayerGrads::Sinc(vec![CutoffGrad::default(); bank.len()])
            }
            FirstLayer::Learned { taps, .. } => {
                FirstLayerGrads::Learned(taps.iter().map(|r| vec![0.0; r.len()]).collect())
            }
        };
        Gradients {
            first_layer,
            dense_w: vec![0.0; state.dense_w.len()],
            dense_b: vec![0.0; state.dense_b.len()],
            out_w: vec![0.0; state.out_w.len()],
            out_b: vec![0.0; state.out_b.len()],
            norm_input: (0.0, 0.0),
            norm_feature: (0.0, 0.0),
            norm_hidden: (0.0, 0.0),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        match (&mut self.first_layer, &other.first_layer) {
            (FirstLayerGrads::Sinc(a), FirstLayerGrads::Sinc(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.f1 += y.f1;
                    x.band += y.band;
                }
            }
            (FirstLayerGrads::Learned(a), FirstLayerGrads::Learned(b)) => {
                for (ra, rb) in a.iter_mut().zip(b) {
                    for (x, y) in ra.iter_mut().zip(rb) {
                        *x += y;
                    }
                }
            }
            _ => unreachable!("mismatched first-layer gradient variants"),
        }
        add_slice(&mut self.dense_w, &other.dense_w);
        add_slice(&mut self.dense_b, &other.dense_b);
        add_slice(&mut self.out_w, &other.out_w);
        add_slice(&mut self.out_b, &other.out_b);
        self.norm_input.0 += other.norm_input.0;
        self.norm_input.1 += other.norm_input.1;
        self.norm_feature.0 += other.norm_feature.0;
        self.norm_feature.1 += other.norm_feature.1;
        self.norm_hidden.0 += other.norm_hidden.0;
        self.norm_hidden.1 += other.norm_hidden.1;
    }

    pub fn scale(&mut self, factor: f64) {
        match &mut self.first_layer {
            FirstLayerGrads::Sinc(v) => {
                for g in v {
                    g.f1 *= factor;
                    g.band *= factor;
                }
            }
            FirstLayerGrads::Learned(rows) => {
                for r in rows {
                    for x in r {
                        *x *= factor;
                    }
                }
            }
        }
        for x in self
            .dense_w
            .iter_mut()
            .chain(&mut self.dense_b)
            .chain(&mut self.out_w)
            .chain(&mut self.out_b)
        {
            *x *= factor;
        }
        for t in [
            &mut self.norm_input,
            &mut self.norm_feature,
            &mut self.norm_hidden,
        ] {
            t.0 *= factor;
            t.1 *= factor;
        }
    }

    fn is_finite(&self) -> bool {
        let fl = match &self.first_layer {
            FirstLayerGrads::Sinc(v) => v.iter().all(|g| g.f1.is_finite() && g.band.is_finite()),
            FirstLayerGrads::Learned(rows) => {
                rows.iter().all(|r| r.iter().all(|x| x.is_finite()))
            }
        };
        fl && self
            .dense_w
            .iter()
            .chain(&self.dense_b)
            .chain(&self.out_w)
            .chain(&self.out_b)
            .all(|x| x.is_finite())
            && [self.norm_input, self.norm_feature, self.norm_hidden]
                .iter()
                .all(|t| t.0.is_finite() && t.1.is_finite())
    }
}

fn add_slice(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Backpropagates the cross-entropy loss for `target` through the cached
/// activations. For the sinc variant the tap gradients are contracted with
/// the analytic tap derivatives: `dL/df1 = sum_n dL/dtap[n] * dtap[n]/df1`,
/// likewise for the bandwidth (`f2 = f1 + band` chains both edges into f1).
pub fn backward(state: &ModelState, cache: &ForwardCache, target: usize) -> Result<Gradients> {
    if target >= state.classes {
        return Err(Error::Label(format!(
            "target {target} out of range for {} classes",
            state.classes
        )));
    }
    let filters = state.first_layer.filters();
    let length = state.first_layer.filter_len();
    let steps = state.steps();
    let pooled = state.pooled();
    let flat = state.flat();
    let hidden = state.hidden;

    // softmax + cross-entropy: d logits = posterior - onehot
    let mut d_logits = cache.post.clone();
    d_logits[target] -= 1.0;

    let mut out_w_grad = vec![0.0; state.out_w.len()];
    let mut dz3 = vec![0.0; hidden];
    for c in 0..state.classes {
        let d = d_logits[c];
        let row = &state.out_w[c * hidden..(c + 1) * hidden];
        let grad_row = &mut out_w_grad[c * hidden..(c + 1) * hidden];
        for j in 0..hidden {
            grad_row[j] = d * cache.z3[j];
            dz3[j] += row[j] * d;
        }
    }
    let out_b_grad = d_logits;

    let da3 = leaky_backward(&dz3, &cache.a3, state.leaky_slope);
    let (dh, dg2, db2) = layer_norm_backward(&da3, &cache.x_hat2, cache.inv_std2, state.norm_hidden.gain);

    let mut dense_w_grad = vec![0.0; state.dense_w.len()];
    let mut dz2 = vec![0.0; flat];
    for j in 0..hidden {
        let d = dh[j];
        let row = &state.dense_w[j * flat..(j + 1) * flat];
        let grad_row = &mut dense_w_grad[j * flat..(j + 1) * flat];
        for i in 0..flat {
            grad_row[i] = d * cache.z2[i];
            dz2[i] += row[i] * d;
        }
    }
    let dense_b_grad = dh;

    let da2 = leaky_backward(&dz2, &cache.a2, state.leaky_slope);
    let (dv, dg1, db1) = layer_norm_backward(&da2, &cache.x_hat1, cache.inv_std1, state.norm_feature.gain);

    // unpool (gradient routed to the earliest maximal index) + abs backward
    let mut d_conv = FeatureMap::new(filters, steps);
    for f in 0..filters {
        let conv_row = cache.conv.row(f);
        let d_row = d_conv.row_mut(f);
        for p in 0..pooled {
            let idx = cache.pool_idx[f * pooled + p];
            let sign = if conv_row[idx] > 0.0 {
                1.0
            } else if conv_row[idx] < 0.0 {
                -1.0
            } else {
                0.0
            };
            d_row[idx] += dv[f * pooled + p] * sign;
        }
    }

    // convolution backward: tap gradients plus gradient into the normalized
    // input. d_conv is sparse (at most one nonzero per pool window), so both
    // loops skip zero entries.
    let mut da1 = vec![0.0; state.chunk_len];
    let mut tap_grads: Vec<Vec<f64>> = vec![vec![0.0; length]; filters];
    for f in 0..filters {
        let d_row = d_conv.row(f);
        let taps = state.first_layer.taps(f);
        let tg = &mut tap_grads[f];
        for n in 0..steps {
            let d = d_row[n];
            if d == 0.0 {
                continue;
            }
            // y[n] = sum_l a1[n+l] * taps[L-1-l]
            for l in 0..length {
                tg[length - 1 - l] += d * cache.a1[n + l];
                da1[n + l] += d * taps[length - 1 - l];
            }
        }
    }

    let dg0: f64 = da1.iter().zip(&cache.x_hat0).map(|(d, x)| d * x).sum();
    let db0: f64 = da1.iter().sum();

    let first_layer = match &state.first_layer {
        FirstLayer::Sinc(bank) => {
            let mut grads = Vec::with_capacity(filters);
            for f in 0..filters {
                let d1 = bank.dtaps_df1(f);
                let d2 = bank.dtaps_df2(f);
                let tg = &tap_grads[f];
                let mut g_f1 = 0.0;
                let mut g_band = 0.0;
                for k in 0..length {
                    g_f1 += tg[k] * (d1[k] + d2[k]);
                    g_band += tg[k] * d2[k];
                }
                grads.push(CutoffGrad { f1: g_f1, band: g_band });
            }
            FirstLayerGrads::Sinc(grads)
        }
        FirstLayer::Learned { .. } => FirstLayerGrads::Learned(tap_grads),
    };

    Ok(Gradients {
        first_layer,
        dense_w: dense_w_grad,
        dense_b: dense_b_grad,
        out_w: out_w_grad,
        out_b: out_b_grad,
        norm_input: (dg0, db0),
        norm_feature: (dg1, db1),
        norm_hidden: (dg2, db2),
    })
}

/// RMSprop accumulators and hyperparameters.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    acc: Gradients,
}

impl OptState {
    pub fn new(state: &ModelState, lr: f64, alpha: f64, epsilon: f64, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(OptState {
            lr,
            alpha,
            epsilon,
            batch_size,
            acc: Gradients::zeros(state),
        })
    }

    /// Squared-gradient accumulators, all nonnegative.
    pub fn accumulators(&self) -> &Gradients {
        &self.acc
    }
}

fn rmsprop_scalar(param: &mut f64, grad: f64, acc: &mut f64, lr: f64, alpha: f64, eps: f64) {
    *acc = alpha * *acc + (1.0 - alpha) * grad * grad;
    *param -= lr * grad / (*acc + eps).sqrt();
}

fn rmsprop_slice(params: &mut [f64], grads: &[f64], acc: &mut [f64], lr: f64, alpha: f64, eps: f64) {
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
        rmsprop_scalar(p, g, a, lr, alpha, eps);
    }
}

/// One RMSprop update: `acc = alpha*acc + (1-alpha)*g^2`,
/// `param -= lr * g / sqrt(acc + eps)`. The sinc variant then projects its
/// cutoffs back into the admissible set and rebuilds the filterbank.
pub fn rmsprop_step(state: &mut ModelState, opt: &mut OptState, grads: &Gradients) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient in update".into()));
    }
    let (lr, alpha, eps) = (opt.lr, opt.alpha, opt.epsilon);
    match (&mut state.first_layer, &grads.first_layer, &mut opt.acc.first_layer) {
        (FirstLayer::Sinc(bank), FirstLayerGrads::Sinc(g), FirstLayerGrads::Sinc(acc)) => {
            let spec = *bank.spec();
            let band_min = default_band_min(spec.sample_rate);
            let mut new_params = Vec::with_capacity(bank.len());
            for (i, p) in bank.params().iter().enumerate() {
                let mut f1 = p.f1();
                let mut band = p.band();
                rmsprop_scalar(&mut f1, g[i].f1, &mut acc[i].f1, lr, alpha, eps);
                rmsprop_scalar(&mut band, g[i].band, &mut acc[i].band, lr, alpha, eps);
                new_params.push(SincParams::projected(f1, band, band_min));
            }
            *bank = FilterBank::new(new_params, spec)?;
        }
        (FirstLayer::Learned { taps, .. }, FirstLayerGrads::Learned(g), FirstLayerGrads::Learned(acc)) => {
            for ((row, grow), arow) in taps.iter_mut().zip(g).zip(acc.iter_mut()) {
                rmsprop_slice(row, grow, arow, lr, alpha, eps);
            }
        }
        _ => {
            return Err(Error::Shape(
                "gradient variant does not match first-layer variant".into(),
            ))
        }
    }
    rmsprop_slice(&mut state.dense_w, &grads.dense_w, &mut opt.acc.dense_w, lr, alpha, eps);
    rmsprop_slice(&mut state.dense_b, &grads.dense_b, &mut opt.acc.dense_b, lr, alpha, eps);
    rmsprop_slice(&mut state.out_w, &grads.out_w, &mut opt.acc.out_w, lr, alpha, eps);
    rmsprop_slice(&mut state.out_b, &grads.out_b, &mut opt.acc.out_b, lr, alpha, eps);
    for (p, g, a) in [
        (&mut state.norm_input, grads.norm_input, &mut opt.acc.norm_input),
        (&mut state.norm_feature, grads.norm_feature, &mut opt.acc.norm_feature),
        (&mut state.norm_hidden, grads.norm_hidden, &mut opt.acc.norm_hidden),
    ] {
        rmsprop_scalar(&mut p.gain, g.0, &mut a.0, lr, alpha, eps);
        rmsprop_scalar(&mut p.bias, g.1, &mut a.1, lr, alpha, eps);
    }
    ensure_state_finite(state)
}

fn ensure_state_finite(state: &ModelState) -> Result<()> {
    let fl_ok = match &state.first_layer {
        FirstLayer::Sinc(bank) => bank
            .params()
            .iter()
            .all(|p| p.f1().is_finite() && p.band().is_finite()),
        FirstLayer::Learned { taps, .. } => {
            taps.iter().all(|r| r.iter().all(|x| x.is_finite()))
        }
    };
    let rest_ok = state
        .dense_w
        .iter()
        .chain(&state.dense_b)
        .chain(&state.out_w)
        .chain(&state.out_b)
        .all(|x| x.is_finite())
        && [state.norm_input, state.norm_feature, state.norm_hidden]
            .iter()
            .all(|p| p.gain.is_finite() && p.bias.is_finite());
    if fl_ok && rest_ok {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite parameter after update".into()))
    }
}

/// Loss and prediction of one chunk without keeping the cache.
pub fn chunk_loss(state: &ModelState, chunk: &SignalChunk) -> Result<(f64, usize)> {
    let (post, _) = forward(state, chunk)?;
    let loss = -post[chunk.label].max(MIN_PROB).ln();
    Ok((loss, argmax(&post)))
}

/// Mean loss and misclassification rate over a chunk set.
pub fn evaluate(state: &ModelState, chunks: &[SignalChunk]) -> Result<(f64, f64)> {
    if chunks.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let results: Vec<(f64, usize)> = chunks
        .par_iter()
        .map(|c| chunk_loss(state, c))
        .collect::<Result<Vec<_>>>()?;
    let mut loss_sum = 0.0;
    let mut wrong = 0usize;
    for ((loss, pred), chunk) in results.iter().zip(chunks) {
        loss_sum += loss;
        if *pred != chunk.label {
            wrong += 1;
        }
    }
    Ok((
        loss_sum / chunks.len() as f64,
        wrong as f64 / chunks.len() as f64,
    ))
}

/// One row of the per-epoch training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub mean_loss: f64,
    pub chunk_error: f64,
}

/// Minibatch training driver: shuffles chunks per epoch with a seeded RNG,
/// averages gradients over each minibatch, applies RMSprop, and emits one
/// trace record per epoch. Deterministic given the seed: member gradients may
/// be computed in parallel but are reduced in index order.
pub fn train(
    state: ModelState,
    opt: OptState,
    chunks: &[SignalChunk],
    epochs: usize,
    seed: u64,
) -> Result<(ModelState, Vec<EpochTrace>)> {
    train_with(state, opt, chunks, epochs, seed, |_, _| Ok(()), |_, _, _| Ok(()))
}

/// [`train`] with observation hooks: `on_update(updates_seen, state)` fires
/// once before the first update (checkpoint 0) and after every optimizer
/// step; `on_epoch(epoch, state, trace)` fires after each epoch.
pub fn train_with<U, E>(
    mut state: ModelState,
    mut opt: OptState,
    chunks: &[SignalChunk],
    epochs: usize,
    seed: u64,
    mut on_update: U,
    mut on_epoch: E,
) -> Result<(ModelState, Vec<EpochTrace>)>
where
    U: FnMut(u64, &ModelState) -> Result<()>,
    E: FnMut(usize, &ModelState, &EpochTrace) -> Result<()>,
{
    if chunks.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for c in chunks {
        if c.samples.len() != state.chunk_len {
            return Err(Error::Shape(format!(
                "chunk '{}' has {} samples, model expects {}",
                c.source_id,
                c.samples.len(),
                state.chunk_len
            )));
        }
        if c.label >= state.classes {
            return Err(Error::Label(format!(
                "chunk '{}' labeled {} with only {} classes",
                c.source_id, c.label, state.classes
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut traces = Vec::with_capacity(epochs);
    let mut updates = 0u64;
    on_update(0, &state)?;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut wrong = 0usize;
        for (batch_no, batch) in order.chunks(opt.batch_size).enumerate() {
            let members: Vec<(Gradients, f64, bool)> = batch
                .par_iter()
                .map(|&i| {
                    let chunk = &chunks[i];
                    let (post, cache) = forward(&state, chunk)?;
                    let grads = backward(&state, &cache, chunk.label)?;
                    let loss = -post[chunk.label].max(MIN_PROB).ln();
                    Ok((grads, loss, argmax(&post) != chunk.label))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| train_context(e, epoch, batch_no))?;
            let mut total = Gradients::zeros(&state);
            for (g, loss, miss) in &members {
                total.add(g);
                loss_sum += loss;
                wrong += *miss as usize;
            }
            total.scale(1.0 / batch.len() as f64);
            rmsprop_step(&mut state, &mut opt, &total)
                .map_err(|e| train_context(e, epoch, batch_no))?;
            updates += 1;
            on_update(updates, &state)?;
        }
        let trace = EpochTrace {
            epoch,
            mean_loss: loss_sum / chunks.len() as f64,
            chunk_error: wrong as f64 / chunks.len() as f64,
        };
        on_epoch(epoch, &state, &trace)?;
        traces.push(trace);
    }
    Ok((state, traces))
}

fn train_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{FilterSpec, Window};

    fn test_chunk(len: usize, seed: u64, label: usize) -> SignalChunk {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SignalChunk {
            samples: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            sample_rate: 16_000.0,
            source_id: format!("test-{seed}"),
            label,
        }
    }

    fn tiny_sinc_bank() -> FilterBank {
        let spec = FilterSpec::new(17, Window::Hamming, 16_000.0).unwrap();
        let edges = [(0.05, 0.12), (0.12, 0.22), (0.22, 0.33), (0.33, 0.45)];
        let params = edges
            .iter()
            .map(|&(a, b)| SincParams::from_edges(a, b).unwrap())
            .collect();
        FilterBank::new(params, spec).unwrap()
    }

    fn tiny_model(layer: FirstLayer) -> ModelState {
        ModelState::new(layer, 64, 4, 16, 2, 0.2, 99).unwrap()
    }

    #[test]
    fn count_params_matches_claims() {
        let learned = FirstLayer::glorot_learned(80, 100, 16_000.0, 1);
        assert_eq!(count_params(&learned), 8_000);

        let spec = FilterSpec::new(251, Window::Hamming, 16_000.0).unwrap();
        let sinc = FirstLayer::Sinc(FilterBank::mel(80, spec, 30.0).unwrap());
        assert_eq!(count_params(&sinc), 160);

        // doubling L leaves the sinc count unchanged
        for length in [101, 201] {
            let spec = FilterSpec::new(length, Window::Hamming, 16_000.0).unwrap();
            let bank = FirstLayer::Sinc(FilterBank::mel(80, spec, 30.0).unwrap());
            assert_eq!(count_params(&bank), 160);
        }
    }

    #[test]
    fn posteriors_are_normalized() {
        for layer in [
            FirstLayer::Sinc(tiny_sinc_bank()),
            FirstLayer::glorot_learned(4, 17, 16_000.0, 7),
        ] {
            let state = tiny_model(layer);
            let (post, _) = forward(&state, &test_chunk(64, 1, 0)).unwrap();
            let sum: f64 = post.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(post.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn zero_output_weights_give_uniform_posteriors() {
        let mut state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        state.out_w.iter_mut().for_each(|w| *w = 0.0);
        state.out_b.iter_mut().for_each(|b| *b = 0.0);
        let (post, _) = forward(&state, &test_chunk(64, 2, 0)).unwrap();
        for &p in &post {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let chunk = test_chunk(64, 3, 1);
        let (a, _) = forward(&state, &chunk).unwrap();
        let (b, _) = forward(&state, &chunk).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_chunk_length() {
        let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        assert!(forward(&state, &test_chunk(63, 1, 0)).is_err());
    }

    #[test]
    fn softmax_cross_entropy_identity() {
        // uniform posteriors with a one-hot target: d logits = 1/C - onehot
        let mut state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        state.out_w.iter_mut().for_each(|w| *w = 0.0);
        state.out_b.iter_mut().for_each(|b| *b = 0.0);
        let chunk = test_chunk(64, 4, 1);
        let (_, cache) = forward(&state, &chunk).unwrap();
        let grads = backward(&state, &cache, 1).unwrap();
        assert!((grads.out_b[0] - 0.5).abs() < 1e-12);
        assert!((grads.out_b[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_tap_gradients() {
        let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let chunk = SignalChunk {
            samples: vec![0.0; 64],
            sample_rate: 16_000.0,
            source_id: "silence".into(),
            label: 0,
        };
        let (_, cache) = forward(&state, &chunk).unwrap();
        let grads = backward(&state, &cache, 0).unwrap();
        match grads.first_layer {
            FirstLayerGrads::Sinc(g) => {
                for cg in g {
                    assert_eq!(cg.f1, 0.0);
                    assert_eq!(cg.band, 0.0);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn backward_rejects_bad_target() {
        let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let (_, cache) = forward(&state, &test_chunk(64, 5, 0)).unwrap();
        assert!(backward(&state, &cache, 2).is_err());
    }

    #[test]
    fn rmsprop_single_scalar_update() {
        let mut state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let mut opt = OptState::new(&state, 0.001, 0.95, 1e-7, 128).unwrap();
        let before = state.dense_b[0];
        let mut grads = Gradients::zeros(&state);
        grads.dense_b[0] = 1.0;
        rmsprop_step(&mut state, &mut opt, &grads).unwrap();
        let acc = opt.accumulators().dense_b[0];
        assert!((acc - 0.05).abs() < 1e-12);
        let delta = state.dense_b[0] - before;
        assert!((delta + 0.001 / (0.05f64 + 1e-7).sqrt()).abs() < 1e-9);
        assert!((delta + 0.004472).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_zero_gradient_keeps_parameters() {
        let mut state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let mut opt = OptState::new(&state, 0.001, 0.95, 1e-7, 128).unwrap();
        let dense_before = state.dense_w.clone();
        let params_before: Vec<_> = match &state.first_layer {
            FirstLayer::Sinc(bank) => bank.params().to_vec(),
            _ => unreachable!(),
        };
        let grads = Gradients::zeros(&state);
        rmsprop_step(&mut state, &mut opt, &grads).unwrap();
        assert_eq!(state.dense_w, dense_before);
        match &state.first_layer {
            FirstLayer::Sinc(bank) => assert_eq!(bank.params(), &params_before[..]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rmsprop_projection_keeps_band_above_minimum() {
        let mut state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let mut opt = OptState::new(&state, 0.001, 0.95, 1e-7, 128).unwrap();
        let mut grads = Gradients::zeros(&state);
        // huge positive band gradient drives the raw band strongly negative
        if let FirstLayerGrads::Sinc(g) = &mut grads.first_layer {
            g[0].band = 1e9;
        }
        for _ in 0..50 {
            rmsprop_step(&mut state, &mut opt, &grads).unwrap();
        }
        let band_min = default_band_min(16_000.0);
        match &state.first_layer {
            FirstLayer::Sinc(bank) => {
                for p in bank.params() {
                    assert!(p.band() >= band_min);
                    assert!(p.f1() >= 0.0 && p.f2() <= 0.5);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradients() {
        let mut state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let mut opt = OptState::new(&state, 0.001, 0.95, 1e-7, 128).unwrap();
        let mut grads = Gradients::zeros(&state);
        grads.dense_w[0] = f64::NAN;
        assert!(matches!(
            rmsprop_step(&mut state, &mut opt, &grads),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn training_zero_epochs_is_identity() {
        let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let opt = OptState::new(&state, 0.001, 0.95, 1e-7, 4).unwrap();
        let chunks: Vec<_> = (0..8).map(|i| test_chunk(64, i, (i % 2) as usize)).collect();
        let dense_before = state.dense_w.clone();
        let (after, traces) = train(state, opt, &chunks, 0, 7).unwrap();
        assert!(traces.is_empty());
        assert_eq!(after.dense_w, dense_before);
    }

    #[test]
    fn training_is_deterministic() {
        let chunks: Vec<_> = (0..12).map(|i| test_chunk(64, i, (i % 2) as usize)).collect();
        let run = || {
            let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
            let opt = OptState::new(&state, 0.001, 0.95, 1e-7, 4).unwrap();
            train(state, opt, &chunks, 3, 42).unwrap()
        };
        let (state_a, trace_a) = run();
        let (state_b, trace_b) = run();
        assert_eq!(trace_a, trace_b);
        assert_eq!(state_a.dense_w, state_b.dense_w);
        match (&state_a.first_layer, &state_b.first_layer) {
            (FirstLayer::Sinc(a), FirstLayer::Sinc(b)) => assert_eq!(a.params(), b.params()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn training_rejects_empty_and_mislabeled_data() {
        let state = tiny_model(FirstLayer::Sinc(tiny_sinc_bank()));
        let opt = OptState::new(&state, 0.001, 0.95, 1e-7, 4).unwrap();
        assert!(train(state.clone(), opt.clone(), &[], 1, 0).is_err());
        let bad = vec![test_chunk(64, 0, 5)];
        assert!(train(state, opt, &bad, 1, 0).is_err());
    }

    #[test]
    fn variants_run_through_the_same_harness() {
        // interface transparency: identical driver code for both variants
        let chunks: Vec<_> = (0..8).map(|i| test_chunk(64, i, (i % 2) as usize)).collect();
        for layer in [
            FirstLayer::Sinc(tiny_sinc_bank()),
            FirstLayer::glorot_learned(4, 17, 16_000.0, 7),
        ] {
            let state = tiny_model(layer);
            let opt = OptState::new(&state, 0.001, 0.95, 1e-7, 4).unwrap();
            let (after, traces) = train(state, opt, &chunks, 2, 11).unwrap();
            assert_eq!(traces.len(), 2);
            let (loss, err) = evaluate(&after, &chunks).unwrap();
            assert!(loss.is_finite() && (0.0..=1.0).contains(&err));
        }
    }
}
