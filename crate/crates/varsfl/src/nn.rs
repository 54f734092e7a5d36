//! From-scratch dense neural network: ReLU hidden layers with inverted
//! dropout, softmax cross-entropy output, backpropagation, and Adam.
//!
//! All arithmetic is `f64` so that desk-scale runs are deterministic and
//! gradients can be checked against finite differences tightly. Parameters
//! live in one flat buffer in a canonical order (for each layer: the
//! row-major `d_k x d_{k-1}` weight matrix, then the bias vector), which
//! makes weighted averaging across models a single pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;

/// Layer sizes and dropout placement for the MLP family this crate trains.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    layer_dims: Vec<usize>,
    dropout_rate: f64,
    dropout_layers: Vec<usize>,
}

impl ArchitectureSpec {
    /// `layer_dims` runs input first, output last. `dropout_layers` holds
    /// 1-based hidden-layer indices after which dropout applies.
    pub fn new(layer_dims: Vec<usize>, dropout_rate: f64, dropout_layers: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("architecture needs at least input and output dims"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid("all layer dims must be >= 1"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0,1), got {dropout_rate}"
            )));
        }
        let hidden = layer_dims.len() - 2;
        if dropout_layers.iter().any(|&k| k == 0 || k > hidden) {
            return Err(Error::invalid(format!(
                "dropout layer index out of range 1..={hidden}"
            )));
        }
        let mut dropout_layers = dropout_layers;
        dropout_layers.sort_unstable();
        dropout_layers.dedup();
        Ok(Self {
            layer_dims,
            dropout_rate,
            dropout_layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Number of weight layers (hidden + output).
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn dropout_layers(&self) -> &[usize] {
        &self.dropout_layers
    }

    fn has_dropout_after(&self, hidden_layer: usize) -> bool {
        self.dropout_rate > 0.0 && self.dropout_layers.contains(&hidden_layer)
    }

    /// Trainable scalar count per layer: `(d_{k-1} + 1) * d_k`.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        (1..self.layer_dims.len())
            .map(|k| (self.layer_dims[k - 1] + 1) * self.layer_dims[k])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    /// Multiply-accumulate operations for one forward pass of one sample.
    pub fn forward_macs(&self) -> u64 {
        (1..self.layer_dims.len())
            .map(|k| (self.layer_dims[k - 1] * self.layer_dims[k]) as u64)
            .sum()
    }
}

/// Flat parameter store plus the shape metadata needed to slice it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ArchitectureSpec,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        Self {
            spec: spec.clone(),
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        let dims = &self.spec.layer_dims;
        (1..layer).map(|k| (dims[k - 1] + 1) * dims[k]).sum()
    }

    /// Weight and bias slices of 1-based layer `k`.
    pub fn layer(&self, k: usize) -> (&[f64], &[f64]) {
        let dims = &self.spec.layer_dims;
        let (din, dout) = (dims[k - 1], dims[k]);
        let off = self.layer_offset(k);
        let w = &self.values[off..off + din * dout];
        let b = &self.values[off + din * dout..off + din * dout + dout];
        (w, b)
    }

    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let dims = &self.spec.layer_dims;
        let (din, dout) = (dims[k - 1], dims[k]);
        let off = self.layer_offset(k);
        let (w, rest) = self.values[off..off + (din + 1) * dout].split_at_mut(din * dout);
        (w, rest)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Seeded scaled-uniform initialization: weights drawn from
/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_params(spec: &ArchitectureSpec, seed: u64) -> ModelParams {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(spec);
    for k in 1..=spec.num_layers() {
        let (din, dout) = (spec.layer_dims[k - 1], spec.layer_dims[k]);
        let bound = (6.0 / (din + dout) as f64).sqrt();
        let (w, _b) = params.layer_mut(k);
        for v in w.iter_mut() {
            *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
        }
    }
    params
}

/// One mini-batch: row-major features and class-index labels.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "batch features len {} != {} rows x {} dims",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("batch contains non-finite features"));
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Adam moment accumulators, shaped like the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Conventional constants: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(param_count: usize) -> Self {
        Self::with_constants(param_count, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(param_count: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Whether a forward pass applies dropout (training) or not (inference).
/// Training carries the seeded stream the masks are drawn from.
pub enum ForwardMode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

/// Cached activations from one forward pass, enough to backpropagate.
pub struct ForwardCache {
    /// Logits of the output layer, `n x C`.
    logits: Vec<f64>,
    /// Post-ReLU, pre-dropout activation of each hidden layer, `n x d_k`.
    relu_out: Vec<Vec<f64>>,
    /// Post-dropout activation (input to the next layer); equals `relu_out`
    /// entry when the layer has no dropout.
    layer_inputs: Vec<Vec<f64>>,
    /// Per-unit dropout scale (0 dropped, `1/(1-p)` kept); `None` when the
    /// layer has no dropout.
    drop_scale: Vec<Option<Vec<f64>>>,
    rows: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators so the reduction does not serialize on one add chain.
    let chunks = a.len() / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < chunks {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < a.len() {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// `out[r][o] = b[o] + dot(x[r], w[o])` for row-major `w` of shape `dout x din`.
fn affine(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64], dout: usize, out: &mut [f64]) {
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        let or = &mut out[r * dout..(r + 1) * dout];
        for (o, slot) in or.iter_mut().enumerate() {
            *slot = b[o] + dot(xr, &w[o * din..(o + 1) * din]);
        }
    }
}

fn run_forward(params: &ModelParams, feats: &[f64], n: usize, mode: &mut ForwardMode) -> ForwardCache {
    let spec = params.spec();
    let dims = spec.layer_dims();
    let num_layers = spec.num_layers();
    let p = spec.dropout_rate();

    let mut relu_out = Vec::with_capacity(num_layers - 1);
    let mut layer_inputs = Vec::with_capacity(num_layers - 1);
    let mut drop_scale = Vec::with_capacity(num_layers - 1);

    let mut cur: &[f64] = feats;
    for k in 1..num_layers {
        let (din, dout) = (dims[k - 1], dims[k]);
        let (w, b) = params.layer(k);
        let mut act = vec![0.0; n * dout];
        affine(cur, n, din, w, b, dout, &mut act);
        for v in act.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        relu_out.push(act.clone());
        let scale = match mode {
            ForwardMode::Train { rng } if spec.has_dropout_after(k) => {
                let keep_scale = 1.0 / (1.0 - p);
                let mut scale = vec![0.0; n * dout];
                for (s, v) in scale.iter_mut().zip(act.iter_mut()) {
                    *s = if rng.random::<f64>() < p { 0.0 } else { keep_scale };
                    *v *= *s;
                }
                Some(scale)
            }
            _ => None,
        };
        drop_scale.push(scale);
        layer_inputs.push(act);
        cur = layer_inputs.last().unwrap();
    }

    let (din, dout) = (dims[num_layers - 1], dims[num_layers]);
    let (w, b) = params.layer(num_layers);
    let mut logits = vec![0.0; n * dout];
    affine(cur, n, din, w, b, dout, &mut logits);

    ForwardCache {
        logits,
        relu_out,
        layer_inputs,
        drop_scale,
        rows: n,
    }
}

/// Forward pass producing per-row class probabilities plus the activation
/// cache for backpropagation. Rows of `probs` sum to 1; in `Eval` mode the
/// output is a pure function of `(params, batch)`.
pub fn forward(
    params: &ModelParams,
    batch: &Batch,
    mut mode: ForwardMode,
) -> Result<(Vec<f64>, ForwardCache)> {
    if batch.dim() != params.spec().input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch feature width {} != model input dim {}",
            batch.dim(),
            params.spec().input_dim()
        )));
    }
    let cache = run_forward(params, batch.features(), batch.len(), &mut mode);
    let c = params.spec().output_dim();
    let mut probs = cache.logits.clone();
    for r in 0..batch.len() {
        softmax_row(&mut probs[r * c..(r + 1) * c]);
    }
    Ok((probs, cache))
}

fn softmax_row(row: &mut [f64]) {
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

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy loss and parameter gradients for one training batch.
/// Dropout masks are drawn from `rng` and the gradient flows through the
/// same masks.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ModelParams)> {
    let (losses, grads) = loss_and_grads_detailed(params, batch, rng)?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((mean, grads))
}

/// Like [`loss_and_grads`] but returns per-sample losses (the local-training
/// loop feeds these into the selection policies that track loss statistics).
pub(crate) fn loss_and_grads_detailed(
    params: &ModelParams,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.dim() != params.spec().input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch feature width {} != model input dim {}",
            batch.dim(),
            params.spec().input_dim()
        )));
    }
    let c = params.spec().output_dim();
    if let Some(&bad) = batch.labels().iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range 0..{c}")));
    }

    let mut mode = ForwardMode::Train { rng };
    let cache = run_forward(params, batch.features(), batch.len(), &mut mode);
    let (losses, grads) = backward(params, batch, &cache);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Divergence {
            client: None,
            round: None,
        });
    }
    Ok((losses, grads))
}

fn backward(params: &ModelParams, batch: &Batch, cache: &ForwardCache) -> (Vec<f64>, ModelParams) {
    let spec = params.spec();
    let dims = spec.layer_dims();
    let num_layers = spec.num_layers();
    let n = cache.rows;
    let c = spec.output_dim();

    // dL/dlogits = (softmax - onehot) / n for the batch-mean cross entropy.
    let mut losses = vec![0.0; n];
    let mut delta = vec![0.0; n * c];
    for r in 0..n {
        let logit_row = &cache.logits[r * c..(r + 1) * c];
        let lse = log_sum_exp(logit_row);
        let y = batch.labels()[r];
        losses[r] = lse - logit_row[y];
        let drow = &mut delta[r * c..(r + 1) * c];
        for (j, d) in drow.iter_mut().enumerate() {
            let p = (logit_row[j] - lse).exp();
            *d = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }

    let mut grads = ModelParams::zeros(spec);
    for k in (1..=num_layers).rev() {
        let (din, dout) = (dims[k - 1], dims[k]);
        let input: &[f64] = if k == 1 {
            batch.features()
        } else {
            &cache.layer_inputs[k - 2]
        };
        {
            let (gw, gb) = grads.layer_mut(k);
            for r in 0..n {
                let drow = &delta[r * dout..(r + 1) * dout];
                let xrow = &input[r * din..(r + 1) * din];
                for (o, &d) in drow.iter().enumerate() {
                    gb[o] += d;
                    axpy(&mut gw[o * din..(o + 1) * din], d, xrow);
                }
            }
        }
        if k > 1 {
            let (w, _) = params.layer(k);
            let mut next = vec![0.0; n * din];
            for r in 0..n {
                let drow = &delta[r * dout..(r + 1) * dout];
                let nrow = &mut next[r * din..(r + 1) * din];
                for (o, &d) in drow.iter().enumerate() {
                    axpy(nrow, d, &w[o * din..(o + 1) * din]);
                }
            }
            // Through dropout (scale or zero) and ReLU (gate on h > 0).
            let h = &cache.relu_out[k - 2];
            match &cache.drop_scale[k - 2] {
                Some(scale) => {
                    for i in 0..n * din {
                        next[i] = if h[i] > 0.0 { next[i] * scale[i] } else { 0.0 };
                    }
                }
                None => {
                    for i in 0..n * din {
                        if h[i] <= 0.0 {
                            next[i] = 0.0;
                        }
                    }
                }
            }
            delta = next;
        }
    }
    (losses, grads)
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.values.len() != grads.values.len() || params.values.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {} / grads {} / adam {} lengths differ",
            params.values.len(),
            grads.values.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut finite = true;
    for i in 0..params.values.len() {
        let g = grads.values[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let v = params.values[i] - lr * m_hat / (v_hat.sqrt() + state.epsilon);
        finite &= v.is_finite();
        params.values[i] = v;
    }
    if !finite {
        return Err(Error::Divergence {
            client: None,
            round: None,
        });
    }
    Ok(())
}

/// Result of evaluating a model over a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Sample-weighted mean cross-entropy.
    pub mean_loss: f64,
    /// Per-row argmax class (lowest index wins ties).
    pub predictions: Vec<usize>,
}

const EVAL_CHUNK: usize = 512;

/// Dropout-free evaluation over a full dataset, chunked so the work can run
/// data-parallel. Chunk boundaries and the merge order are fixed, so the
/// result is bitwise identical with and without the `parallel` feature.
pub fn evaluate(params: &ModelParams, features: &[f64], labels: &[usize]) -> Result<Evaluation> {
    let dim = params.spec().input_dim();
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    if features.len() != n * dim {
        return Err(Error::ShapeMismatch(format!(
            "features len {} != {} rows x {} dims",
            features.len(),
            n,
            dim
        )));
    }
    let c = params.spec().output_dim();
    let chunks = n.div_ceil(EVAL_CHUNK);
    let partials = exec::map_range(chunks, |ci| {
        let lo = ci * EVAL_CHUNK;
        let hi = ((ci + 1) * EVAL_CHUNK).min(n);
        let rows = hi - lo;
        let cache = run_forward(
            params,
            &features[lo * dim..hi * dim],
            rows,
            &mut ForwardMode::Eval,
        );
        let mut loss_sum = 0.0;
        let mut preds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &cache.logits[r * c..(r + 1) * c];
            loss_sum += log_sum_exp(row) - row[labels[lo + r]];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            preds.push(best);
        }
        (loss_sum, preds)
    });

    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(n);
    for (ls, preds) in partials {
        loss_sum += ls;
        predictions.extend(preds);
    }
    let mean_loss = loss_sum / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::Divergence {
            client: None,
            round: None,
        });
    }
    Ok(Evaluation {
        mean_loss,
        predictions,
    })
}
