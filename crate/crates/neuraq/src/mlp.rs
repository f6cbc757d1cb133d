//! Dense feed-forward networks with ReLU hidden activations, squared-error
//! loss, analytic backpropagation and Adam. One such network serves each
//! query-space partition.
//!
//! All parameters are 64-bit floats. Training happens in normalized space
//! (inputs min-max scaled to [0,1], labels z-scored); a trained model stores
//! its normalization statistics and applies them inside [`Mlp::forward`], so
//! callers always work in raw units.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Network shape: `n_layers` weight layers in total, laid out as
/// `input_dim -> first_width -> rest_width x (n_layers - 2) -> output_dim`,
/// with ReLU on every layer except the linear output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub n_layers: usize,
    pub first_width: usize,
    pub rest_width: usize,
    pub output_dim: usize,
}

impl MlpArchitecture {
    pub fn new(
        input_dim: usize,
        n_layers: usize,
        first_width: usize,
        rest_width: usize,
        output_dim: usize,
    ) -> Result<Self> {
        let arch = MlpArchitecture {
            input_dim,
            n_layers,
            first_width,
            rest_width,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Contract("architecture dims must be >= 1".into()));
        }
        if self.n_layers < 2 {
            return Err(Error::Contract("architecture needs n_layers >= 2".into()));
        }
        if self.first_width == 0 || self.rest_width == 0 {
            return Err(Error::Contract("architecture widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Unit counts per layer, input first, output last.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.n_layers + 1);
        sizes.push(self.input_dim);
        sizes.push(self.first_width);
        for _ in 0..self.n_layers - 2 {
            sizes.push(self.rest_width);
        }
        sizes.push(self.output_dim);
        sizes
    }

    /// Total parameter count; also the multiply-accumulate count of one
    /// forward pass (each weight is one MAC, each bias one accumulate).
    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }
}

/// One dense layer: `out_dim x in_dim` weights (row-major) plus biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Contract("layer shape mismatch".into()));
        }
        Ok(Layer {
            weights,
            bias,
            in_dim,
            out_dim,
        })
    }

    fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Layer {
        let bound = (6.0 / in_dim as f64).sqrt();
        Layer {
            weights: (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// `out = W x + b`, counting one MAC per weight and per bias.
    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            *out_v = acc;
        }
    }
}

/// Per-dimension affine maps taking raw inputs to network space and network
/// outputs back to raw label units. Identity for hand-built models.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    /// normalized_input[i] = (x[i] - input_offset[i]) * input_scale[i]
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// raw_label[j] = net_output[j] * label_std[j] + label_mean[j]
    pub label_mean: Vec<f64>,
    pub label_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Normalization {
            input_offset: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            label_mean: vec![0.0; output_dim],
            label_std: vec![1.0; output_dim],
        }
    }

    /// Min-max input scaling to [0,1] and label z-scoring, both computed
    /// from the training samples. A constant input dimension maps to 0.5;
    /// a constant label dimension keeps std 1.
    pub fn fit(inputs: &[&[f64]], labels: &[&[f64]]) -> Self {
        let in_dim = inputs[0].len();
        let out_dim = labels[0].len();
        let mut input_offset = vec![0.0; in_dim];
        let mut input_scale = vec![1.0; in_dim];
        for i in 0..in_dim {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for x in inputs {
                min = min.min(x[i]);
                max = max.max(x[i]);
            }
            if max > min {
                input_offset[i] = min;
                input_scale[i] = 1.0 / (max - min);
            } else {
                input_offset[i] = min - 0.5;
                input_scale[i] = 1.0;
            }
        }
        let n = labels.len() as f64;
        let mut label_mean = vec![0.0; out_dim];
        let mut label_std = vec![1.0; out_dim];
        for j in 0..out_dim {
            let mean = labels.iter().map(|l| l[j]).sum::<f64>() / n;
            let var = labels.iter().map(|l| (l[j] - mean) * (l[j] - mean)).sum::<f64>() / n;
            label_mean[j] = mean;
            label_std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Normalization {
            input_offset,
            input_scale,
            label_mean,
            label_std,
        }
    }

    pub fn normalize_input(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.input_offset[i]) * self.input_scale[i];
        }
    }

    pub fn normalize_label(&self, y: &[f64], out: &mut [f64]) {
        for j in 0..y.len() {
            out[j] = (y[j] - self.label_mean[j]) / self.label_std[j];
        }
    }

    pub fn denormalize_label(&self, y: &mut [f64]) {
        for j in 0..y.len() {
            y[j] = y[j] * self.label_std[j] + self.label_mean[j];
        }
    }
}

/// A trained (or freshly initialized) network together with the
/// normalization it was fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    norm: Normalization,
}

impl Mlp {
    /// Seeded He-uniform initialization for the given architecture, with
    /// identity normalization.
    pub fn new(arch: &MlpArchitecture, seed: u64) -> Result<Mlp> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = arch.layer_sizes();
        let layers = sizes
            .windows(2)
            .map(|w| Layer::he_uniform(w[0], w[1], &mut rng))
            .collect();
        Ok(Mlp {
            layers,
            norm: Normalization::identity(arch.input_dim, arch.output_dim),
        })
    }

    /// Builds a network directly from explicit layers (identity
    /// normalization). The last layer is linear; all earlier layers get ReLU.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Contract("layer shape chain mismatch".into()));
            }
        }
        let norm = Normalization::identity(layers[0].in_dim, layers[layers.len() - 1].out_dim);
        Ok(Mlp { layers, norm })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn set_normalization(&mut self, norm: Normalization) {
        self.norm = norm;
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Multiply-accumulate count of one forward pass. Equals
    /// [`Mlp::param_count`]: one MAC per weight, one per bias.
    pub fn forward_mac_count(&self) -> usize {
        self.param_count()
    }

    /// Full inference: normalize the raw input, run the network (ReLU on all
    /// layers except the last), denormalize the output.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "forward input length");
        let mut cur = vec![0.0; x.len()];
        self.norm.normalize_input(x, &mut cur);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.affine_into(&cur, &mut next);
            if li != last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = next;
        }
        self.norm.denormalize_label(&mut cur);
        cur
    }

    /// [`Mlp::forward`] plus the number of multiply-accumulates performed,
    /// counted per fused `w*x` term and per bias add.
    pub fn forward_with_mac_count(&self, x: &[f64]) -> (Vec<f64>, u64) {
        let macs: u64 = self
            .layers
            .iter()
            .map(|l| (l.weights.len() + l.bias.len()) as u64)
            .sum();
        (self.forward(x), macs)
    }

    /// All parameters in a fixed order (per layer: weights row-major, then
    /// biases). The same order is used by gradients, Adam state and the
    /// serialized model block.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

/// Parameter-shaped gradient buffers, one (weights, bias) pair per layer.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Gradients {
        Gradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            for x in w.iter_mut() {
                *x *= s;
            }
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }
}

/// Reusable per-sample activation and delta buffers for backpropagation.
struct Scratch {
    /// Post-activation of each layer, activations[0] being the input.
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn for_mlp(mlp: &Mlp) -> Scratch {
        let mut activations = vec![vec![0.0; mlp.input_dim()]];
        let mut deltas = Vec::new();
        for l in &mlp.layers {
            activations.push(vec![0.0; l.out_dim]);
            deltas.push(vec![0.0; l.out_dim]);
        }
        Scratch {
            activations,
            deltas,
        }
    }
}

/// Accumulates raw (unscaled) squared-error loss and gradient contributions
/// of one sample into `grads`. Inputs and labels are in network space.
fn accumulate_sample(
    mlp: &Mlp,
    x: &[f64],
    y: &[f64],
    scratch: &mut Scratch,
    grads: &mut Gradients,
) -> f64 {
    let last = mlp.layers.len() - 1;
    scratch.activations[0].copy_from_slice(x);
    for (li, layer) in mlp.layers.iter().enumerate() {
        let (prev, rest) = scratch.activations.split_at_mut(li + 1);
        layer.affine_into(&prev[li], &mut rest[0]);
        if li != last {
            for v in rest[0].iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    // Squared error summed over output dims; dL/dyhat = 2 (yhat - y).
    let mut loss = 0.0;
    {
        let out = &scratch.activations[last + 1];
        let delta = &mut scratch.deltas[last];
        for j in 0..out.len() {
            let diff = out[j] - y[j];
            loss += diff * diff;
            delta[j] = 2.0 * diff;
        }
    }

    for li in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[li];
        let (dw, db) = &mut grads.layers[li];
        let input = &scratch.activations[li];
        let delta = &scratch.deltas[li];
        for o in 0..layer.out_dim {
            let dv = delta[o];
            db[o] += dv;
            let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (g, a) in row.iter_mut().zip(input) {
                *g += dv * a;
            }
        }
        if li > 0 {
            // delta_{l-1} = W^T delta, masked by ReLU'(z); the stored
            // activation is already post-ReLU, so the mask is act > 0
            // (subgradient 0 at exactly 0).
            let (head, tail) = scratch.deltas.split_at_mut(li);
            let prev_delta = &mut head[li - 1];
            let delta = &tail[0];
            prev_delta.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..layer.out_dim {
                let dv = delta[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (pd, w) in prev_delta.iter_mut().zip(row) {
                    *pd += dv * w;
                }
            }
            let act = &scratch.activations[li];
            for (pd, a) in prev_delta.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *pd = 0.0;
                }
            }
        }
    }
    loss
}

fn accumulate_range(mlp: &Mlp, xs: &[&[f64]], ys: &[&[f64]]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(mlp);
    let mut scratch = Scratch::for_mlp(mlp);
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        loss += accumulate_sample(mlp, x, y, &mut scratch, &mut grads);
    }
    (loss, grads)
}

/// Mean squared-error loss over a batch (summed over output dimensions,
/// averaged over samples) and its exact gradient by backpropagation.
///
/// Operates directly in network space: normalization is not applied here.
/// Batches of at least [`PARALLEL_BATCH_THRESHOLD`] samples are split into
/// two deterministic halves combined in a fixed order, so results are
/// bit-identical regardless of thread scheduling.
pub fn loss_and_grad(mlp: &Mlp, xs: &[&[f64]], ys: &[&[f64]]) -> Result<(f64, Gradients)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Contract("loss_and_grad needs a non-empty batch".into()));
    }
    for x in xs {
        if x.len() != mlp.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "loss_and_grad input",
                expected: mlp.input_dim(),
                actual: x.len(),
            });
        }
    }
    for y in ys {
        if y.len() != mlp.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "loss_and_grad label",
                expected: mlp.output_dim(),
                actual: y.len(),
            });
        }
    }

    let n = xs.len();
    let (mut loss, mut grads) = if n >= PARALLEL_BATCH_THRESHOLD {
        let mid = n / 2;
        let ((l1, g1), (l2, mut g2)) = rayon::join(
            || accumulate_range(mlp, &xs[..mid], &ys[..mid]),
            || accumulate_range(mlp, &xs[mid..], &ys[mid..]),
        );
        g2.add(&g1);
        (l1 + l2, g2)
    } else {
        accumulate_range(mlp, xs, ys)
    };

    let inv = 1.0 / n as f64;
    loss *= inv;
    grads.scale(inv);
    Ok((loss, grads))
}

/// Batches at least this large are backpropagated as two halves in parallel.
pub const PARALLEL_BATCH_THRESHOLD: usize = 64;

/// Adam optimizer state: first/second moment accumulators in parameter
/// shape, the step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(mlp: &Mlp, lr: f64) -> AdamState {
        let n = mlp.param_count();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update: increments the step counter and moves
/// every parameter against its gradient.
pub fn adam_step(mlp: &mut Mlp, state: &mut AdamState, grads: &Gradients) -> Result<()> {
    let n_params = mlp.param_count();
    if state.m.len() != n_params || grads.iter().count() != n_params {
        return Err(Error::Contract("adam state/gradient shape mismatch".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in mlp
        .params_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Training hyperparameters. The learning rate is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Contract("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A finished training run: the fitted model plus the mean batch loss of
/// each epoch (in normalized label space).
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub mlp: Mlp,
    pub epoch_losses: Vec<f64>,
}

/// Fits a fresh network of the given architecture to `(inputs, labels)`.
///
/// Inputs are min-max normalized to [0,1] per dimension and labels z-scored
/// per output dimension, with the statistics taken from these samples and
/// stored inside the returned model; inference is in raw units. Runs
/// `epochs` passes of seeded-shuffled mini-batch Adam. Bit-reproducible for
/// a fixed seed on the same platform.
pub fn train(
    arch: &MlpArchitecture,
    config: &TrainConfig,
    inputs: &[&[f64]],
    labels: &[&[f64]],
) -> Result<TrainRun> {
    arch.validate()?;
    config.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Contract("train needs non-empty inputs with labels".into()));
    }
    if inputs[0].len() != arch.input_dim || labels[0].len() != arch.output_dim {
        return Err(Error::DimensionMismatch {
            context: "train sample shape",
            expected: arch.input_dim,
            actual: inputs[0].len(),
        });
    }

    let norm = Normalization::fit(inputs, labels);
    let n = inputs.len();
    let in_dim = arch.input_dim;
    let out_dim = arch.output_dim;
    let mut norm_inputs = vec![0.0; n * in_dim];
    let mut norm_labels = vec![0.0; n * out_dim];
    for (i, (x, y)) in inputs.iter().zip(labels).enumerate() {
        norm.normalize_input(x, &mut norm_inputs[i * in_dim..(i + 1) * in_dim]);
        norm.normalize_label(y, &mut norm_labels[i * out_dim..(i + 1) * out_dim]);
    }

    let mut mlp = Mlp::new(arch, config.seed)?;
    let mut adam = AdamState::new(&mlp, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<&[f64]> = Vec::with_capacity(config.batch_size);

    for _ in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(&norm_inputs[i * in_dim..(i + 1) * in_dim]);
                batch_y.push(&norm_labels[i * out_dim..(i + 1) * out_dim]);
            }
            let (loss, grads) = loss_and_grad(&mlp, &batch_x, &batch_y)?;
            adam_step(&mut mlp, &mut adam, &grads)?;
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    mlp.set_normalization(norm);
    Ok(TrainRun { mlp, epoch_losses })
}

/// Fisher-Yates driven by the training RNG; kept local so the shuffle
/// sequence is pinned by this crate rather than a library implementation.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
