//! Small convolutional network with manual backpropagation, Adam, and
//! input-gradient saliency.

mod layers;

pub use layers::{Act, BatchNorm, Conv, Dense, Layer, Mode};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::num::Real;
use crate::seed::derive_rng;
use layers::Cache;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub fc_width: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Shift and scale inputs by the training-set pixel mean and std.
    pub normalize_input: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_size: 16,
            conv1_channels: 16,
            conv2_channels: 32,
            kernel: 3,
            fc_width: 128,
            dropout: 0.5,
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 30,
            seed: 0,
            normalize_input: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 4 != 0 {
            return Err(Error::Config(format!("input size {} must be a positive multiple of 4", self.input_size)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Gradients in the order of [`Net::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net<T> {
    /// Per-sample input `(C, H, W)`.
    pub input: (usize, usize, usize),
    pub layers: Vec<Layer<T>>,
    pub input_shift: f64,
    pub input_scale: f64,
    pub adam: AdamConfig,
    pub adam_m: Vec<Vec<T>>,
    pub adam_v: Vec<Vec<T>>,
    pub step: u64,
    pub seed: u64,
}

pub type MicroNet = Net<f64>;
pub type MicroNet32 = Net<f32>;

fn batch_to_act<T: Real>(net_input: (usize, usize, usize), batch: &[Grid<T>], shift: f64, scale: f64) -> Result<Act<T>> {
    let (c, h, w) = net_input;
    if c != 1 {
        return Err(Error::Config("grid batches feed single-channel networks".into()));
    }
    let mut data = Vec::with_capacity(batch.len() * h * w);
    for g in batch {
        if g.shape() != (h, w) {
            return Err(Error::Shape(format!("input {:?}, network expects {h}x{w}", g.shape())));
        }
        let (s, k) = (T::lit(shift), T::lit(scale));
        data.extend(g.as_slice().iter().map(|&v| (v - s) / k));
    }
    Ok(Act {
        shape: [batch.len(), 1, h, w],
        data,
    })
}

/// Mean two-class softmax cross-entropy and its gradient wrt the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Grid<T>, labels: &[u8]) -> Result<(T, Grid<T>)> {
    let n = logits.rows();
    if labels.len() != n || n == 0 {
        return Err(Error::Shape(format!("{n} logit rows vs {} labels", labels.len())));
    }
    let k = logits.cols();
    let nt = T::from_usize_lossy(n);
    let mut loss = T::zero();
    let mut grad = Grid::filled(n, k, T::zero());
    for i in 0..n {
        let y = labels[i] as usize;
        if y >= k {
            return Err(Error::format("label", format!("{y} out of range")));
        }
        let probs = softmax(&logits.as_slice()[i * k..(i + 1) * k]);
        let row = &logits.as_slice()[i * k..(i + 1) * k];
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
        loss += lse - row[y];
        for j in 0..k {
            let t = if j == y { T::one() } else { T::zero() };
            grad.set(i, j, (probs[j] - t) / nt);
        }
    }
    let loss = loss / nt;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy is not finite".into()));
    }
    Ok((loss, grad))
}

pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<T: Real> Net<T> {
    /// Network with the given layers; shapes must chain to two logits.
    pub fn from_layers(input: (usize, usize, usize), layers: Vec<Layer<T>>, adam: AdamConfig, seed: u64) -> Result<Self> {
        let mut shape = input;
        for l in &layers {
            shape = l.out_shape(shape)?;
        }
        if shape != (2, 1, 1) {
            return Err(Error::Config(format!("network ends in {shape:?}, expected two logits")));
        }
        let adam_m: Vec<Vec<T>> = layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|p| vec![T::zero(); p.len()]))
            .collect();
        Ok(Self {
            input,
            layers,
            input_shift: 0.0,
            input_scale: 1.0,
            adam,
            adam_v: adam_m.clone(),
            adam_m,
            step: 0,
            seed,
        })
    }

    /// conv-BN-relu-pool twice, then dense-relu-dropout-dense.
    pub fn micro(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(config.seed, "net-init", "micro");
        let s = config.input_size;
        let (c1, c2, k) = (config.conv1_channels, config.conv2_channels, config.kernel);
        let layers = vec![
            Layer::conv(1, c1, k, &mut rng),
            Layer::batch_norm(c1),
            Layer::Relu,
            Layer::MaxPool,
            Layer::conv(c1, c2, k, &mut rng),
            Layer::batch_norm(c2),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Flatten,
            Layer::dense(c2 * (s / 4) * (s / 4), config.fc_width, &mut rng),
            Layer::Relu,
            Layer::Dropout { p: config.dropout },
            Layer::dense(config.fc_width, 2, &mut rng),
        ];
        Self::from_layers((1, s, s), layers, config.adam, config.seed)
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn pass(&self, x: Act<T>, mode: Mode) -> (Act<T>, Vec<Cache<T>>) {
        let mut rng = derive_rng(self.seed, "net-dropout", &self.step.to_string());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x;
        for l in &self.layers {
            let (out, cache) = layers::forward(l, a, mode, &mut rng);
            caches.push(cache);
            a = out;
        }
        (a, caches)
    }

    fn back(&self, caches: Vec<Cache<T>>, dout: Act<T>) -> (Gradients<T>, Act<T>) {
        let mut grads: Vec<Vec<T>> = self.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.params().len();
        }
        let mut d = dout;
        for ((l, cache), &o) in self.layers.iter().zip(caches).zip(&offsets).rev() {
            let np = l.params().len();
            d = layers::backward(l, cache, d, &mut grads[o..o + np]);
        }
        (Gradients { params: grads }, d)
    }

    fn logits_grid(out: Act<T>) -> Grid<T> {
        let k = out.per_sample();
        Grid::new(out.shape[0], k, out.data).expect("consistent logit shape")
    }

    fn apply_running(&mut self, caches: &[Cache<T>]) {
        for (l, c) in self.layers.iter_mut().zip(caches) {
            layers::update_running(l, c);
        }
    }

    /// Logits `N x 2`. `Mode::Train` also updates batch-norm running statistics.
    pub fn forward(&mut self, batch: &[Grid<T>], mode: Mode) -> Result<Grid<T>> {
        let x = batch_to_act(self.input, batch, self.input_shift, self.input_scale)?;
        let (out, caches) = self.pass(x, mode);
        if mode == Mode::Train {
            self.apply_running(&caches);
        }
        let logits = Self::logits_grid(out);
        if logits.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Eval-mode logits; never mutates the network.
    pub fn logits(&self, batch: &[Grid<T>]) -> Result<Grid<T>> {
        let x = batch_to_act(self.input, batch, self.input_shift, self.input_scale)?;
        Ok(Self::logits_grid(self.pass(x, Mode::Eval).0))
    }

    /// Mean cross-entropy and parameter gradients for one batch.
    pub fn loss_and_grads(&mut self, batch: &[Grid<T>], labels: &[u8], mode: Mode) -> Result<(T, Gradients<T>)> {
        let x = batch_to_act(self.input, batch, self.input_shift, self.input_scale)?;
        let (out, caches) = self.pass(x, mode);
        if mode == Mode::Train {
            self.apply_running(&caches);
        }
        let logits = Self::logits_grid(out);
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        let dout = Act {
            shape: [logits.rows(), logits.cols(), 1, 1],
            data: dlogits.into_vec(),
        };
        let (grads, _) = self.back(caches, dout);
        if grads.params.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok((loss, grads))
    }

    /// Bias-corrected Adam update; increments the step counter.
    pub fn adam_step(&mut self, grads: &Gradients<T>) {
        self.step += 1;
        let cfg = self.adam;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() - T::lit(cfg.beta1.powi(t));
        let c2 = T::one() - T::lit(cfg.beta2.powi(t));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        let mut m = std::mem::take(&mut self.adam_m);
        let mut v = std::mem::take(&mut self.adam_v);
        for (((p, g), m), v) in self.params_mut().into_iter().zip(&grads.params).zip(&mut m).zip(&mut v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.adam_m = m;
        self.adam_v = v;
    }

    /// Positive-class softmax probability per input, eval mode.
    pub fn predict_proba(&self, batch: &[Grid<T>]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(256) {
            let logits = self.logits(chunk)?;
            for r in 0..logits.rows() {
                out.push(softmax(&logits.as_slice()[r * 2..r * 2 + 2])[1]);
            }
        }
        Ok(out)
    }

    /// `|d logit_1 / d pixel|` in eval mode, in raw pixel units.
    pub fn saliency_map(&self, patch: &Grid<T>) -> Result<Grid<T>> {
        let x = batch_to_act(self.input, std::slice::from_ref(patch), self.input_shift, self.input_scale)?;
        let (out, caches) = self.pass(x, Mode::Eval);
        let k = out.per_sample();
        let mut d = Act::zeros(out.shape);
        d.data[k - 1] = T::one();
        let (_, dx) = self.back(caches, d);
        let scale = T::lit(self.input_scale);
        Grid::new(patch.rows(), patch.cols(), dx.data.iter().map(|g| (*g / scale).abs()).collect())
    }
}

/// Runs one layer on its own; training mode leaves running statistics untouched.
pub fn layer_forward<T: Real>(layer: &Layer<T>, x: Act<T>, mode: Mode) -> Act<T> {
    let mut rng = derive_rng(0, "net-dropout", "probe");
    layers::forward(layer, x, mode, &mut rng).0
}

/// Trains a fresh micro network; returns it with the mean training loss of each epoch.
pub fn train_net<T: Real>(config: &NetConfig, images: &[Grid<T>], labels: &[u8]) -> Result<(Net<T>, Vec<f64>)> {
    if images.len() != labels.len() {
        return Err(Error::Shape(format!("{} images vs {} labels", images.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Config("network training needs both classes".into()));
    }
    let mut net = Net::micro(config)?;
    if config.normalize_input {
        let all: Vec<f64> = images.iter().flat_map(|g| g.as_slice().iter().map(|v| v.to_f64_lossy())).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
        net.input_shift = mean;
        net.input_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = derive_rng(config.seed, "net-shuffle", &epoch.to_string());
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Grid<T>> = chunk.iter().map(|&i| images[i].clone()).collect();
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net
                .loss_and_grads(&batch, &y, Mode::Train)
                .map_err(|e| Error::Numeric(format!("training diverged at epoch {epoch}: {e}")))?;
            total += loss.to_f64_lossy() * chunk.len() as f64;
            net.adam_step(&grads);
        }
        curve.push(total / images.len() as f64);
    }
    Ok((net, curve))
}
