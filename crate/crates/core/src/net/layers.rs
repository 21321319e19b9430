//! Layer kernels with hand-written backward passes. Activations are NCHW;
//! dense activations use `H = W = 1`, so flattening moves no data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn per_sample(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub pad: usize,
    /// `[out_c][in_c][k][k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm<T> {
    pub c: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub in_f: usize,
    pub out_f: usize,
    /// `[out_f][in_f]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer<T> {
    Conv(Conv<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    /// 2x2 window, stride 2.
    MaxPool,
    Flatten,
    Dense(Dense<T>),
    Dropout { p: f64 },
}

fn he_normal<T: Real>(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
        .collect()
}

impl<T: Real> Layer<T> {
    pub fn conv(in_c: usize, out_c: usize, k: usize, rng: &mut impl Rng) -> Self {
        Layer::Conv(Conv {
            in_c,
            out_c,
            k,
            pad: k / 2,
            weight: he_normal(out_c * in_c * k * k, in_c * k * k, rng),
            bias: vec![T::zero(); out_c],
        })
    }

    pub fn dense(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        Layer::Dense(Dense {
            in_f,
            out_f,
            weight: he_normal(out_f * in_f, in_f, rng),
            bias: vec![T::zero(); out_f],
        })
    }

    pub fn batch_norm(c: usize) -> Self {
        Layer::BatchNorm(BatchNorm {
            c,
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu => "relu",
            Layer::MaxPool => "max_pool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Dropout { .. } => "dropout",
        }
    }

    /// Output shape of one sample, `(C, H, W)`.
    pub fn out_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name())));
        match self {
            Layer::Conv(l) => {
                if c != l.in_c {
                    return bad(format!("expects {} channels, got {c}", l.in_c));
                }
                if h + 2 * l.pad < l.k || w + 2 * l.pad < l.k {
                    return bad(format!("{h}x{w} input smaller than kernel"));
                }
                Ok((l.out_c, h + 2 * l.pad + 1 - l.k, w + 2 * l.pad + 1 - l.k))
            }
            Layer::BatchNorm(l) if l.c != c => bad(format!("expects {} channels, got {c}", l.c)),
            Layer::MaxPool if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 => {
                bad(format!("needs even spatial size, got {h}x{w}"))
            }
            Layer::MaxPool => Ok((c, h / 2, w / 2)),
            Layer::Flatten => Ok((c * h * w, 1, 1)),
            Layer::Dense(l) => {
                if h != 1 || w != 1 || c != l.in_f {
                    return bad(format!("expects {} flat inputs, got {c}x{h}x{w}", l.in_f));
                }
                Ok((l.out_f, 1, 1))
            }
            Layer::Dropout { p } if !(*p >= 0.0 && *p < 1.0) => bad(format!("probability {p} not in [0,1)")),
            _ => Ok((c, h, w)),
        }
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }
}

/// How batch norm and dropout behave during a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout on.
    Train,
    /// Batch statistics with no updates and dropout off.
    TrainFrozen,
    /// Running statistics, dropout off.
    Eval,
}

pub(crate) enum Cache<T> {
    Conv(Act<T>),
    Bn {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch: bool,
        stats: Vec<(T, T)>,
        count: usize,
    },
    Relu(Vec<bool>),
    Pool { argmax: Vec<usize>, in_shape: [usize; 4] },
    Flatten([usize; 4]),
    Dense(Act<T>),
    Dropout(Option<Vec<T>>),
}

pub(crate) fn forward<T: Real>(layer: &Layer<T>, x: Act<T>, mode: Mode, rng: &mut impl Rng) -> (Act<T>, Cache<T>) {
    let [n, c, h, w] = x.shape;
    match layer {
        Layer::Conv(l) => {
            let (ho, wo) = (h + 2 * l.pad + 1 - l.k, w + 2 * l.pad + 1 - l.k);
            let mut out = Act::zeros([n, l.out_c, ho, wo]);
            let k = l.k;
            for s in 0..n {
                for o in 0..l.out_c {
                    let plane = &mut out.data[((s * l.out_c + o) * ho) * wo..((s * l.out_c + o + 1) * ho) * wo];
                    plane.iter_mut().for_each(|v| *v = l.bias[o]);
                    for ci in 0..c {
                        let inp = &x.data[((s * c + ci) * h) * w..((s * c + ci + 1) * h) * w];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wt = l.weight[((o * c + ci) * k + ky) * k + kx];
                                for y in 0..ho {
                                    let iy = y + ky;
                                    if iy < l.pad || iy - l.pad >= h {
                                        continue;
                                    }
                                    let row = &inp[(iy - l.pad) * w..(iy - l.pad + 1) * w];
                                    for xo in 0..wo {
                                        let ix = xo + kx;
                                        if ix < l.pad || ix - l.pad >= w {
                                            continue;
                                        }
                                        plane[y * wo + xo] += wt * row[ix - l.pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (out, Cache::Conv(x))
        }
        Layer::BatchNorm(l) => {
            let spatial = h * w;
            let m = n * spatial;
            let eps = T::lit(l.eps);
            let use_batch = mode != Mode::Eval;
            let mut xhat = vec![T::zero(); x.data.len()];
            let mut inv_std = vec![T::zero(); c];
            let mut out = Act::zeros(x.shape);
            let mut stats = Vec::with_capacity(c);
            for ch in 0..c {
                let idx = |s: usize, p: usize| (s * c + ch) * spatial + p;
                let (mean, var) = if use_batch {
                    let mut sum = T::zero();
                    for s in 0..n {
                        for p in 0..spatial {
                            sum += x.data[idx(s, p)];
                        }
                    }
                    let mean = sum / T::from_usize_lossy(m);
                    let mut ss = T::zero();
                    for s in 0..n {
                        for p in 0..spatial {
                            let d = x.data[idx(s, p)] - mean;
                            ss += d * d;
                        }
                    }
                    (mean, ss / T::from_usize_lossy(m))
                } else {
                    (l.running_mean[ch], l.running_var[ch])
                };
                let is = T::one() / (var + eps).sqrt();
                inv_std[ch] = is;
                for s in 0..n {
                    for p in 0..spatial {
                        let i = idx(s, p);
                        xhat[i] = (x.data[i] - mean) * is;
                        out.data[i] = l.gamma[ch] * xhat[i] + l.beta[ch];
                    }
                }
                stats.push((mean, var));
            }
            (
                out,
                Cache::Bn {
                    xhat,
                    inv_std,
                    batch: use_batch,
                    stats,
                    count: m,
                },
            )
        }
        Layer::Relu => {
            let mask: Vec<bool> = x.data.iter().map(|&v| v > T::zero()).collect();
            let data = x.data.iter().zip(&mask).map(|(&v, &m)| if m { v } else { T::zero() }).collect();
            (Act { shape: x.shape, data }, Cache::Relu(mask))
        }
        Layer::MaxPool => {
            let (ho, wo) = (h / 2, w / 2);
            let mut out = Act::zeros([n, c, ho, wo]);
            let mut argmax = vec![0; out.data.len()];
            for plane in 0..n * c {
                for y in 0..ho {
                    for xo in 0..wo {
                        // first maximum in scan order wins ties
                        let mut best = plane * h * w + (2 * y) * w + 2 * xo;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let i = plane * h * w + (2 * y + dy) * w + 2 * xo + dx;
                            if x.data[i] > x.data[best] {
                                best = i;
                            }
                        }
                        let o = plane * ho * wo + y * wo + xo;
                        out.data[o] = x.data[best];
                        argmax[o] = best;
                    }
                }
            }
            (
                out,
                Cache::Pool {
                    argmax,
                    in_shape: x.shape,
                },
            )
        }
        Layer::Flatten => {
            let shape = x.shape;
            (
                Act {
                    shape: [n, c * h * w, 1, 1],
                    data: x.data,
                },
                Cache::Flatten(shape),
            )
        }
        Layer::Dense(l) => {
            let mut out = Act::zeros([n, l.out_f, 1, 1]);
            for s in 0..n {
                let inp = &x.data[s * l.in_f..(s + 1) * l.in_f];
                for o in 0..l.out_f {
                    let row = &l.weight[o * l.in_f..(o + 1) * l.in_f];
                    let mut acc = l.bias[o];
                    for (a, b) in row.iter().zip(inp) {
                        acc += *a * *b;
                    }
                    out.data[s * l.out_f + o] = acc;
                }
            }
            (out, Cache::Dense(x))
        }
        Layer::Dropout { p } => {
            if mode != Mode::Train || *p == 0.0 {
                return (x, Cache::Dropout(None));
            }
            let keep = 1.0 - *p;
            let scale = T::lit(1.0 / keep);
            let mask: Vec<T> = (0..x.data.len())
                .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
                .collect();
            let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Act { shape: x.shape, data }, Cache::Dropout(Some(mask)))
        }
    }
}

/// Folds the batch statistics of a training pass into the running estimates.
pub(crate) fn update_running<T: Real>(layer: &mut Layer<T>, cache: &Cache<T>) {
    if let (Layer::BatchNorm(l), Cache::Bn { stats, count, .. }) = (layer, cache) {
        let mom = T::lit(l.momentum);
        let m = *count;
        for (ch, &(mean, var)) in stats.iter().enumerate() {
            let unbiased = if m > 1 {
                var * T::from_usize_lossy(m) / T::from_usize_lossy(m - 1)
            } else {
                var
            };
            l.running_mean[ch] = (T::one() - mom) * l.running_mean[ch] + mom * mean;
            l.running_var[ch] = (T::one() - mom) * l.running_var[ch] + mom * unbiased;
        }
    }
}

/// Returns the input gradient and fills `grads` with parameter gradients.
pub(crate) fn backward<T: Real>(layer: &Layer<T>, cache: Cache<T>, dout: Act<T>, grads: &mut [Vec<T>]) -> Act<T> {
    match (layer, cache) {
        (Layer::Conv(l), Cache::Conv(x)) => {
            let [n, c, h, w] = x.shape;
            let [_, oc, ho, wo] = dout.shape;
            let k = l.k;
            let mut dx = Act::zeros(x.shape);
            let (gw, rest) = grads.split_at_mut(1);
            let (gw, gb) = (&mut gw[0], &mut rest[0]);
            for s in 0..n {
                for o in 0..oc {
                    let dplane = &dout.data[((s * oc + o) * ho) * wo..((s * oc + o + 1) * ho) * wo];
                    gb[o] += dplane.iter().copied().sum::<T>();
                    for ci in 0..c {
                        let base = ((s * c + ci) * h) * w;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wi = ((o * c + ci) * k + ky) * k + kx;
                                let wt = l.weight[wi];
                                let mut acc = T::zero();
                                for y in 0..ho {
                                    let iy = y + ky;
                                    if iy < l.pad || iy - l.pad >= h {
                                        continue;
                                    }
                                    for xo in 0..wo {
                                        let ix = xo + kx;
                                        if ix < l.pad || ix - l.pad >= w {
                                            continue;
                                        }
                                        let ii = base + (iy - l.pad) * w + ix - l.pad;
                                        let d = dplane[y * wo + xo];
                                        acc += d * x.data[ii];
                                        dx.data[ii] += wt * d;
                                    }
                                }
                                gw[wi] += acc;
                            }
                        }
                    }
                }
            }
            dx
        }
        (Layer::BatchNorm(l), Cache::Bn { xhat, inv_std, batch, .. }) => {
            let [n, c, h, w] = dout.shape;
            let spatial = h * w;
            let m = T::from_usize_lossy(n * spatial);
            let mut dx = Act::zeros(dout.shape);
            let (gg, rest) = grads.split_at_mut(1);
            let (gg, gbeta) = (&mut gg[0], &mut rest[0]);
            for ch in 0..c {
                let idxs = (0..n).flat_map(|s| (0..spatial).map(move |p| (s * c + ch) * spatial + p));
                let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
                for i in idxs.clone() {
                    sum_d += dout.data[i];
                    sum_dx += dout.data[i] * xhat[i];
                }
                gg[ch] += sum_dx;
                gbeta[ch] += sum_d;
                let g = l.gamma[ch];
                for i in idxs {
                    dx.data[i] = if batch {
                        // d/dx of the normalized value through the batch mean and variance
                        g * inv_std[ch] / m * (m * dout.data[i] - sum_d - xhat[i] * sum_dx)
                    } else {
                        g * inv_std[ch] * dout.data[i]
                    };
                }
            }
            dx
        }
        (Layer::Relu, Cache::Relu(mask)) => Act {
            shape: dout.shape,
            data: dout
                .data
                .iter()
                .zip(&mask)
                .map(|(&d, &m)| if m { d } else { T::zero() })
                .collect(),
        },
        (Layer::MaxPool, Cache::Pool { argmax, in_shape }) => {
            let mut dx = Act::zeros(in_shape);
            for (o, &i) in argmax.iter().enumerate() {
                dx.data[i] += dout.data[o];
            }
            dx
        }
        (Layer::Flatten, Cache::Flatten(shape)) => Act { shape, data: dout.data },
        (Layer::Dense(l), Cache::Dense(x)) => {
            let n = x.shape[0];
            let mut dx = Act::zeros(x.shape);
            let (gw, rest) = grads.split_at_mut(1);
            let (gw, gb) = (&mut gw[0], &mut rest[0]);
            for s in 0..n {
                let inp = &x.data[s * l.in_f..(s + 1) * l.in_f];
                let dxs = &mut dx.data[s * l.in_f..(s + 1) * l.in_f];
                for o in 0..l.out_f {
                    let d = dout.data[s * l.out_f + o];
                    gb[o] += d;
                    let row = &l.weight[o * l.in_f..(o + 1) * l.in_f];
                    let grow = &mut gw[o * l.in_f..(o + 1) * l.in_f];
                    for j in 0..l.in_f {
                        grow[j] += d * inp[j];
                        dxs[j] += d * row[j];
                    }
                }
            }
            dx
        }
        (Layer::Dropout { .. }, Cache::Dropout(mask)) => match mask {
            None => dout,
            Some(mask) => Act {
                shape: dout.shape,
                data: dout.data.iter().zip(&mask).map(|(&d, &m)| d * m).collect(),
            },
        },
        _ => unreachable!("cache recorded by a different layer"),
    }
}
