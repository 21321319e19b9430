//! L1-penalized logistic regression by proximal coordinate descent.

use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, Scaler, TrainMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogregParams {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Weights act on z-scored columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogregModel {
    pub scaler: Scaler,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
}

impl LogregModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        let mut z = self.intercept;
        for j in 0..row.len() {
            let s = self.scaler.std[j];
            if s > 0.0 && self.weights[j] != 0.0 {
                z += self.weights[j] * (row[j] - self.scaler.mean[j]) / s;
            }
        }
        z
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

struct Problem<'a> {
    z: Vec<f64>,
    y: &'a [u8],
    n: usize,
    d: usize,
    lambda: f64,
}

impl Problem<'_> {
    #[inline]
    fn col(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.d + j]
    }

    fn mean_loss(&self, eta: &[f64]) -> f64 {
        let s: f64 = eta
            .iter()
            .zip(self.y)
            .map(|(&e, &y)| softplus(e) - if y == 1 { e } else { 0.0 })
            .sum();
        s / self.n as f64
    }

    fn objective(&self, eta: &[f64], w: &[f64]) -> f64 {
        self.mean_loss(eta) + self.lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn eta(&self, b: f64, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| b + (0..self.d).map(|j| w[j] * self.col(i, j)).sum::<f64>())
            .collect()
    }

    /// Mean loss after moving coordinate `j` (or the intercept when `None`) by `delta`.
    fn shifted_loss(&self, eta: &[f64], j: Option<usize>, delta: f64) -> f64 {
        let s: f64 = (0..self.n)
            .map(|i| {
                let e = eta[i] + delta * j.map_or(1.0, |j| self.col(i, j));
                softplus(e) - if self.y[i] == 1 { e } else { 0.0 }
            })
            .sum();
        s / self.n as f64
    }

    /// First and second derivative of the mean loss along a coordinate.
    fn derivs(&self, eta: &[f64], j: Option<usize>) -> (f64, f64) {
        let (mut g, mut h) = (0.0, 0.0);
        for i in 0..self.n {
            let p = sigmoid(eta[i]);
            let x = j.map_or(1.0, |j| self.col(i, j));
            g += (p - self.y[i] as f64) * x;
            h += p * (1.0 - p) * x * x;
        }
        (g / self.n as f64, h / self.n as f64)
    }

    /// Intercept gradient and coefficient gradients of the mean loss.
    fn gradient(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.d];
        let mut g0 = 0.0;
        for i in 0..self.n {
            let r = sigmoid(eta[i]) - self.y[i] as f64;
            g0 += r;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += r * self.col(i, j);
            }
        }
        let nf = self.n as f64;
        g.iter_mut().for_each(|v| *v /= nf);
        (g0 / nf, g)
    }

    /// One pass of exact-curvature proximal updates over the intercept and every weight.
    fn cd_sweep(&self, b: &mut f64, w: &mut [f64], eta: &mut [f64]) {
        let (g, h) = self.derivs(eta, None);
        if g != 0.0 {
            let base = self.mean_loss(eta);
            let mut step = -g / h.max(1e-12);
            for _ in 0..60 {
                if self.shifted_loss(eta, None, step) <= base {
                    *b += step;
                    eta.iter_mut().for_each(|e| *e += step);
                    break;
                }
                step *= 0.5;
            }
        }
        for j in 0..self.d {
            let (g, h) = self.derivs(eta, Some(j));
            let f0 = self.mean_loss(eta) + self.lambda * w[j].abs();
            // the curvature doubles until the objective does not rise
            let mut curv = h.max(1e-12);
            for _ in 0..80 {
                let target = soft_threshold(w[j] - g / curv, self.lambda / curv);
                let delta = target - w[j];
                if delta == 0.0 {
                    break;
                }
                let f1 = self.shifted_loss(eta, Some(j), delta) + self.lambda * target.abs();
                if f1 <= f0 {
                    w[j] = target;
                    for (i, e) in eta.iter_mut().enumerate() {
                        *e += delta * self.col(i, j);
                    }
                    break;
                }
                curv *= 2.0;
            }
        }
    }

    /// Newton step on the intercept and the nonzero weights with their signs
    /// held fixed; weights that would cross zero are clipped to zero.
    fn support_newton(&self, b: &mut f64, w: &mut [f64], eta: &mut Vec<f64>) {
        let support: Vec<usize> = (0..self.d).filter(|&j| w[j] != 0.0).collect();
        let m = support.len() + 1;
        let x = |i: usize, k: usize| if k == 0 { 1.0 } else { self.col(i, support[k - 1]) };
        let mut hess = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for i in 0..self.n {
            let p = sigmoid(eta[i]);
            let r = p - self.y[i] as f64;
            let wt = p * (1.0 - p);
            for a in 0..m {
                let xa = x(i, a);
                rhs[a] -= r * xa;
                for c in a..m {
                    hess[a * m + c] += wt * xa * x(i, c);
                }
            }
        }
        let nf = self.n as f64;
        for a in 0..m {
            rhs[a] /= nf;
            if a > 0 {
                rhs[a] -= self.lambda * w[support[a - 1]].signum();
            }
            for c in a..m {
                hess[a * m + c] /= nf;
                hess[c * m + a] = hess[a * m + c];
            }
        }
        let Some(step) = solve_spd(&hess, &rhs, m) else {
            return;
        };
        let f0 = self.objective(eta, w);
        let mut t = 1.0;
        for _ in 0..40 {
            let mut cand = w.to_vec();
            for (k, &j) in support.iter().enumerate() {
                let v = w[j] + t * step[k + 1];
                cand[j] = if v.signum() == w[j].signum() { v } else { 0.0 };
            }
            let cb = *b + t * step[0];
            let ce = self.eta(cb, &cand);
            let f = self.objective(&ce, &cand);
            // near the optimum the decrease of a full step sits below rounding
            let slack = if t == 1.0 { 4.0 * f64::EPSILON * f0.abs() } else { 0.0 };
            if f < f0 || (slack > 0.0 && f <= f0 + slack) {
                *b = cb;
                w.copy_from_slice(&cand);
                *eta = ce;
                return;
            }
            t *= 0.5;
        }
    }
}

/// Cholesky solve of a symmetric positive definite system, with a growing
/// diagonal jitter when the matrix is numerically singular.
fn solve_spd(a: &[f64], b: &[f64], m: usize) -> Option<Vec<f64>> {
    let scale = (0..m).map(|i| a[i * m + i]).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut l = vec![0.0; m * m];
        let mut ok = true;
        'outer: for i in 0..m {
            for j in 0..=i {
                let mut s = a[i * m + j] + if i == j { jitter } else { 0.0 };
                for k in 0..j {
                    s -= l[i * m + k] * l[j * m + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        ok = false;
                        break 'outer;
                    }
                    l[i * m + i] = s.sqrt();
                } else {
                    l[i * m + j] = s / l[j * m + j];
                }
            }
        }
        if ok {
            let mut y = vec![0.0; m];
            for i in 0..m {
                let s: f64 = (0..i).map(|k| l[i * m + k] * y[k]).sum();
                y[i] = (b[i] - s) / l[i * m + i];
            }
            let mut x = vec![0.0; m];
            for i in (0..m).rev() {
                let s: f64 = (i + 1..m).map(|k| l[k * m + i] * x[k]).sum();
                x[i] = (y[i] - s) / l[i * m + i];
            }
            return x.iter().all(|v| v.is_finite()).then_some(x);
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    None
}

/// Minimizes mean logistic loss + lambda * ||w||_1 on z-scored columns.
pub fn train_logreg_l1(data: &TrainMatrix, params: &LogregParams) -> Result<LogregModel> {
    data.check_trainable()?;
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {}", params.lambda)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::Config("tol must be positive".into()));
    }
    let scaler = Scaler::fit(&data.x);
    let n = data.len();
    let d = data.x.n_cols();
    let z = scaler.transform(&data.x);
    let prob = Problem {
        z: z.rows().flatten().copied().collect(),
        y: &data.y,
        n,
        d,
        lambda: params.lambda,
    };

    let base = data.positives() as f64 / n as f64;
    let mut b = (base / (1.0 - base)).ln();
    let mut w = vec![0.0f64; d];
    let mut eta = vec![b; n];
    for sweep in 0..=params.max_iter {
        if !prob.mean_loss(&eta).is_finite() {
            return Err(Error::Numeric("logistic loss overflowed".into()));
        }
        let (g0, g) = prob.gradient(&eta);
        if kkt_violation(g0, &g, &w, params.lambda) <= params.tol {
            return Ok(LogregModel {
                scaler,
                weights: w,
                intercept: b,
                sweeps: sweep,
            });
        }
        if sweep == params.max_iter {
            break;
        }
        // coordinate sweeps settle which weights are zero; the Newton step
        // converges fast on the rest even when columns are nearly collinear
        prob.cd_sweep(&mut b, &mut w, &mut eta);
        prob.support_newton(&mut b, &mut w, &mut eta);
    }
    Err(Error::Convergence(format!(
        "L1 logistic regression did not reach tol {} in {} sweeps",
        params.tol, params.max_iter
    )))
}

/// Largest violation of the subgradient optimality condition.
fn kkt_violation(g0: f64, g: &[f64], w: &[f64], lambda: f64) -> f64 {
    let mut worst = g0.abs();
    for (gj, wj) in g.iter().zip(w) {
        let v = if *wj != 0.0 {
            (gj + lambda * wj.signum()).abs()
        } else {
            (gj.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}
