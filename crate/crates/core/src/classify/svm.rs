//! Soft-margin RBF SVM solved by SMO with second-order working-set
//! selection, followed by sigmoid calibration of the decision values.

use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix, TrainMatrix};
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (n_features * Var(X))` over every entry of the training matrix.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Gamma,
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 0.05,
            gamma: Gamma::Scale,
            tol: 1e-4,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub gamma: f64,
    pub support_vectors: Matrix,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

#[inline]
fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvmModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        let s: f64 = self
            .support_vectors
            .rows()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sv, row, self.gamma))
            .sum();
        s - self.rho
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        platt_prob(self.decision(row), self.platt_a, self.platt_b)
    }
}

fn platt_prob(f: f64, a: f64, b: f64) -> f64 {
    sigmoid(-(f * a + b))
}

pub(crate) fn scale_gamma(x: &Matrix) -> f64 {
    let n = (x.n_rows() * x.n_cols()) as f64;
    let all = || x.rows().flatten();
    let mean = all().sum::<f64>() / n;
    let var = all().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.n_cols() as f64 * var)
    } else {
        1.0
    }
}

/// Dual solution of the C-SVM: `alpha`, gradient `G = Q alpha - e`, and bias.
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub grad: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

pub(crate) fn solve_dual(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iter = 0;
    loop {
        // working set: maximal violating i, second-order choice of j
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let (diff, quad) = if y[t] > 0.0 {
                    if lower(alpha[t]) {
                        continue;
                    }
                    gmax2 = gmax2.max(grad[t]);
                    (gmax + grad[t], k[i * n + i] + k[t * n + t] - 2.0 * y[i] * q(i, t))
                } else {
                    if upper(alpha[t]) {
                        continue;
                    }
                    gmax2 = gmax2.max(-grad[t]);
                    (gmax - grad[t], k[i * n + i] + k[t * n + t] + 2.0 * y[i] * q(i, t))
                };
                if diff > 0.0 {
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax + gmax2 >= tol => (i, j),
            _ => break,
        };
        if iter >= max_iter {
            return Err(Error::Convergence(format!("SMO hit the {max_iter}-iteration cap")));
        }
        iter += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (k[i * n + i] + k[j * n + j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[i * n + i] + k[j * n + j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(DualSolution {
        alpha,
        grad,
        rho,
        iterations: iter,
    })
}

/// Dual objective `sum(alpha) - 0.5 alpha' Q alpha` (to be maximized).
pub(crate) fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(grad)
        .map(|(a, g)| a - 0.5 * a * (g + 1.0))
        .sum()
}

/// Fits `P(y=1|f) = 1 / (1 + exp(A f + B))` by regularized Newton iterations.
pub(crate) fn fit_platt(dec: &[f64], y: &[u8]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&l| l == 1).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&l| if l == 1 { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let p = sigmoid(-(f * a + b));
            let d2 = p * (1.0 - p);
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    // the calibration must increase with the decision value
    if !(a < 0.0) {
        return (-1.0, 0.0);
    }
    (a, b)
}

pub fn train_svm_rbf(data: &TrainMatrix, params: &SvmParams) -> Result<SvmModel> {
    data.check_trainable()?;
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::Config("tol must be positive".into()));
    }
    let gamma = match params.gamma {
        Gamma::Scale => scale_gamma(&data.x),
        Gamma::Value(g) if g > 0.0 && g.is_finite() => g,
        Gamma::Value(g) => return Err(Error::Config(format!("gamma must be positive, got {g}"))),
    };
    let n = data.len();
    let x = &data.x;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(x.row(i), x.row(j), gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let y: Vec<f64> = data.y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let sol = solve_dual(&k, &y, params.c, params.tol, max_iter)?;

    let sv: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    let coef: Vec<f64> = sv.iter().map(|&i| sol.alpha[i] * y[i]).collect();
    let dec: Vec<f64> = (0..n)
        .map(|i| sv.iter().zip(&coef).map(|(&s, c)| c * k[s * n + i]).sum::<f64>() - sol.rho)
        .collect();
    let (platt_a, platt_b) = fit_platt(&dec, &data.y);
    Ok(SvmModel {
        gamma,
        support_vectors: x.select_rows(&sv),
        coef,
        rho: sol.rho,
        platt_a,
        platt_b,
        dual_objective: dual_objective(&sol.alpha, &sol.grad),
        iterations: sol.iterations,
    })
}
