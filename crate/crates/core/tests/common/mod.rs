//! Naive reference implementations and fixtures shared by the integration
//! tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zonelesion::classify::{Matrix, TrainMatrix};
use zonelesion::Grid;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random square patch of f32-representable values; `style` cycles through
/// continuous noise, a few integer levels (many ties), a ramp plus noise,
/// and a blob on a flat background.
pub fn random_patch(rng: &mut impl Rng, size: usize, style: usize) -> Grid<f64> {
    let cx = rng.gen_range(0.0..size as f64);
    let cy = rng.gen_range(0.0..size as f64);
    let slope = rng.gen_range(-20.0..20.0);
    Grid::from_fn(size, size, |r, c| {
        let v: f64 = match style % 4 {
            0 => rng.gen_range(0.0..1000.0),
            1 => rng.gen_range(0..6) as f64,
            2 => 500.0 + slope * (r as f64 + 0.5 * c as f64) + rng.gen_range(-15.0..15.0),
            _ => {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                300.0 - 120.0 * (-d2 / 8.0).exp() + rng.gen_range(-5.0..5.0)
            }
        };
        v as f32 as f64
    })
}

/// Below this magnitude two values count as equal: both sides then differ
/// only by cancellation rounding around an exact zero.
pub const ZERO_FLOOR: f64 = 1e-14;

/// Relative error, or 0 when both values sit within [`ZERO_FLOOR`] of each other.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if (a - b).abs() <= ZERO_FLOOR {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn naive_percentile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
}

/// p10, mean, skewness, excess kurtosis by two-pass population moments.
pub fn naive_first_order(v: &[f64]) -> [f64; 4] {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let (skew, kurt) = if var > 0.0 {
        (m3 / var.powf(1.5), m4 / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };
    [naive_percentile(v, 10.0), mean, skew, kurt]
}

pub fn naive_quantize(v: &[f64], levels: usize) -> Vec<usize> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter()
        .map(|&x| {
            if hi == lo {
                0
            } else {
                (((x - lo) / (hi - lo) * levels as f64).floor() as usize).min(levels - 1)
            }
        })
        .collect()
}

/// Co-occurrence probabilities of horizontally adjacent pairs.
pub fn naive_glcm(q: &[usize], rows: usize, cols: usize) -> HashMap<(usize, usize), f64> {
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for r in 0..rows {
        for c in 0..cols - 1 {
            *counts.entry((q[r * cols + c], q[r * cols + c + 1])).or_default() += 1;
        }
    }
    let total = (rows * (cols - 1)) as f64;
    counts.into_iter().map(|(k, n)| (k, n as f64 / total)).collect()
}

/// asm, contrast, correlation, dissimilarity, energy, homogeneity.
pub fn naive_haralick(p: &HashMap<(usize, usize), f64>) -> [f64; 6] {
    let mu_x: f64 = p.iter().map(|(&(i, _), v)| i as f64 * v).sum();
    let mu_y: f64 = p.iter().map(|(&(_, j), v)| j as f64 * v).sum();
    let sx = p.iter().map(|(&(i, _), v)| (i as f64 - mu_x).powi(2) * v).sum::<f64>().sqrt();
    let sy = p.iter().map(|(&(_, j), v)| (j as f64 - mu_y).powi(2) * v).sum::<f64>().sqrt();
    let mut out = [0.0; 6];
    let mut cov = 0.0;
    for (&(i, j), &v) in p {
        let d = i as f64 - j as f64;
        out[0] += v * v;
        out[1] += d * d * v;
        out[3] += d.abs() * v;
        out[5] += v / (1.0 + d * d);
        cov += (i as f64 - mu_x) * (j as f64 - mu_y) * v;
    }
    out[2] = if sx * sy > 0.0 { cov / (sx * sy) } else { 1.0 };
    out[4] = out[0].sqrt();
    out
}

fn window_mean(v: &[f64], cols: usize, r0: i64, c0: i64, s: i64) -> f64 {
    let mut sum = 0.0;
    for r in r0..r0 + s {
        for c in c0..c0 + s {
            sum += v[r as usize * cols + c as usize];
        }
    }
    sum / (s * s) as f64
}

/// Coarseness by direct window sums. At scale `k >= 1` the compared windows
/// are `[x - 2^k, x)` and `[x, x + 2^k)` along each axis; at `k = 0` they are
/// the pixel and its right (lower) neighbour.
pub fn naive_coarseness(v: &[f64], rows: usize, cols: usize) -> f64 {
    let mut kmax = 0;
    while 2 * (1usize << (kmax + 1)) <= rows.min(cols) {
        kmax += 1;
    }
    let inside = |r0: i64, c0: i64, s: i64| r0 >= 0 && c0 >= 0 && r0 + s <= rows as i64 && c0 + s <= cols as i64;
    let (mut total, mut count) = (0.0, 0usize);
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let mut best: Option<(f64, usize)> = None;
            for k in 0..=kmax {
                let s = 1i64 << k;
                let back = if k == 0 { 0 } else { s };
                let (l, rt) = ((r - back / 2, c - back), (r - back / 2, c - back + s));
                let (u, dn) = ((r - back, c - back / 2), (r - back + s, c - back / 2));
                if ![l, rt, u, dn].iter().all(|&(a, b)| inside(a, b, s)) {
                    continue;
                }
                let eh = (window_mean(v, cols, rt.0, rt.1, s) - window_mean(v, cols, l.0, l.1, s)).abs();
                let ev = (window_mean(v, cols, dn.0, dn.1, s) - window_mean(v, cols, u.0, u.1, s)).abs();
                let e = eh.max(ev);
                if best.map_or(true, |(b, _)| e > b) {
                    best = Some((e, k));
                }
            }
            if let Some((_, k)) = best {
                total += (1u64 << k) as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        total / count as f64
    }
}

pub fn naive_tamura_contrast(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    if var == 0.0 {
        0.0
    } else {
        var.sqrt() / (m4 / (var * var)).powf(0.25)
    }
}

/// All 13 features of one patch, computed from the definitions.
pub fn naive_features(patch: &Grid<f64>, levels: usize) -> [f64; 13] {
    let (rows, cols) = patch.shape();
    let v = patch.as_slice();
    let fo = naive_first_order(v);
    let h = naive_haralick(&naive_glcm(&naive_quantize(v, levels), rows, cols));
    let coarse = naive_coarseness(v, rows, cols);
    let contrast = naive_tamura_contrast(v);
    [
        fo[0], fo[1], fo[2], fo[3], h[0], h[1], h[2], h[3], h[4], h[5], coarse, contrast, coarse + contrast,
    ]
}

/// Mann-Whitney concordance with ties counted one half.
pub fn concordance(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

/// Two Gaussian classes in `d` dimensions, positives shifted by `shift`.
pub fn gaussian_classes(seed: u64, n_pos: usize, n_neg: usize, d: usize, shift: f64) -> TrainMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n_pos + n_neg {
        let label = u8::from(i < n_pos);
        let row: Vec<f64> = (0..d)
            .map(|j| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * (1.0 + j as f64 * 0.3) + if label == 1 { shift } else { 0.0 }
            })
            .collect();
        rows.push(row);
        y.push(label);
    }
    TrainMatrix::new(Matrix::from_rows(&rows).unwrap(), y, None).unwrap()
}

/// Unpenalized logistic regression by Newton's method with a dense solve.
/// Returns (intercept, weights) in the units of `x`.
pub fn newton_logreg(x: &[Vec<f64>], y: &[u8]) -> (f64, Vec<f64>) {
    let d = x[0].len() + 1;
    let mut beta = vec![0.0; d];
    for _ in 0..100 {
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        for (row, &label) in x.iter().zip(y) {
            let xi: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
            let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            for a in 0..d {
                g[a] += (p - label as f64) * xi[a];
                for b in 0..d {
                    h[a][b] += p * (1.0 - p) * xi[a] * xi[b];
                }
            }
        }
        let step = gauss_solve(h, g);
        for (b, s) in beta.iter_mut().zip(&step) {
            *b -= s;
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
    }
    (beta[0], beta[1..].to_vec())
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Mean logistic loss of probabilities `p` against labels.
pub fn log_loss(p: &[f64], y: &[u8]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / p.len() as f64
}

/// Random image whose pixel count is 1 mod 100, so every cut-off and decile
/// percentile lands exactly on an order statistic.
pub fn random_image(rng: &mut impl Rng) -> Grid<f64> {
    let side = [49, 51, 99, 101][rng.gen_range(0..4)];
    let gain = rng.gen_range(0.5..3.0);
    let offset = rng.gen_range(-100.0..400.0);
    let skew = rng.gen_range(0.5..2.5);
    Grid::from_fn(side, side, |_, _| {
        let u: f64 = rng.gen_range(0.0..1.0);
        offset + gain * 1000.0 * u.powf(skew)
    })
}
