use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::num::Real;

/// Per-patch min-max binning onto `0..levels`. A constant patch maps to 0.
pub fn quantize_patch<T: Real>(patch: &Grid<T>, levels: usize) -> Grid<usize> {
    assert!(levels >= 2, "at least two gray levels");
    let values = patch.as_slice();
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    let top = levels - 1;
    let scale = T::from_usize_lossy(levels);
    patch.map(|v| {
        if range <= T::zero() {
            0
        } else {
            let bin = ((v - lo) / range * scale).floor();
            bin.to_usize().unwrap_or(0).min(top)
        }
    })
}

/// Normalized co-occurrence distribution for the horizontal one-pixel offset
/// (0°, dx=1), counting ordered pairs `(x[r,c], x[r,c+1])` only.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix<T> {
    levels: usize,
    p: Vec<T>,
    pub mu_x: T,
    pub mu_y: T,
    pub sigma_x: T,
    pub sigma_y: T,
}

impl<T: Real> GlcmMatrix<T> {
    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> T {
        self.p[i * self.levels + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.p
    }

    /// Row marginal `p_x(i) = sum_j p(i,j)`.
    pub fn row_marginal(&self) -> Vec<T> {
        (0..self.levels)
            .map(|i| (0..self.levels).map(|j| self.p(i, j)).sum())
            .collect()
    }

    /// Column marginal `p_y(j) = sum_i p(i,j)`.
    pub fn col_marginal(&self) -> Vec<T> {
        (0..self.levels)
            .map(|j| (0..self.levels).map(|i| self.p(i, j)).sum())
            .collect()
    }
}

fn marginal_moments<T: Real>(marginal: &[T]) -> (T, T) {
    let mu: T = marginal
        .iter()
        .enumerate()
        .map(|(i, &m)| T::from_usize_lossy(i) * m)
        .sum();
    let var: T = marginal
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let d = T::from_usize_lossy(i) - mu;
            d * d * m
        })
        .sum();
    (mu, var.sqrt())
}

pub fn compute_glcm<T: Real>(q: &Grid<usize>, levels: usize) -> Result<GlcmMatrix<T>> {
    if q.cols() < 2 || q.rows() == 0 {
        return Err(Error::Shape(format!(
            "co-occurrence needs width >= 2, got {}x{}",
            q.rows(),
            q.cols()
        )));
    }
    let mut counts = vec![0u32; levels * levels];
    for r in 0..q.rows() {
        for c in 0..q.cols() - 1 {
            let (a, b) = (q.get(r, c), q.get(r, c + 1));
            if a >= levels || b >= levels {
                return Err(Error::OutOfRange {
                    index: a.max(b),
                    len: levels,
                });
            }
            counts[a * levels + b] += 1;
        }
    }
    let pairs = T::from_usize_lossy(q.rows() * (q.cols() - 1));
    let p: Vec<T> = counts
        .iter()
        .map(|&c| T::from_u32(c).expect("count") / pairs)
        .collect();
    let mut g = GlcmMatrix {
        levels,
        p,
        mu_x: T::zero(),
        mu_y: T::zero(),
        sigma_x: T::zero(),
        sigma_y: T::zero(),
    };
    (g.mu_x, g.sigma_x) = marginal_moments(&g.row_marginal());
    (g.mu_y, g.sigma_y) = marginal_moments(&g.col_marginal());
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaralickFeatures<T> {
    pub asm: T,
    pub contrast: T,
    pub correlation: T,
    pub dissimilarity: T,
    pub energy: T,
    pub homogeneity: T,
}

/// The six Haralick statistics. Homogeneity is the inverse difference moment
/// `sum p/(1+(i-j)^2)`; correlation is 1 when either marginal has zero spread.
/// `asm` is reported as `energy * energy`, so `energy^2 == asm` holds exactly
/// (and `sqrt(asm) == energy` by correct rounding).
pub fn haralick_features<T: Real>(g: &GlcmMatrix<T>) -> HaralickFeatures<T> {
    let (mut sum_sq, mut contrast, mut dissimilarity, mut homogeneity, mut cross) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..g.levels {
        let fi = T::from_usize_lossy(i);
        for j in 0..g.levels {
            let p = g.p(i, j);
            if p == T::zero() {
                continue;
            }
            let fj = T::from_usize_lossy(j);
            let d = fi - fj;
            sum_sq += p * p;
            contrast += d * d * p;
            dissimilarity += d.abs() * p;
            homogeneity += p / (T::one() + d * d);
            cross += fi * fj * p;
        }
    }
    let spread = g.sigma_x * g.sigma_y;
    let correlation = if spread > T::zero() {
        (cross - g.mu_x * g.mu_y) / spread
    } else {
        T::one()
    };
    let energy = sum_sq.sqrt();
    HaralickFeatures {
        asm: energy * energy,
        contrast,
        correlation,
        dissimilarity,
        energy,
        homogeneity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glcm_of(rows: &[&[usize]], levels: usize) -> GlcmMatrix<f64> {
        compute_glcm(&Grid::from_rows(rows), levels).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let g = Grid::from_rows(&[[0.0f64, 255.0], [0.0, 255.0]]);
        assert_eq!(quantize_patch(&g, 2), Grid::from_rows(&[[0usize, 1], [0, 1]]));
        assert!(quantize_patch(&Grid::filled(4, 4, 3.5f32), 32)
            .as_slice()
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn two_row_glcm() {
        let g = glcm_of(&[&[0, 0], &[1, 1]], 2);
        assert_eq!(g.p(0, 0), 0.5);
        assert_eq!(g.p(1, 1), 0.5);
        assert_eq!(g.p(0, 1), 0.0);
        assert_eq!((g.mu_x, g.mu_y, g.sigma_x, g.sigma_y), (0.5, 0.5, 0.5, 0.5));
        let h = haralick_features(&g);
        assert_eq!(h.asm, 0.5f64.sqrt() * 0.5f64.sqrt());
        assert!((h.asm - 0.5).abs() < 1e-15);
        assert_eq!(h.energy, 0.5f64.sqrt());
        assert_eq!((h.contrast, h.dissimilarity, h.homogeneity), (0.0, 0.0, 1.0));
        assert!((h.correlation - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_glcm() {
        let g = glcm_of(&[&[0, 0, 0], &[0, 0, 0]], 4);
        assert_eq!(g.p(0, 0), 1.0);
        let h = haralick_features(&g);
        assert_eq!((h.asm, h.energy, h.contrast, h.homogeneity, h.correlation), (1.0, 1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn uniform_two_level_glcm() {
        // pairs (0,0) (0,1) (1,0) (1,1): each p = 0.25
        let g = glcm_of(&[&[0, 0, 1, 1, 0]], 2);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g.p(i, j), 0.25);
            }
        }
        let h = haralick_features(&g);
        assert_eq!(h.contrast, 0.5);
        assert_eq!(h.correlation, 0.0);
    }

    #[test]
    fn narrow_grid_is_rejected() {
        assert!(compute_glcm::<f64>(&Grid::from_rows(&[[0usize], [1]]), 2).is_err());
    }
}
