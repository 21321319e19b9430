use crate::grid::Grid;
use crate::num::Real;
use crate::stats::MomentSummary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TamuraFeatures<T> {
    pub coarseness: T,
    pub contrast: T,
    pub roughness: T,
}

/// Largest scale exponent `k` whose pair of `2^k` windows fits side by side:
/// `2 * 2^k <= min(rows, cols)`. 16×16 gives 3, 6×6 gives 1.
pub fn tamura_max_scale(rows: usize, cols: usize) -> u32 {
    let n = rows.min(cols);
    let mut k = 0;
    while 2usize << (k + 1) <= n {
        k += 1;
    }
    k
}

/// Inclusive-exclusive summed-area table with a zero border.
struct Integral<T> {
    cols: usize,
    sums: Vec<T>,
}

impl<T: Real> Integral<T> {
    fn new(g: &Grid<T>) -> Self {
        let cols = g.cols() + 1;
        let mut sums = vec![T::zero(); (g.rows() + 1) * cols];
        for r in 0..g.rows() {
            let mut row = T::zero();
            for c in 0..g.cols() {
                row += g.get(r, c);
                sums[(r + 1) * cols + c + 1] = sums[r * cols + c + 1] + row;
            }
        }
        Self { cols, sums }
    }

    /// Sum over rows `r0..r0+size`, cols `c0..c0+size`.
    fn square(&self, r0: usize, c0: usize, size: usize) -> T {
        let (r1, c1) = (r0 + size, c0 + size);
        let at = |r: usize, c: usize| self.sums[r * self.cols + c];
        at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0)
    }
}

/// Neighborhood-average coarseness.
///
/// For each scale `k`, `A_k` averages the `2^k`×`2^k` window anchored
/// `2^k/2` above/left of a pixel. The horizontal response compares the
/// windows at column offsets `-h` and `2^k - h` (`h = 2^k/2`), the vertical
/// one the same along rows, so the two means are `2^k` apart. A pixel takes
/// the scale with the largest response among scales whose windows fit
/// (ties go to the smallest `k`); pixels where not even `k = 0` fits are
/// skipped. Coarseness is the mean of `2^k_best`, or 1 with no valid pixel.
pub fn tamura_coarseness<T: Real>(patch: &Grid<T>) -> T {
    let (rows, cols) = patch.shape();
    let kmax = tamura_max_scale(rows, cols);
    let integral = Integral::new(patch);
    let (rows_i, cols_i) = (rows as i64, cols as i64);
    let fits = |r0: i64, c0: i64, s: i64| r0 >= 0 && c0 >= 0 && r0 + s <= rows_i && c0 + s <= cols_i;

    let mut total = T::zero();
    let mut count = 0usize;
    for r in 0..rows_i {
        for c in 0..cols_i {
            let mut best: Option<(T, u32)> = None;
            for k in 0..=kmax {
                let s = 1i64 << k;
                let h = s / 2;
                let area = T::from_i64(s * s).expect("window area");
                // (top, left) corners of the four windows
                let left = (r - h, c - 2 * h);
                let right = (r - h, c + s - 2 * h);
                let up = (r - 2 * h, c - h);
                let down = (r + s - 2 * h, c - h);
                if ![left, right, up, down].iter().all(|&(r0, c0)| fits(r0, c0, s)) {
                    continue;
                }
                let mean = |(r0, c0): (i64, i64)| integral.square(r0 as usize, c0 as usize, s as usize) / area;
                let eh = (mean(right) - mean(left)).abs();
                let ev = (mean(down) - mean(up)).abs();
                let e = eh.max(ev);
                if best.map_or(true, |(b, _)| e > b) {
                    best = Some((e, k));
                }
            }
            if let Some((_, k)) = best {
                total += T::from_u64(1u64 << k).expect("scale");
                count += 1;
            }
        }
    }
    if count == 0 {
        T::one()
    } else {
        total / T::from_usize_lossy(count)
    }
}

/// Coarseness, contrast `sigma / alpha4^(1/4)` (0 for a flat patch) and
/// roughness `coarseness + contrast`, on raw intensities.
pub fn tamura_features<T: Real>(patch: &Grid<T>) -> TamuraFeatures<T> {
    let coarseness = tamura_coarseness(patch);
    let m = MomentSummary::of(patch.as_slice());
    let contrast = if m.std > T::zero() {
        m.std / m.alpha4.powf(T::lit(0.25))
    } else {
        T::zero()
    };
    TamuraFeatures {
        coarseness,
        contrast,
        roughness: coarseness + contrast,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_range_by_size() {
        assert_eq!(tamura_max_scale(16, 16), 3);
        assert_eq!(tamura_max_scale(6, 6), 1);
        assert_eq!(tamura_max_scale(2, 2), 0);
    }

    #[test]
    fn constant_patch() {
        let t = tamura_features(&Grid::filled(16, 16, 3.0f64));
        assert_eq!((t.coarseness, t.contrast, t.roughness), (1.0, 0.0, 1.0));
    }

    #[test]
    fn balanced_binary_contrast() {
        let g = Grid::from_fn(4, 4, |r, c| ((r + c) % 2) as f64);
        let t = tamura_features(&g);
        assert_eq!(t.contrast, 0.5);
        assert_eq!(t.roughness, t.coarseness + t.contrast);
    }

    #[test]
    fn wider_stripes_are_coarser() {
        let stripes = |period: usize| Grid::from_fn(16, 16, |_, c| ((c / (period / 2)) % 2) as f64);
        assert!(tamura_coarseness(&stripes(8)) > tamura_coarseness(&stripes(2)));
    }
}
