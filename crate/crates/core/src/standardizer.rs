//! Landmark-based intensity range standardization for T2-weighted images.
//!
//! Training maps each image's `[p_low, p_high]` cut-off range linearly onto
//! the standard scale and averages the mapped landmark percentiles. Applying
//! the model builds a piecewise-linear map from the image's own cut-off and
//! landmark percentiles onto `(s_min, mean_landmarks.., s_max)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::num::Real;
use crate::stats::{percentile_sorted, sorted_copy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StandardizationConfig {
    pub cutoff_low: f64,
    pub cutoff_high: f64,
    pub landmarks: Vec<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for StandardizationConfig {
    fn default() -> Self {
        Self {
            cutoff_low: 1.0,
            cutoff_high: 99.0,
            landmarks: (1..=9).map(|d| f64::from(d) * 10.0).collect(),
            scale_min: 0.0,
            scale_max: 4095.0,
        }
    }
}

impl StandardizationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("standardizer: {m}")));
        if !(0.0..=100.0).contains(&self.cutoff_low) || !(0.0..=100.0).contains(&self.cutoff_high) {
            return bad("cut-offs must lie in [0, 100]");
        }
        if self.landmarks.is_empty() {
            return bad("at least one landmark percentile");
        }
        if self.landmarks.windows(2).any(|w| w[0] >= w[1]) {
            return bad("landmarks must be strictly increasing");
        }
        if self.landmarks[0] <= self.cutoff_low || *self.landmarks.last().unwrap() >= self.cutoff_high {
            return bad("landmarks must lie strictly between the cut-offs");
        }
        if !(self.scale_min < self.scale_max) {
            return bad("scale_min must be below scale_max");
        }
        Ok(())
    }

    /// Cut-offs and landmarks in ascending order.
    fn knot_percentiles(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.landmarks.len() + 2);
        p.push(self.cutoff_low);
        p.extend_from_slice(&self.landmarks);
        p.push(self.cutoff_high);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationModel<T> {
    pub config: StandardizationConfig,
    /// Learned landmark positions on the standard scale, non-decreasing.
    pub mean_landmarks: Vec<T>,
}

/// Percentiles at cut-offs and landmarks; errors when the cut-offs coincide.
fn image_knots<T: Real>(image: &Grid<T>, config: &StandardizationConfig) -> Result<Vec<T>> {
    if image.len() < 2 {
        return Err(Error::Degenerate("image needs at least two pixels".into()));
    }
    if let Some(v) = image.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite intensity {v}")));
    }
    let sorted = sorted_copy(image.as_slice());
    let knots: Vec<T> = config
        .knot_percentiles()
        .into_iter()
        .map(|p| percentile_sorted(&sorted, p))
        .collect();
    if knots[0] >= knots[knots.len() - 1] {
        return Err(Error::Degenerate(format!(
            "cut-off percentiles coincide at {}",
            knots[0]
        )));
    }
    Ok(knots)
}

pub fn fit_standardizer<T: Real>(
    images: &[Grid<T>],
    config: &StandardizationConfig,
) -> Result<StandardizationModel<T>> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (smin, smax) = (T::lit(config.scale_min), T::lit(config.scale_max));
    let k = config.landmarks.len();
    let mut sums = vec![T::zero(); k];
    for image in images {
        let knots = image_knots(image, config)?;
        let (lo, hi) = (knots[0], knots[k + 1]);
        for (sum, &x) in sums.iter_mut().zip(&knots[1..=k]) {
            *sum += smin + (x - lo) / (hi - lo) * (smax - smin);
        }
    }
    let n = T::from_usize_lossy(images.len());
    let mut mean_landmarks: Vec<T> = sums.into_iter().map(|s| s / n).collect();
    // rounding in the mean can break monotonicity by an ulp
    for i in 1..k {
        if mean_landmarks[i] < mean_landmarks[i - 1] {
            mean_landmarks[i] = mean_landmarks[i - 1];
        }
    }
    for m in &mut mean_landmarks {
        *m = m.max(smin).min(smax);
    }
    Ok(StandardizationModel {
        config: config.clone(),
        mean_landmarks,
    })
}

/// Piecewise-linear map through `(xs[i], ys[i])`. Knots may repeat; a value
/// equal to a repeated knot takes the lower segment. Outside the knot range
/// the first/last non-degenerate segment is extended.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear<T> {
    xs: Vec<T>,
    ys: Vec<T>,
}

impl<T: Real> PiecewiseLinear<T> {
    pub fn new(xs: Vec<T>, ys: Vec<T>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2);
        Self { xs, ys }
    }

    fn segment(&self, i: usize, v: T) -> T {
        let (x0, x1, y0, y1) = (self.xs[i], self.xs[i + 1], self.ys[i], self.ys[i + 1]);
        y0 + (v - x0) / (x1 - x0) * (y1 - y0)
    }

    fn first_open_segment(&self) -> usize {
        (0..self.xs.len() - 1)
            .find(|&i| self.xs[i + 1] > self.xs[i])
            .expect("non-degenerate knot range")
    }

    fn last_open_segment(&self) -> usize {
        (0..self.xs.len() - 1)
            .rev()
            .find(|&i| self.xs[i + 1] > self.xs[i])
            .expect("non-degenerate knot range")
    }

    pub fn eval(&self, v: T) -> T {
        let n = self.xs.len();
        // number of knots strictly below v
        let below = self.xs.partition_point(|&x| x < v);
        if below == 0 {
            if v == self.xs[0] {
                return self.ys[0];
            }
            return self.segment(self.first_open_segment(), v);
        }
        if below == n {
            return self.segment(self.last_open_segment(), v);
        }
        // xs[below-1] < v <= xs[below]
        self.segment(below - 1, v)
    }
}

impl<T: Real> StandardizationModel<T> {
    /// Bounds applied after extrapolation: `[s_min - 0.1 r, s_max + 0.1 r]`.
    pub fn clamp_range(&self) -> (T, T) {
        let (smin, smax) = (self.config.scale_min, self.config.scale_max);
        let pad = 0.1 * (smax - smin);
        (T::lit(smin - pad), T::lit(smax + pad))
    }

    /// The image-specific map used by [`apply_standardizer`].
    pub fn mapping_for(&self, image: &Grid<T>) -> Result<PiecewiseLinear<T>> {
        if self.mean_landmarks.len() != self.config.landmarks.len() {
            return Err(Error::Config(format!(
                "model has {} landmarks but config lists {}",
                self.mean_landmarks.len(),
                self.config.landmarks.len()
            )));
        }
        let xs = image_knots(image, &self.config)?;
        let mut ys = Vec::with_capacity(xs.len());
        ys.push(T::lit(self.config.scale_min));
        ys.extend_from_slice(&self.mean_landmarks);
        ys.push(T::lit(self.config.scale_max));
        Ok(PiecewiseLinear::new(xs, ys))
    }
}

pub fn apply_standardizer<T: Real>(model: &StandardizationModel<T>, image: &Grid<T>) -> Result<Grid<T>> {
    let map = model.mapping_for(image)?;
    let (lo, hi) = model.clamp_range();
    Ok(image.map(|v| map.eval(v).max(lo).min(hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, a: f64, b: f64) -> Grid<f64> {
        Grid::from_fn(1, n, |_, c| a * (c as f64).powf(1.3) + b)
    }

    #[test]
    fn single_image_model_is_its_own_landmarks() {
        let img = ramp(101, 1.0, 0.0);
        let cfg = StandardizationConfig::default();
        let model = fit_standardizer(&[img.clone()], &cfg).unwrap();
        let knots = image_knots(&img, &cfg).unwrap();
        for (m, x) in model.mean_landmarks.iter().zip(&knots[1..10]) {
            let mapped = (x - knots[0]) / (knots[10] - knots[0]) * 4095.0;
            assert_eq!(*m, mapped);
        }
    }

    #[test]
    fn affine_copies_share_landmarks() {
        let cfg = StandardizationConfig::default();
        let a = fit_standardizer(&[ramp(101, 1.0, 0.0)], &cfg).unwrap();
        let b = fit_standardizer(&[ramp(101, 3.5, 120.0)], &cfg).unwrap();
        for (x, y) in a.mean_landmarks.iter().zip(&b.mean_landmarks) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        let cfg = StandardizationConfig::default();
        let flat = Grid::filled(8, 8, 2.0f64);
        assert!(matches!(fit_standardizer(&[flat.clone()], &cfg), Err(Error::Degenerate(_))));
        let model = fit_standardizer(&[ramp(101, 1.0, 0.0)], &cfg).unwrap();
        assert!(matches!(apply_standardizer(&model, &flat), Err(Error::Degenerate(_))));
        assert!(matches!(fit_standardizer::<f64>(&[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = StandardizationConfig::default();
        cfg.landmarks = vec![50.0, 40.0];
        assert!(cfg.validate().is_err());
        let mut cfg = StandardizationConfig::default();
        cfg.scale_max = cfg.scale_min;
        assert!(cfg.validate().is_err());
        let mut cfg = StandardizationConfig::default();
        cfg.landmarks = vec![0.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn landmark_mismatch_is_rejected() {
        let cfg = StandardizationConfig::default();
        let mut model = fit_standardizer(&[ramp(101, 1.0, 0.0)], &cfg).unwrap();
        model.mean_landmarks.pop();
        assert!(matches!(apply_standardizer(&model, &ramp(101, 1.0, 0.0)), Err(Error::Config(_))));
    }

    #[test]
    fn repeated_knots_stay_monotone() {
        let map = PiecewiseLinear::new(vec![0.0, 1.0, 1.0, 2.0], vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(map.eval(1.0), 10.0);
        assert_eq!(map.eval(0.5), 5.0);
        assert_eq!(map.eval(1.5), 25.0);
        assert_eq!(map.eval(-1.0), -10.0);
        assert_eq!(map.eval(3.0), 40.0);
    }
}
