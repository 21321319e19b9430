//! Percentiles and population moments.

use crate::num::Real;

/// Linear-interpolation percentile of already sorted values, with
/// fractional index `p/100 * (n-1)`.
pub fn percentile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let pos = T::lit(p / 100.0) * T::from_usize_lossy(sorted.len() - 1);
    let lo = pos.floor();
    let idx = lo.to_usize().expect("non-negative index").min(sorted.len() - 1);
    if idx + 1 >= sorted.len() {
        return sorted[idx];
    }
    let frac = pos - lo;
    sorted[idx] + frac * (sorted[idx + 1] - sorted[idx])
}

pub fn sorted_copy<T: Real>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v
}

pub fn percentile<T: Real>(values: &[T], p: f64) -> T {
    percentile_sorted(&sorted_copy(values), p)
}

pub fn mean<T: Real>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len())
}

/// Population (divide-by-n) moment summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary<T> {
    pub mean: T,
    pub std: T,
    /// Third central moment.
    pub mu3: T,
    /// Fourth central moment.
    pub mu4: T,
    /// `mu4 / std^4`; zero when `std == 0`.
    pub alpha4: T,
}

impl<T: Real> MomentSummary<T> {
    pub fn of(values: &[T]) -> Self {
        let n = T::from_usize_lossy(values.len());
        let mean = mean(values);
        let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
        for &v in values {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let var = m2 / n;
        let std = var.sqrt();
        let mu3 = m3 / n;
        let mu4 = m4 / n;
        let alpha4 = if var > T::zero() { mu4 / (var * var) } else { T::zero() };
        Self {
            mean,
            std,
            mu3,
            mu4,
            alpha4,
        }
    }

    pub fn variance(&self) -> T {
        self.std * self.std
    }

    /// `mu3 / std^3`, zero for a constant sample.
    pub fn skewness(&self) -> T {
        if self.std > T::zero() {
            self.mu3 / (self.std * self.std * self.std)
        } else {
            T::zero()
        }
    }

    /// `mu4 / std^4 - 3`, zero for a constant sample.
    pub fn excess_kurtosis(&self) -> T {
        if self.std > T::zero() {
            self.alpha4 - T::lit(3.0)
        } else {
            T::zero()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decile_of_one_to_ten() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((percentile(&v, 10.0) - 1.9).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 10.0);
        assert_eq!(percentile(&[4.0f32], 50.0), 4.0);
    }

    #[test]
    fn moments_of_balanced_signs() {
        let m = MomentSummary::of(&[-1.0f64, 1.0, -1.0, 1.0]);
        assert_eq!(m.std, 1.0);
        assert_eq!(m.mu4, 1.0);
        assert_eq!(m.alpha4, 1.0);
        assert_eq!(m.excess_kurtosis(), -2.0);
        assert_eq!(m.skewness(), 0.0);
    }
}
