//! Per-patch radiomics: first-order statistics, co-occurrence (Haralick)
//! texture, Tamura texture, and third-order moments.
//!
//! Each modality yields 13 values; a paired sample yields 26 in the order
//! given by [`crate::model::feature_name`].

mod glcm;
mod tamura;

pub use glcm::{compute_glcm, haralick_features, quantize_patch, GlcmMatrix, HaralickFeatures};
pub use tamura::{tamura_coarseness, tamura_features, tamura_max_scale, TamuraFeatures};

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::Grid;
use crate::model::{FeatureVector, PairedSample, Patch, FEATURES_PER_MODALITY, FEATURE_COUNT};
use crate::num::Real;
use crate::stats::{percentile_sorted, sorted_copy, MomentSummary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats<T> {
    pub p10: T,
    pub mean: T,
    pub skewness: T,
    pub kurtosis: T,
}

/// 10th percentile, mean, skewness and excess kurtosis (population moments).
pub fn distribution_stats<T: Real>(patch: &Grid<T>) -> DistributionStats<T> {
    let values = patch.as_slice();
    let m = MomentSummary::of(values);
    DistributionStats {
        p10: percentile_sorted(&sorted_copy(values), 10.0),
        mean: m.mean,
        skewness: m.skewness(),
        kurtosis: m.excess_kurtosis(),
    }
}

/// The 13 single-modality features, in canonical order.
pub fn modality_features<T: Real>(patch: &Grid<T>, levels: usize) -> Result<[T; FEATURES_PER_MODALITY]> {
    let d = distribution_stats(patch);
    let q = quantize_patch(patch, levels);
    let h = haralick_features(&compute_glcm(&q, levels)?);
    let t = tamura_features(patch);
    Ok([
        d.p10,
        d.mean,
        d.skewness,
        d.kurtosis,
        h.asm,
        h.contrast,
        h.correlation,
        h.dissimilarity,
        h.energy,
        h.homogeneity,
        t.coarseness,
        t.contrast,
        t.roughness,
    ])
}

fn patch_features(p: &Patch) -> Result<[f64; FEATURES_PER_MODALITY]> {
    modality_features(&p.pixels().to_real::<f64>(), p.modality.glcm_levels())
}

pub fn extract_features(sample: &PairedSample) -> Result<FeatureVector> {
    let t2 = patch_features(&sample.t2)?;
    let adc = patch_features(&sample.adc)?;
    let mut values = [0.0; FEATURE_COUNT];
    values[..FEATURES_PER_MODALITY].copy_from_slice(&t2);
    values[FEATURES_PER_MODALITY..].copy_from_slice(&adc);
    FeatureVector::new(values, sample.label(), sample.zone(), sample.sample_id())
}

/// Extracts every sample in parallel; output order follows input order.
pub fn extract_batch(samples: &[PairedSample]) -> Result<Vec<FeatureVector>> {
    samples.par_iter().map(extract_features).collect()
}
