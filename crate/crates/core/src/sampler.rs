//! Patch extraction at finding centroids and seeded negative sampling to a
//! fixed 1:3 positive:negative ratio, with T2/ADC windows paired per location.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{Modality, PairedSample, Patch, Split, Zone, ZoneDataset};
use crate::seed::derive_rng;

pub type Mask = Grid<bool>;
pub type Point = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Finding {
    pub zone: Zone,
    pub t2_centroid: Point,
    pub adc_centroid: Point,
}

/// One case: both modalities, per-zone masks for each, and marked findings.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseImage {
    pub case_id: String,
    pub t2: Grid<f32>,
    pub adc: Grid<f32>,
    pub t2_masks: BTreeMap<Zone, Mask>,
    pub adc_masks: BTreeMap<Zone, Mask>,
    pub findings: Vec<Finding>,
}

fn check_masks(image: (usize, usize), masks: &BTreeMap<Zone, Mask>, what: &str) -> Result<()> {
    for (zone, m) in masks {
        if m.shape() != image {
            return Err(Error::Shape(format!(
                "{what} {zone} mask is {:?}, image is {image:?}",
                m.shape()
            )));
        }
    }
    let zones: Vec<&Mask> = masks.values().collect();
    for i in 0..image.0 * image.1 {
        if zones.iter().filter(|m| m.as_slice()[i]).count() > 1 {
            return Err(Error::format("masks", format!("{what} zone masks overlap")));
        }
    }
    Ok(())
}

impl CaseImage {
    /// Checks mask shapes, mask disjointness and that centroids lie in their zone.
    pub fn validate(&self) -> Result<()> {
        check_masks(self.t2.shape(), &self.t2_masks, "T2")?;
        check_masks(self.adc.shape(), &self.adc_masks, "ADC")?;
        for f in &self.findings {
            let inside = |masks: &BTreeMap<Zone, Mask>, (r, c): Point| {
                masks
                    .get(&f.zone)
                    .is_some_and(|m| r < m.rows() && c < m.cols() && m.get(r, c))
            };
            if !inside(&self.t2_masks, f.t2_centroid) || !inside(&self.adc_masks, f.adc_centroid) {
                return Err(Error::format(
                    "findings",
                    format!("{}: {} centroid outside its zone mask", self.case_id, f.zone),
                ));
            }
        }
        Ok(())
    }

    pub fn findings_in(&self, zone: Zone) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(move |f| f.zone == zone)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub t2_patch: usize,
    pub adc_patch: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
    /// L∞ exclusion radius around positive centroids; `None` = half the patch.
    pub t2_exclusion: Option<usize>,
    pub adc_exclusion: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            t2_patch: Modality::T2w.patch_size(),
            adc_patch: Modality::Adc.patch_size(),
            neg_per_pos: 3,
            seed: 0,
            t2_exclusion: None,
            adc_exclusion: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, size, expect) in [
            ("t2_patch", self.t2_patch, Modality::T2w.patch_size()),
            ("adc_patch", self.adc_patch, Modality::Adc.patch_size()),
        ] {
            if size == 0 || size % 2 != 0 {
                return Err(Error::Config(format!("{name} must be even and positive")));
            }
            if size != expect {
                return Err(Error::Config(format!("{name} must be {expect}")));
            }
        }
        if self.neg_per_pos != 3 {
            return Err(Error::Config("neg_per_pos is fixed at 3".into()));
        }
        Ok(())
    }

    pub fn t2_radius(&self) -> usize {
        self.t2_exclusion.unwrap_or(self.t2_patch / 2)
    }

    pub fn adc_radius(&self) -> usize {
        self.adc_exclusion.unwrap_or(self.adc_patch / 2)
    }
}

/// Copies the `size`×`size` window whose top-left corner is `center - size/2`.
pub fn extract_window(image: &Grid<f32>, center: Point, size: usize) -> Result<Grid<f32>> {
    let half = size / 2;
    if center.0 < half || center.1 < half {
        return Err(Error::OutOfBounds(format!(
            "{size}x{size} window centered at {center:?} starts before the image"
        )));
    }
    image.window(center.0 - half, center.1 - half, size, size)
}

pub fn extract_patch(
    image: &Grid<f32>,
    center: Point,
    modality: Modality,
    zone: Zone,
    label: u8,
    case_id: &str,
    sample_id: &str,
) -> Result<Patch> {
    let w = extract_window(image, center, modality.patch_size())?;
    Patch::new(w, modality, zone, label, case_id, sample_id)
}

/// Maps a T2 pixel to the ADC pixel covering the same physical location.
pub fn map_center(p: Point, from: (usize, usize), to: (usize, usize)) -> Point {
    let map = |x: usize, a: usize, b: usize| {
        (((x as f64 + 0.5) * b as f64 / a as f64) as usize).min(b - 1)
    };
    (map(p.0, from.0, to.0), map(p.1, from.1, to.1))
}

fn window_fits(p: Point, size: usize, shape: (usize, usize)) -> bool {
    let half = size / 2;
    p.0 >= half && p.1 >= half && p.0 - half + size <= shape.0 && p.1 - half + size <= shape.1
}

fn linf(a: Point, b: Point) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Candidate negative centers (T2 coordinates) in scan order: inside the zone
/// mask, both windows in bounds, and at least the exclusion radius away from
/// every finding of the case.
pub fn admissible_centers(case: &CaseImage, zone: Zone, config: &SamplerConfig) -> Vec<Point> {
    let Some(mask) = case.t2_masks.get(&zone) else {
        return Vec::new();
    };
    let adc_mask = case.adc_masks.get(&zone);
    let (t2r, adcr) = (config.t2_radius(), config.adc_radius());
    let mut out = Vec::new();
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            if !mask.get(r, c) || !window_fits((r, c), config.t2_patch, case.t2.shape()) {
                continue;
            }
            let a = map_center((r, c), case.t2.shape(), case.adc.shape());
            if !window_fits(a, config.adc_patch, case.adc.shape()) {
                continue;
            }
            if adc_mask.is_some_and(|m| !m.get(a.0, a.1)) {
                continue;
            }
            let clear = case
                .findings
                .iter()
                .all(|f| linf((r, c), f.t2_centroid) >= t2r && linf(a, f.adc_centroid) >= adcr);
            if clear {
                out.push((r, c));
            }
        }
    }
    out
}

fn paired(case: &CaseImage, zone: Zone, label: u8, t2c: Point, adcc: Point, id: &str) -> Result<PairedSample> {
    let t2 = extract_patch(&case.t2, t2c, Modality::T2w, zone, label, &case.case_id, id)?;
    let adc = extract_patch(&case.adc, adcc, Modality::Adc, zone, label, &case.case_id, id)?;
    PairedSample::new(t2, adc)
}

/// Draws `count` distinct admissible centers uniformly (partial Fisher-Yates)
/// and cuts a label-0 pair at each.
pub fn sample_negatives<R: Rng>(
    case: &CaseImage,
    zone: Zone,
    config: &SamplerConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PairedSample>> {
    let mut pool = admissible_centers(case, zone, config);
    if pool.is_empty() || pool.len() < count {
        return Err(Error::InsufficientRegion(format!(
            "{} {zone}: {} admissible centers for {count} draws",
            case.case_id,
            pool.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
        let t2c = pool[i];
        let adcc = map_center(t2c, case.t2.shape(), case.adc.shape());
        let id = format!("{}:{zone}:neg:{}_{}", case.case_id, t2c.0, t2c.1);
        out.push(paired(case, zone, 0, t2c, adcc, &id)?);
    }
    Ok(out)
}

/// Spreads `needed` draws as evenly as capacities allow, in index order.
fn allocate(needed: usize, caps: &[usize]) -> (Vec<usize>, usize) {
    let mut quotas = vec![0; caps.len()];
    let mut remaining = needed;
    loop {
        let active: Vec<usize> = (0..caps.len()).filter(|&i| quotas[i] < caps[i]).collect();
        if remaining == 0 || active.is_empty() {
            break;
        }
        let share = remaining / active.len();
        let extra = remaining % active.len();
        for (k, &i) in active.iter().enumerate() {
            let want = share + usize::from(k < extra);
            let give = want.min(caps[i] - quotas[i]);
            quotas[i] += give;
            remaining -= give;
        }
    }
    (quotas, remaining)
}

/// One positive pair per finding of `zone`, then exactly `neg_per_pos`
/// negatives per positive: first from cases with no finding in the zone,
/// then from lesion-free regions of the remaining cases.
pub fn build_zone_dataset(
    cases: &[CaseImage],
    zone: Zone,
    split: Split,
    config: &SamplerConfig,
) -> Result<ZoneDataset> {
    config.validate()?;
    let mut samples = Vec::new();
    for case in cases {
        for (k, f) in case.findings_in(zone).enumerate() {
            let id = format!("{}:{zone}:pos{k}", case.case_id);
            samples.push(paired(case, zone, 1, f.t2_centroid, f.adc_centroid, &id)?);
        }
    }
    if samples.is_empty() {
        return Err(Error::InsufficientNegatives(format!("no {zone} findings to anchor the ratio")));
    }
    let needed = samples.len() * config.neg_per_pos;

    let caps: Vec<usize> = cases
        .par_iter()
        .map(|c| admissible_centers(c, zone, config).len())
        .collect();
    let (free, lesioned): (Vec<usize>, Vec<usize>) =
        (0..cases.len()).partition(|&i| cases[i].findings_in(zone).next().is_none());
    let mut quotas = vec![0usize; cases.len()];
    let mut remaining = needed;
    for pool in [&free, &lesioned] {
        let pool_caps: Vec<usize> = pool.iter().map(|&i| caps[i]).collect();
        let (q, rest) = allocate(remaining, &pool_caps);
        for (&i, q) in pool.iter().zip(q) {
            quotas[i] = q;
        }
        remaining = rest;
    }
    if remaining > 0 {
        return Err(Error::InsufficientNegatives(format!(
            "{zone}: {remaining} of {needed} negatives could not be placed"
        )));
    }
    let negatives: Vec<Vec<PairedSample>> = cases
        .par_iter()
        .zip(&quotas)
        .map(|(case, &q)| {
            if q == 0 {
                return Ok(Vec::new());
            }
            let mut rng = derive_rng(config.seed, "sample-negatives", &format!("{}/{zone}", case.case_id));
            sample_negatives(case, zone, config, q, &mut rng)
        })
        .collect::<Result<_>>()?;
    samples.extend(negatives.into_iter().flatten());
    ZoneDataset::new(zone, split, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_arithmetic() {
        let img = Grid::from_fn(4, 4, |r, c| (r * 4 + c) as f32);
        let w = extract_window(&img, (2, 2), 2).unwrap();
        assert_eq!(w, Grid::from_rows(&[[5.0, 6.0], [9.0, 10.0]]));
        assert_eq!(extract_window(&img, (2, 2), 4).unwrap(), img);
        let big = Grid::filled(32, 32, 0.0f32);
        assert!(matches!(extract_window(&big, (0, 0), 16), Err(Error::OutOfBounds(_))));
        assert!(matches!(extract_window(&big, (31, 31), 16), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn allocation_is_even_and_capped() {
        assert_eq!(allocate(10, &[100, 100, 100]), (vec![4, 3, 3], 0));
        assert_eq!(allocate(10, &[1, 100, 2]), (vec![1, 7, 2], 0));
        assert_eq!(allocate(10, &[1, 2]), (vec![1, 2], 7));
        assert_eq!(allocate(0, &[5]), (vec![0], 0));
    }

    fn single_center_case() -> CaseImage {
        // the mask admits exactly one center whose windows fit
        let mut m = Grid::filled(32, 32, false);
        m.set(16, 16, true);
        m.set(0, 0, true);
        CaseImage {
            case_id: "c0".into(),
            t2: Grid::from_fn(32, 32, |r, c| (r + c) as f32),
            adc: Grid::from_fn(12, 12, |r, c| (r * c) as f32),
            t2_masks: BTreeMap::from([(Zone::Pz, m)]),
            adc_masks: BTreeMap::new(),
            findings: vec![],
        }
    }

    #[test]
    fn forced_center() {
        let case = single_center_case();
        let cfg = SamplerConfig::default();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_negatives(&case, Zone::Pz, &cfg, 1, &mut rng).unwrap();
            assert_eq!(s[0].sample_id(), "c0:PZ:neg:16_16");
            assert_eq!(s[0].label(), 0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&case, Zone::Pz, &cfg, 2, &mut rng),
            Err(Error::InsufficientRegion(_))
        ));
        assert!(matches!(
            sample_negatives(&case, Zone::Tz, &cfg, 1, &mut rng),
            Err(Error::InsufficientRegion(_))
        ));
    }

    #[test]
    fn center_mapping() {
        assert_eq!(map_center((64, 64), (128, 128), (48, 48)), (24, 24));
        assert_eq!(map_center((127, 0), (128, 128), (48, 48)), (47, 0));
    }

    #[test]
    fn config_rules() {
        assert!(SamplerConfig::default().validate().is_ok());
        let c = SamplerConfig { neg_per_pos: 2, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SamplerConfig { t2_patch: 15, ..Default::default() };
        assert!(c.validate().is_err());
        assert_eq!(SamplerConfig::default().t2_radius(), 8);
        assert_eq!(SamplerConfig::default().adc_radius(), 3);
    }
}
