//! Seeded synthetic mpMRI-like cases for exercising the full pipeline.
//!
//! Each zone's background is Gaussian-smoothed white noise rescaled to the
//! zone's mean and spread; lesions are hypointense Gaussian blobs whose peak
//! depth is `delta` background standard deviations, implanted at the same
//! physical location in T2 and ADC.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{Split, Zone};
use crate::sampler::{map_center, CaseImage, Finding, Mask, Point};
use crate::seed::{derive_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneAppearance {
    pub t2_mean: f64,
    pub adc_mean: f64,
    /// Coefficient of variation of the background texture (σ / mean).
    pub heterogeneity: f64,
    /// Smoothing radius of the background noise, in T2 pixels.
    pub correlation_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub t2_size: usize,
    pub adc_size: usize,
    /// Lesion depth in multiples of the zone's background σ.
    pub delta: f64,
    /// Gaussian σ of the lesion profile, in T2 pixels.
    pub lesion_sigma: f64,
    pub zones: BTreeMap<Zone, ZoneAppearance>,
    pub train_counts: BTreeMap<Zone, usize>,
    pub test_counts: BTreeMap<Zone, usize>,
    /// Cases without any finding, added to every split.
    pub lesion_free_cases: usize,
    /// Relative spread of the per-case T2 scanner gain.
    pub gain_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let zone = |t2_mean, adc_mean, heterogeneity, correlation_length| ZoneAppearance {
            t2_mean,
            adc_mean,
            heterogeneity,
            correlation_length,
        };
        Self {
            t2_size: 128,
            adc_size: 48,
            delta: 1.0,
            lesion_sigma: 3.5,
            zones: BTreeMap::from([
                (Zone::Pz, zone(1000.0, 1600.0, 0.08, 1.0)),
                (Zone::Tz, zone(650.0, 1250.0, 0.14, 1.0)),
                (Zone::As, zone(420.0, 1050.0, 0.10, 1.0)),
            ]),
            train_counts: BTreeMap::from([(Zone::Pz, 188), (Zone::Tz, 82), (Zone::As, 55)]),
            test_counts: BTreeMap::from([(Zone::Pz, 113), (Zone::Tz, 59), (Zone::As, 34)]),
            lesion_free_cases: 20,
            gain_jitter: 0.3,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom: {m}")));
        if !(self.delta >= 0.0) {
            return bad("delta must be >= 0".into());
        }
        if self.t2_size < 64 || self.adc_size < 16 || self.adc_size > self.t2_size {
            return bad("image sizes must satisfy 64 <= t2, 16 <= adc <= t2".into());
        }
        if !(self.lesion_sigma > 0.0) || !(0.0..1.0).contains(&self.gain_jitter) {
            return bad("lesion_sigma > 0 and gain_jitter in [0,1) required".into());
        }
        for z in Zone::ALL {
            let Some(a) = self.zones.get(&z) else {
                return bad(format!("missing appearance for {z}"));
            };
            if !(a.heterogeneity >= 0.0) || !(a.correlation_length >= 0.0) || !(a.t2_mean > 0.0) || !(a.adc_mean > 0.0) {
                return bad(format!("{z} appearance out of domain"));
            }
        }
        if self.zones[&Zone::Tz].heterogeneity <= self.zones[&Zone::Pz].heterogeneity {
            return bad("TZ heterogeneity must exceed PZ heterogeneity".into());
        }
        Ok(())
    }

    fn counts(&self, split: Split) -> &BTreeMap<Zone, usize> {
        match split {
            Split::Train => &self.train_counts,
            Split::Test => &self.test_counts,
        }
    }
}

/// Zone geometry in normalized coordinates: an elliptical gland, an anterior
/// band (AS), a central ellipse (TZ) and the surrounding periphery (PZ).
fn zone_at(u: f64, v: f64) -> Option<Zone> {
    let gland = ((u - 0.5) / 0.36).powi(2) + ((v - 0.5) / 0.42).powi(2) <= 1.0;
    if !gland {
        return None;
    }
    if u < 0.32 {
        return Some(Zone::As);
    }
    if ((u - 0.52) / 0.16).powi(2) + ((v - 0.5) / 0.24).powi(2) <= 1.0 {
        return Some(Zone::Tz);
    }
    Some(Zone::Pz)
}

fn zone_map(size: usize) -> Grid<Option<Zone>> {
    Grid::from_fn(size, size, |r, c| {
        zone_at((r as f64 + 0.5) / size as f64, (c as f64 + 0.5) / size as f64)
    })
}

fn masks_from(map: &Grid<Option<Zone>>) -> BTreeMap<Zone, Mask> {
    Zone::ALL
        .into_iter()
        .map(|z| (z, map.map(|v| v == Some(z))))
        .collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Unit-variance correlated noise: white noise blurred by a separable
/// Gaussian (reflecting borders) and rescaled by the kernel's energy.
fn correlated_noise(size: usize, sigma: f64, rng: &mut StreamRng) -> Grid<f64> {
    let white = Grid::from_fn(size, size, |_, _| StandardNormal.sample(rng));
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let reflect = |i: i64| -> usize {
        let n = size as i64;
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i.clamp(0, n - 1) as usize
    };
    let pass = |g: &Grid<f64>, horizontal: bool| {
        Grid::from_fn(size, size, |r, c| {
            k.iter()
                .enumerate()
                .map(|(t, w)| {
                    let off = t as i64 - radius;
                    let v = if horizontal {
                        g.get(r, reflect(c as i64 + off))
                    } else {
                        g.get(reflect(r as i64 + off), c)
                    };
                    w * v
                })
                .sum()
        })
    };
    let blurred = pass(&pass(&white, true), false);
    // the separable 2-D kernel's energy is the square of the 1-D energy
    let energy: f64 = k.iter().map(|w| w * w).sum();
    blurred.map(|v| v / energy)
}

/// Centers whose lesion disk (radius 2σ) lies inside the mask.
fn lesion_sites(mask: &Mask, radius: usize) -> Vec<Point> {
    let (rows, cols) = mask.shape();
    let r2 = (radius * radius) as i64;
    let mut out = Vec::new();
    for r in radius..rows.saturating_sub(radius) {
        for c in radius..cols.saturating_sub(radius) {
            let fits = (-(radius as i64)..=radius as i64).all(|dr| {
                (-(radius as i64)..=radius as i64).all(|dc| {
                    dr * dr + dc * dc > r2
                        || mask.get((r as i64 + dr) as usize, (c as i64 + dc) as usize)
                })
            });
            if fits {
                out.push((r, c));
            }
        }
    }
    out
}

struct Geometry {
    t2_map: Grid<Option<Zone>>,
    adc_map: Grid<Option<Zone>>,
    sites: BTreeMap<Zone, Vec<Point>>,
}

fn geometry(config: &PhantomConfig) -> Result<Geometry> {
    let t2_map = zone_map(config.t2_size);
    let adc_map = zone_map(config.adc_size);
    let t2_masks = masks_from(&t2_map);
    let adc_masks = masks_from(&adc_map);
    let radius = (2.0 * config.lesion_sigma).ceil() as usize;
    let mut sites = BTreeMap::new();
    for z in Zone::ALL {
        let s: Vec<Point> = lesion_sites(&t2_masks[&z], radius)
            .into_iter()
            .filter(|&p| {
                let a = map_center(p, t2_map.shape(), adc_map.shape());
                adc_masks[&z].get(a.0, a.1)
            })
            .collect();
        if s.is_empty() {
            return Err(Error::Config(format!(
                "a lesion of sigma {} does not fit inside the {z} mask",
                config.lesion_sigma
            )));
        }
        sites.insert(z, s);
    }
    Ok(Geometry {
        t2_map,
        adc_map,
        sites,
    })
}

fn render(
    map: &Grid<Option<Zone>>,
    config: &PhantomConfig,
    mean_of: impl Fn(&ZoneAppearance) -> f64,
    length_scale: f64,
    lesions: &[(Zone, Point)],
    rng: &mut StreamRng,
) -> Grid<f64> {
    let size = map.rows();
    let fields: BTreeMap<Zone, Grid<f64>> = Zone::ALL
        .into_iter()
        .map(|z| {
            let a = &config.zones[&z];
            (z, correlated_noise(size, a.correlation_length * length_scale, rng))
        })
        .collect();
    let outside = correlated_noise(size, length_scale, rng);
    let lesion_sigma = config.lesion_sigma * length_scale;
    Grid::from_fn(size, size, |r, c| {
        let mut v = match map.get(r, c) {
            Some(z) => {
                let a = &config.zones[&z];
                let mean = mean_of(a);
                mean + mean * a.heterogeneity * fields[&z].get(r, c)
            }
            None => 0.2 * mean_of(&config.zones[&Zone::As]) * (1.0 + 0.1 * outside.get(r, c)),
        };
        for &(z, (lr, lc)) in lesions {
            let a = &config.zones[&z];
            let sigma_bg = mean_of(a) * a.heterogeneity;
            let d2 = (r as f64 - lr as f64).powi(2) + (c as f64 - lc as f64).powi(2);
            v -= config.delta * sigma_bg * (-d2 / (2.0 * lesion_sigma * lesion_sigma)).exp();
        }
        v
    })
}

fn make_case(
    config: &PhantomConfig,
    geo: &Geometry,
    case_id: String,
    lesion_zones: &[Zone],
) -> CaseImage {
    let mut rng = derive_rng(config.seed, "phantom-case", &case_id);
    let mut findings = Vec::new();
    let mut t2_lesions = Vec::new();
    let mut adc_lesions = Vec::new();
    for &z in lesion_zones {
        let sites = &geo.sites[&z];
        let p = sites[rng.gen_range(0..sites.len())];
        let a = map_center(p, geo.t2_map.shape(), geo.adc_map.shape());
        findings.push(Finding {
            zone: z,
            t2_centroid: p,
            adc_centroid: a,
        });
        t2_lesions.push((z, p));
        adc_lesions.push((z, a));
    }
    let scale = config.adc_size as f64 / config.t2_size as f64;
    let t2 = render(&geo.t2_map, config, |a| a.t2_mean, 1.0, &t2_lesions, &mut rng);
    let adc = render(&geo.adc_map, config, |a| a.adc_mean, scale, &adc_lesions, &mut rng);
    let gain = 1.0 + config.gain_jitter * rng.gen_range(-1.0..1.0);
    let offset = 50.0 * config.gain_jitter * rng.gen_range(-1.0..1.0);
    CaseImage {
        case_id,
        t2: t2.map(|v| (gain * v + offset) as f32),
        adc: adc.map(|v| v as f32),
        t2_masks: masks_from(&geo.t2_map),
        adc_masks: masks_from(&geo.adc_map),
        findings,
    }
}

/// Cases of one split. Every zone's findings land in distinct cases chosen
/// at random; `lesion_free_cases` extra cases carry no finding at all.
pub fn generate_split(config: &PhantomConfig, split: Split) -> Result<Vec<CaseImage>> {
    config.validate()?;
    let geo = geometry(config)?;
    let counts = config.counts(split);
    let max_count = counts.values().copied().max().unwrap_or(0);
    let n_cases = max_count + config.lesion_free_cases;
    let mut lesion_zones: Vec<Vec<Zone>> = vec![Vec::new(); n_cases];
    let mut rng = derive_rng(config.seed, "phantom-assign", split.as_str());
    for z in Zone::ALL {
        let k = counts.get(&z).copied().unwrap_or(0);
        for i in sample_indices(&mut rng, max_count.max(1), k.min(max_count)).into_iter() {
            lesion_zones[i].push(z);
        }
    }
    let cases: Vec<CaseImage> = (0..n_cases)
        .into_par_iter()
        .map(|i| {
            let id = format!("{}-{i:04}", split.as_str());
            make_case(config, &geo, id, &lesion_zones[i])
        })
        .collect();
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCorpus {
    pub train: Vec<CaseImage>,
    pub test: Vec<CaseImage>,
}

pub fn generate_corpus(config: &PhantomConfig) -> Result<PhantomCorpus> {
    Ok(PhantomCorpus {
        train: generate_split(config, Split::Train)?,
        test: generate_split(config, Split::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig {
            train_counts: BTreeMap::from([(Zone::Pz, 4), (Zone::Tz, 2), (Zone::As, 1)]),
            test_counts: BTreeMap::from([(Zone::Pz, 1), (Zone::Tz, 1), (Zone::As, 1)]),
            lesion_free_cases: 2,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_validity() {
        let cfg = small();
        let cases = generate_split(&cfg, Split::Train).unwrap();
        assert_eq!(cases.len(), 6);
        for z in Zone::ALL {
            let n: usize = cases.iter().map(|c| c.findings_in(z).count()).sum();
            assert_eq!(n, cfg.train_counts[&z]);
        }
        for c in &cases {
            c.validate().unwrap();
            assert!(c.t2.as_slice().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn noise_has_unit_variance() {
        let mut rng = derive_rng(3, "t", "noise");
        let g = correlated_noise(128, 1.5, &mut rng);
        let m = crate::stats::MomentSummary::of(g.as_slice());
        assert!(m.mean.abs() < 0.1, "{}", m.mean);
        assert!((m.std - 1.0).abs() < 0.15, "{}", m.std);
    }

    #[test]
    fn config_checks() {
        let mut cfg = small();
        cfg.delta = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.zones.get_mut(&Zone::Tz).unwrap().heterogeneity = 0.01;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.lesion_sigma = 40.0;
        assert!(matches!(generate_split(&cfg, Split::Train), Err(Error::Config(_))));
    }
}
