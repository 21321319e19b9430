//! Domain types shared across the pipeline and the canonical feature order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Anatomical zone with its own classification pipeline. Seminal-vesicle
/// lesions are excluded from the study and therefore not representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Zone {
    Pz,
    Tz,
    As,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Pz, Zone::Tz, Zone::As];

    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Pz => "PZ",
            Zone::Tz => "TZ",
            Zone::As => "AS",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PZ" => Ok(Zone::Pz),
            "TZ" => Ok(Zone::Tz),
            "AS" => Ok(Zone::As),
            other => Err(Error::UnknownZone(other.to_string())),
        }
    }
}

impl Serialize for Zone {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Zone {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "T2W")]
    T2w,
    #[serde(rename = "ADC")]
    Adc,
}

impl Modality {
    /// Side length of the square patch cut for this modality.
    pub fn patch_size(self) -> usize {
        match self {
            Modality::T2w => 16,
            Modality::Adc => 6,
        }
    }

    /// Gray levels used when quantizing a patch for the co-occurrence matrix.
    pub fn glcm_levels(self) -> usize {
        match self {
            Modality::T2w => 32,
            Modality::Adc => 16,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Modality::T2w => "t2",
            Modality::Adc => "adc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A fixed-size single-slice intensity window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pixels: Grid<f32>,
    pub modality: Modality,
    pub zone: Zone,
    pub label: u8,
    pub case_id: String,
    pub sample_id: String,
}

impl Patch {
    pub fn new(
        pixels: Grid<f32>,
        modality: Modality,
        zone: Zone,
        label: u8,
        case_id: impl Into<String>,
        sample_id: impl Into<String>,
    ) -> Result<Self> {
        let n = modality.patch_size();
        if pixels.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "{modality:?} patch must be {n}x{n}, got {}x{}",
                pixels.rows(),
                pixels.cols()
            )));
        }
        if let Some(v) = pixels.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pixel {v}")));
        }
        if label > 1 {
            return Err(Error::format("label", format!("{label} is not 0 or 1")));
        }
        Ok(Self {
            pixels,
            modality,
            zone,
            label,
            case_id: case_id.into(),
            sample_id: sample_id.into(),
        })
    }

    pub fn pixels(&self) -> &Grid<f32> {
        &self.pixels
    }
}

/// T2 and ADC windows cut at the same finding location.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub t2: Patch,
    pub adc: Patch,
}

impl PairedSample {
    pub fn new(t2: Patch, adc: Patch) -> Result<Self> {
        if t2.modality != Modality::T2w || adc.modality != Modality::Adc {
            return Err(Error::Shape("pair must be (T2W, ADC)".into()));
        }
        if t2.zone != adc.zone || t2.label != adc.label || t2.case_id != adc.case_id {
            return Err(Error::format(
                "paired sample",
                format!(
                    "T2/ADC disagree on zone, label or case ({} vs {})",
                    t2.sample_id, adc.sample_id
                ),
            ));
        }
        Ok(Self { t2, adc })
    }

    pub fn zone(&self) -> Zone {
        self.t2.zone
    }

    pub fn label(&self) -> u8 {
        self.t2.label
    }

    pub fn case_id(&self) -> &str {
        &self.t2.case_id
    }

    pub fn sample_id(&self) -> &str {
        &self.t2.sample_id
    }
}

/// Samples of a single zone and split.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneDataset {
    pub zone: Zone,
    pub split: Split,
    pub samples: Vec<PairedSample>,
}

impl ZoneDataset {
    pub fn new(zone: Zone, split: Split, samples: Vec<PairedSample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.zone() != zone) {
            return Err(Error::format(
                "dataset",
                format!("sample {} belongs to {}, not {zone}", s.sample_id(), s.zone()),
            ));
        }
        Ok(Self {
            zone,
            split,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label() == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

pub const FEATURES_PER_MODALITY: usize = 13;
pub const FEATURE_COUNT: usize = 2 * FEATURES_PER_MODALITY;

/// Per-modality feature names in extraction order.
pub const MODALITY_FEATURES: [&str; FEATURES_PER_MODALITY] = [
    "p10",
    "mean",
    "skewness",
    "kurtosis",
    "asm",
    "contrast",
    "correlation",
    "dissimilarity",
    "energy",
    "homogeneity",
    "tamura_coarseness",
    "tamura_contrast",
    "tamura_roughness",
];

const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "t2_p10",
    "t2_mean",
    "t2_skewness",
    "t2_kurtosis",
    "t2_asm",
    "t2_contrast",
    "t2_correlation",
    "t2_dissimilarity",
    "t2_energy",
    "t2_homogeneity",
    "t2_tamura_coarseness",
    "t2_tamura_contrast",
    "t2_tamura_roughness",
    "adc_p10",
    "adc_mean",
    "adc_skewness",
    "adc_kurtosis",
    "adc_asm",
    "adc_contrast",
    "adc_correlation",
    "adc_dissimilarity",
    "adc_energy",
    "adc_homogeneity",
    "adc_tamura_coarseness",
    "adc_tamura_contrast",
    "adc_tamura_roughness",
];

/// Canonical name of feature column `index`: T2 block first, then ADC.
pub fn feature_name(index: usize) -> Result<&'static str> {
    FEATURE_NAMES.get(index).copied().ok_or(Error::OutOfRange {
        index,
        len: FEATURE_COUNT,
    })
}

pub fn feature_names() -> &'static [&'static str; FEATURE_COUNT] {
    &FEATURE_NAMES
}

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// One extracted row: 26 values in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
    pub label: u8,
    pub zone: Zone,
    pub sample_id: String,
}

impl FeatureVector {
    pub fn new(values: [f64; FEATURE_COUNT], label: u8, zone: Zone, sample_id: impl Into<String>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "feature {} is not finite",
                FEATURE_NAMES[i]
            )));
        }
        if label > 1 {
            return Err(Error::format("label", format!("{label} is not 0 or 1")));
        }
        Ok(Self {
            values,
            label,
            zone,
            sample_id: sample_id.into(),
        })
    }
}
