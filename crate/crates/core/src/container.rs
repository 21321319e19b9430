//! Flat on-disk formats: the paired-patch dataset container, float32 tensor
//! files, and feature CSVs.
//!
//! Dataset container layout (one directory):
//!
//! ```text
//! manifest.json     version, zone, split, count, shapes, sha256 per file
//! patches_t2.bin    float32 LE, row-major, [N,16,16]
//! patches_adc.bin   float32 LE, row-major, [N,6,6]
//! labels.csv        sample_id,case_id,zone,label
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{
    feature_names, FeatureVector, Modality, PairedSample, Patch, Split, Zone, ZoneDataset,
    FEATURE_COUNT,
};

pub const CONTAINER_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const T2_FILE: &str = "patches_t2.bin";
const ADC_FILE: &str = "patches_adc.bin";
const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    zone: Zone,
    split: Split,
    count: usize,
    t2_shape: [usize; 2],
    adc_shape: [usize; 2],
    checksums: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Shape(format!(
            "float32 stream length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `dataset` into directory `dir` (created if needed).
pub fn save_dataset(dataset: &ZoneDataset, dir: &Path) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut t2 = Vec::with_capacity(dataset.len() * 256);
    let mut adc = Vec::with_capacity(dataset.len() * 36);
    let mut labels = csv::Writer::from_writer(Vec::new());
    labels
        .write_record(["sample_id", "case_id", "zone", "label"])
        .map_err(|e| Error::format("labels.csv", e))?;
    for s in &dataset.samples {
        if s.zone() != dataset.zone {
            return Err(Error::format("dataset", "mixed zones"));
        }
        t2.extend_from_slice(s.t2.pixels().as_slice());
        adc.extend_from_slice(s.adc.pixels().as_slice());
        labels
            .write_record([
                s.sample_id(),
                s.case_id(),
                s.zone().as_str(),
                &s.label().to_string(),
            ])
            .map_err(|e| Error::format("labels.csv", e))?;
    }
    let t2_bytes = f32_to_le_bytes(&t2);
    let adc_bytes = f32_to_le_bytes(&adc);
    let label_bytes = labels
        .into_inner()
        .map_err(|e| Error::format("labels.csv", e.to_string()))?;

    let t2n = Modality::T2w.patch_size();
    let adcn = Modality::Adc.patch_size();
    let manifest = Manifest {
        version: CONTAINER_VERSION,
        zone: dataset.zone,
        split: dataset.split,
        count: dataset.len(),
        t2_shape: [t2n, t2n],
        adc_shape: [adcn, adcn],
        checksums: BTreeMap::from([
            (T2_FILE.to_string(), sha256_hex(&t2_bytes)),
            (ADC_FILE.to_string(), sha256_hex(&adc_bytes)),
            (LABELS_FILE.to_string(), sha256_hex(&label_bytes)),
        ]),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_bytes(&dir.join(T2_FILE), &t2_bytes)?;
    write_bytes(&dir.join(ADC_FILE), &adc_bytes)?;
    write_bytes(&dir.join(LABELS_FILE), &label_bytes)?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format("manifest", e))?;
    write_bytes(&dir.join(MANIFEST), &json)
}

pub fn load_dataset(dir: &Path) -> Result<ZoneDataset> {
    let manifest: Manifest = serde_json::from_slice(&read_bytes(&dir.join(MANIFEST))?)
        .map_err(|e| Error::format("manifest", e))?;
    if manifest.version != CONTAINER_VERSION {
        return Err(Error::format(
            "manifest",
            format!("unsupported container version {}", manifest.version),
        ));
    }
    let t2n = Modality::T2w.patch_size();
    let adcn = Modality::Adc.patch_size();
    if manifest.t2_shape != [t2n, t2n] || manifest.adc_shape != [adcn, adcn] {
        return Err(Error::Shape(format!(
            "patch shapes {:?}/{:?} do not match modalities",
            manifest.t2_shape, manifest.adc_shape
        )));
    }
    let t2_bytes = read_bytes(&dir.join(T2_FILE))?;
    let adc_bytes = read_bytes(&dir.join(ADC_FILE))?;
    let label_bytes = read_bytes(&dir.join(LABELS_FILE))?;
    for (name, bytes, per) in [
        (T2_FILE, &t2_bytes, t2n * t2n),
        (ADC_FILE, &adc_bytes, adcn * adcn),
    ] {
        let expect = manifest.count * per * 4;
        if bytes.len() != expect {
            return Err(Error::Shape(format!(
                "{name} holds {} bytes ({} patches), manifest declares {} patches",
                bytes.len(),
                bytes.len() as f64 / (per * 4) as f64,
                manifest.count
            )));
        }
    }
    for (name, bytes) in [
        (T2_FILE, &t2_bytes),
        (ADC_FILE, &adc_bytes),
        (LABELS_FILE, &label_bytes),
    ] {
        match manifest.checksums.get(name) {
            Some(sum) if *sum == sha256_hex(bytes) => {}
            _ => return Err(Error::Checksum(name.to_string())),
        }
    }

    let t2 = f32_from_le_bytes(&t2_bytes)?;
    let adc = f32_from_le_bytes(&adc_bytes)?;
    let mut reader = csv::Reader::from_reader(label_bytes.as_slice());
    let mut samples = Vec::with_capacity(manifest.count);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("labels.csv", e))?;
        if rec.len() != 4 {
            return Err(Error::format("labels.csv", format!("row {i} has {} fields", rec.len())));
        }
        if i >= manifest.count {
            return Err(Error::Shape(format!(
                "labels.csv has more than {} rows",
                manifest.count
            )));
        }
        let zone: Zone = rec[2].parse()?;
        if zone != manifest.zone {
            return Err(Error::format(
                "labels.csv",
                format!("row {i} zone {zone} differs from manifest zone {}", manifest.zone),
            ));
        }
        let label: u8 = rec[3]
            .parse()
            .map_err(|_| Error::format("labels.csv", format!("bad label {:?}", &rec[3])))?;
        let t2p = Grid::new(t2n, t2n, t2[i * t2n * t2n..(i + 1) * t2n * t2n].to_vec())?;
        let adcp = Grid::new(adcn, adcn, adc[i * adcn * adcn..(i + 1) * adcn * adcn].to_vec())?;
        let t2patch = Patch::new(t2p, Modality::T2w, zone, label, &rec[1], &rec[0])?;
        let adcpatch = Patch::new(adcp, Modality::Adc, zone, label, &rec[1], &rec[0])?;
        samples.push(PairedSample::new(t2patch, adcpatch)?);
    }
    if samples.len() != manifest.count {
        return Err(Error::Shape(format!(
            "labels.csv has {} rows, manifest declares {}",
            samples.len(),
            manifest.count
        )));
    }
    ZoneDataset::new(manifest.zone, manifest.split, samples)
}

/// Header of a feature CSV: the 26 canonical names, then sample_id, zone, label.
pub fn feature_csv_header() -> Vec<&'static str> {
    let mut h: Vec<&'static str> = feature_names().to_vec();
    h.extend(["sample_id", "zone", "label"]);
    h
}

/// Serializes rows with shortest round-trip float formatting, so the bytes
/// are a pure function of the values.
pub fn feature_csv_bytes(rows: &[FeatureVector]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(feature_csv_header())
        .map_err(|e| Error::format("feature csv", e))?;
    for r in rows {
        let mut rec: Vec<String> = r.values.iter().map(|v| format!("{v:?}")).collect();
        rec.push(r.sample_id.clone());
        rec.push(r.zone.to_string());
        rec.push(r.label.to_string());
        w.write_record(&rec).map_err(|e| Error::format("feature csv", e))?;
    }
    w.into_inner()
        .map_err(|e| Error::format("feature csv", e.to_string()))
}

pub fn write_feature_csv(rows: &[FeatureVector], path: &Path) -> Result<()> {
    write_bytes(path, &feature_csv_bytes(rows)?)
}

pub fn parse_feature_csv(bytes: &[u8]) -> Result<Vec<FeatureVector>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format("feature csv", e))?.clone();
    let expect = feature_csv_header();
    if header.len() != expect.len() || header.iter().zip(&expect).any(|(a, b)| a != *b) {
        return Err(Error::Schema(format!(
            "feature csv has {} columns; expected the {} canonical features plus sample_id, zone, label",
            header.len(),
            FEATURE_COUNT
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("feature csv", e))?;
        let mut values = [0.0; FEATURE_COUNT];
        for (k, v) in values.iter_mut().enumerate() {
            *v = rec[k].parse().map_err(|_| {
                Error::format("feature csv", format!("row {i} column {k}: {:?}", &rec[k]))
            })?;
        }
        let zone: Zone = rec[FEATURE_COUNT + 1].parse()?;
        let label: u8 = rec[FEATURE_COUNT + 2]
            .parse()
            .map_err(|_| Error::format("feature csv", format!("row {i}: bad label")))?;
        rows.push(FeatureVector::new(values, label, zone, &rec[FEATURE_COUNT])?);
    }
    Ok(rows)
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    parse_feature_csv(&read_bytes(path)?)
}

/// Writes a float32 tensor file plus a `<name>.json` shape sidecar.
pub fn write_tensor(path: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != values.len() {
        return Err(Error::Shape(format!("shape {shape:?} vs {} values", values.len())));
    }
    write_bytes(path, &f32_to_le_bytes(values))?;
    let sidecar = serde_json::to_vec(&serde_json::json!({ "shape": shape, "dtype": "float32", "order": "row-major" }))
        .map_err(|e| Error::format("shape sidecar", e))?;
    write_bytes(&path.with_extension("json"), &sidecar)
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    #[derive(Deserialize)]
    struct Sidecar {
        shape: Vec<usize>,
    }
    let side: Sidecar = serde_json::from_slice(&read_bytes(&path.with_extension("json"))?)
        .map_err(|e| Error::format("shape sidecar", e))?;
    let values = f32_from_le_bytes(&read_bytes(path)?)?;
    let n: usize = side.shape.iter().product();
    if n != values.len() {
        return Err(Error::Shape(format!(
            "{} declares {:?} but holds {} values",
            path.display(),
            side.shape,
            values.len()
        )));
    }
    Ok((side.shape, values))
}
