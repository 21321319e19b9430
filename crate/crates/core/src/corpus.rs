//! Case corpus on disk: one subdirectory per case holding
//! `t2.bin`/`adc.bin` (float32 LE with `.json` shape sidecars),
//! `masks.json` (run-length encoded per modality and zone) and `findings.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{read_bytes, read_tensor, write_bytes, write_tensor};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::Zone;
use crate::sampler::{CaseImage, Finding, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RleMask {
    rows: usize,
    cols: usize,
    /// `[start, length]` runs of set pixels in row-major order.
    runs: Vec<[usize; 2]>,
}

impl RleMask {
    fn encode(m: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &v) in m.as_slice().iter().enumerate() {
            match (v, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push([s, i - s]);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push([s, m.len() - s]);
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            runs,
        }
    }

    fn decode(&self) -> Result<Mask> {
        let mut m = Grid::filled(self.rows, self.cols, false);
        let n = m.len();
        for &[s, len] in &self.runs {
            if s + len > n {
                return Err(Error::format("masks.json", format!("run {s}+{len} exceeds {n} pixels")));
            }
            m.as_mut_slice()[s..s + len].fill(true);
        }
        Ok(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFile {
    t2: BTreeMap<Zone, RleMask>,
    adc: BTreeMap<Zone, RleMask>,
}

fn grid_from_tensor(path: &Path) -> Result<Grid<f32>> {
    let (shape, values) = read_tensor(path)?;
    if shape.len() != 2 {
        return Err(Error::Shape(format!("{} is not 2-D: {shape:?}", path.display())));
    }
    Grid::new(shape[0], shape[1], values)
}

pub fn save_case(case: &CaseImage, dir: &Path) -> Result<()> {
    let d = dir.join(&case.case_id);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    write_tensor(&d.join("t2.bin"), &[case.t2.rows(), case.t2.cols()], case.t2.as_slice())?;
    write_tensor(&d.join("adc.bin"), &[case.adc.rows(), case.adc.cols()], case.adc.as_slice())?;
    let masks = MaskFile {
        t2: case.t2_masks.iter().map(|(z, m)| (*z, RleMask::encode(m))).collect(),
        adc: case.adc_masks.iter().map(|(z, m)| (*z, RleMask::encode(m))).collect(),
    };
    let json = serde_json::to_vec(&masks).map_err(|e| Error::format("masks.json", e))?;
    write_bytes(&d.join("masks.json"), &json)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("findings.csv", e);
    w.write_record(["zone", "t2_row", "t2_col", "adc_row", "adc_col"]).map_err(csv_err)?;
    for f in &case.findings {
        w.write_record([
            f.zone.to_string(),
            f.t2_centroid.0.to_string(),
            f.t2_centroid.1.to_string(),
            f.adc_centroid.0.to_string(),
            f.adc_centroid.1.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("findings.csv", e.to_string()))?;
    write_bytes(&d.join("findings.csv"), &bytes)
}

pub fn load_case(case_dir: &Path) -> Result<CaseImage> {
    let case_id = case_dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format("corpus", format!("bad case directory {}", case_dir.display())))?
        .to_string();
    let t2 = grid_from_tensor(&case_dir.join("t2.bin"))?;
    let adc = grid_from_tensor(&case_dir.join("adc.bin"))?;
    let masks: MaskFile = serde_json::from_slice(&read_bytes(&case_dir.join("masks.json"))?)
        .map_err(|e| Error::format("masks.json", e))?;
    let decode = |m: BTreeMap<Zone, RleMask>| -> Result<BTreeMap<Zone, Mask>> {
        m.into_iter().map(|(z, r)| Ok((z, r.decode()?))).collect()
    };
    let findings_bytes = read_bytes(&case_dir.join("findings.csv"))?;
    let mut reader = csv::Reader::from_reader(findings_bytes.as_slice());
    let mut findings = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::format("findings.csv", e))?;
        if rec.len() != 5 {
            return Err(Error::format("findings.csv", format!("expected 5 fields, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| Error::format("findings.csv", format!("bad coordinate {:?}", &rec[i])))
        };
        findings.push(Finding {
            zone: rec[0].parse()?,
            t2_centroid: (num(1)?, num(2)?),
            adc_centroid: (num(3)?, num(4)?),
        });
    }
    let case = CaseImage {
        case_id,
        t2,
        adc,
        t2_masks: decode(masks.t2)?,
        adc_masks: decode(masks.adc)?,
        findings,
    };
    case.validate()?;
    Ok(case)
}

pub fn save_corpus(cases: &[CaseImage], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cases.iter().try_for_each(|c| save_case(c, dir))
}

/// Loads every case subdirectory, sorted by case id.
pub fn load_corpus(dir: &Path) -> Result<Vec<CaseImage>> {
    let mut dirs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dirs.iter().map(|d| load_case(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let m = Grid::from_fn(5, 7, |r, c| (r * 7 + c) % 3 == 0 || r == 4);
        let back = RleMask::encode(&m).decode().unwrap();
        assert_eq!(back, m);
        let empty = Grid::filled(3, 3, false);
        assert!(RleMask::encode(&empty).runs.is_empty());
    }

    #[test]
    fn case_round_trip_and_sv_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let mut mask = Grid::filled(32, 32, false);
        mask.set(10, 12, true);
        let mut adc_mask = Grid::filled(12, 12, false);
        adc_mask.set(4, 4, true);
        let case = CaseImage {
            case_id: "case-7".into(),
            t2: Grid::from_fn(32, 32, |r, c| r as f32 * 0.25 - c as f32),
            adc: Grid::from_fn(12, 12, |r, c| (r * c) as f32 + 0.5),
            t2_masks: BTreeMap::from([(Zone::Tz, mask)]),
            adc_masks: BTreeMap::from([(Zone::Tz, adc_mask)]),
            findings: vec![Finding {
                zone: Zone::Tz,
                t2_centroid: (10, 12),
                adc_centroid: (4, 4),
            }],
        };
        save_corpus(&[case.clone()], dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, vec![case]);

        let f = dir.path().join("case-7/findings.csv");
        fs::write(&f, "zone,t2_row,t2_col,adc_row,adc_col\nSV,10,12,4,4\n").unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::UnknownZone(_))));
    }
}
