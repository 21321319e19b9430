//! Per-zone evaluation tables, curve-point exports and importance rankings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{feature_importances, predict_proba, Importances, ModelKind, TrainMatrix, TrainedModel};
use crate::container::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::eval::{f1_at, pr_auc, pr_area, roc_area, roc_auc, LabeledScores, PrCurve, PrPoint, RocCurve, RocPoint};
use crate::model::{feature_names, FeatureVector, Zone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Scores at or above this value count as positive for F1.
    pub threshold: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub zone: Zone,
    pub model: String,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCurves {
    pub model: String,
    pub roc: RocCurve,
    pub pr: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub zone: Zone,
    pub model: String,
    pub rank: usize,
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneReport {
    pub zone: Zone,
    pub rows: Vec<ReportRow>,
    pub curves: Vec<ModelCurves>,
    pub importances: Vec<ImportanceRow>,
}

/// Scores from one model, with its importances when the model has them.
pub struct Scored {
    pub model: String,
    pub scores: Vec<f64>,
    pub importances: Option<Importances>,
}

/// Assembles a report from precomputed scores on a shared test set.
pub fn report_from_scores(zone: Zone, labels: &[u8], scored: Vec<Scored>, opts: &ReportOptions) -> Result<ZoneReport> {
    let mut rows = Vec::with_capacity(scored.len());
    let mut curves = Vec::with_capacity(scored.len());
    let mut importances = Vec::new();
    for s in scored {
        let ls = LabeledScores::new(s.scores, labels.to_vec())?;
        let roc = roc_auc(&ls)?;
        let pr = pr_auc(&ls)?;
        let f1 = f1_at(&ls, opts.threshold);
        rows.push(ReportRow {
            zone,
            model: s.model.clone(),
            roc_auc: roc.auc,
            pr_auc: pr.area,
            f1: f1.f1,
            precision: f1.precision,
            recall: f1.recall,
            tp: f1.tp,
            fp: f1.fp,
            tn: f1.tn,
            fn_: f1.fn_,
        });
        if let Some(imp) = s.importances {
            for (rank, &i) in imp.ranking.iter().enumerate() {
                importances.push(ImportanceRow {
                    zone,
                    model: s.model.clone(),
                    rank: rank + 1,
                    feature: feature_names()[i].to_string(),
                    value: imp.values[i],
                });
            }
        }
        curves.push(ModelCurves {
            model: s.model,
            roc,
            pr,
        });
    }
    Ok(ZoneReport {
        zone,
        rows,
        curves,
        importances,
    })
}

/// Scores every model on the zone's test rows. Models with no importances
/// (the SVM) contribute a metrics row only.
pub fn zone_report(models: &[TrainedModel], test: &[FeatureVector], opts: &ReportOptions) -> Result<ZoneReport> {
    let data = TrainMatrix::from_features(test)?;
    let zone = data.zone.expect("feature tables carry a zone");
    let mut scored = Vec::with_capacity(models.len());
    for m in models {
        if let Some(mz) = m.zone {
            if mz != zone {
                return Err(Error::Config(format!("zone mismatch: {} model trained on {mz}, test rows are {zone}", m.kind())));
            }
        }
        let importances = match m.kind() {
            ModelKind::SvmRbf => None,
            _ => Some(feature_importances(m)?),
        };
        scored.push(Scored {
            model: m.kind().as_str().to_string(),
            scores: predict_proba(m, &data.x)?,
            importances,
        });
    }
    report_from_scores(zone, &data.y, scored, opts)
}

fn csv_err(e: impl ToString) -> Error {
    Error::format("report csv", e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn rows_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub fn importances_csv(rows: &[ImportanceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["zone", "model", "rank", "feature", "value"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.zone.to_string(), r.model.clone(), r.rank.to_string(), r.feature.clone(), fmt(r.value)])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub fn roc_csv(points: &[RocPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fpr", "tpr", "threshold"]).map_err(csv_err)?;
    for p in points {
        w.write_record([fmt(p.fpr), fmt(p.tpr), fmt(p.threshold)]).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub fn pr_csv(points: &[PrPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["recall", "precision", "threshold"]).map_err(csv_err)?;
    for p in points {
        w.write_record([fmt(p.recall), fmt(p.precision), fmt(p.threshold)]).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

fn parse_triples(bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 3 {
            return Err(csv_err(format!("expected 3 columns, got {}", rec.len())));
        }
        let mut t = [0.0; 3];
        for (k, v) in t.iter_mut().enumerate() {
            *v = rec[k].parse().map_err(|_| csv_err(format!("bad number {:?}", &rec[k])))?;
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_roc_csv(path: &Path) -> Result<RocCurve> {
    let points: Vec<RocPoint> = parse_triples(&read_bytes(path)?)?
        .into_iter()
        .map(|[fpr, tpr, threshold]| RocPoint { fpr, tpr, threshold })
        .collect();
    let auc = roc_area(&points);
    Ok(RocCurve { points, auc })
}

pub fn read_pr_csv(path: &Path) -> Result<PrCurve> {
    let points: Vec<PrPoint> = parse_triples(&read_bytes(path)?)?
        .into_iter()
        .map(|[recall, precision, threshold]| PrPoint {
            recall,
            precision,
            threshold,
        })
        .collect();
    let area = pr_area(&points);
    Ok(PrCurve { points, area })
}

#[derive(Serialize)]
struct ReportJson<'a> {
    zone: Zone,
    rows: &'a [ReportRow],
    importances: &'a [ImportanceRow],
}

/// Writes `report.csv`, `report.json`, `importances.csv` and
/// `curves/<model>_{roc,pr}.csv` under `dir`.
pub fn write_report(report: &ZoneReport, dir: &Path) -> Result<()> {
    write_bytes(&dir.join("report.csv"), &rows_csv(&report.rows)?)?;
    let json = serde_json::to_vec_pretty(&ReportJson {
        zone: report.zone,
        rows: &report.rows,
        importances: &report.importances,
    })
    .map_err(|e| Error::format("report json", e))?;
    write_bytes(&dir.join("report.json"), &json)?;
    write_bytes(&dir.join("importances.csv"), &importances_csv(&report.importances)?)?;
    for c in &report.curves {
        write_bytes(&dir.join("curves").join(format!("{}_roc.csv", c.model)), &roc_csv(&c.roc.points)?)?;
        write_bytes(&dir.join("curves").join(format!("{}_pr.csv", c.model)), &pr_csv(&c.pr.points)?)?;
    }
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
