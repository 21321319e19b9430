//! End-to-end orchestration: standardize, sample, extract, train and
//! evaluate, independently per zone, with content-hash stage skipping.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    predict_proba, search_logreg_lambda, train, ForestParams, GbtHyperparams, LambdaSearch, LogregParams,
    ModelKind, ModelSpec, SvmParams, TrainMatrix,
};
use crate::container::{
    load_dataset, read_bytes, read_feature_csv, save_dataset, sha256_hex, write_bytes, write_feature_csv,
};
use crate::corpus::{load_corpus, save_corpus};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{Split, Zone, ZoneDataset};
use crate::net::{train_net, NetConfig};
use crate::persist::{load_model, save_model, ModelFile};
use crate::phantom::{generate_corpus, PhantomConfig};
use crate::report::{read_rows_csv, report_from_scores, rows_csv, write_report, ReportOptions, ReportRow, Scored};
use crate::sampler::{build_zone_dataset, CaseImage, SamplerConfig};
use crate::seed::derive_u64;
use crate::standardizer::{apply_standardizer, fit_standardizer, StandardizationConfig, StandardizationModel};
use crate::texture::extract_batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub kinds: Vec<ModelKind>,
    pub logreg: LogregParams,
    /// When set, the L1 strength is chosen by cross-validation.
    pub logreg_search: Option<LambdaSearch>,
    pub svm: SvmParams,
    pub forest: ForestParams,
    pub gbt: BTreeMap<Zone, GbtHyperparams>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            kinds: ModelKind::ALL.to_vec(),
            logreg: LogregParams::default(),
            logreg_search: Some(LambdaSearch::default()),
            svm: SvmParams::default(),
            forest: ForestParams::default(),
            gbt: Zone::ALL.into_iter().map(|z| (z, GbtHyperparams::for_zone(z))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub enabled: bool,
    pub config: NetConfig,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            enabled: false,
            config: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Directory with `train/` and `test/` case folders; a phantom corpus
    /// is generated into the workdir when absent.
    pub corpus: Option<PathBuf>,
    pub workdir: PathBuf,
    pub zones: Vec<Zone>,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub phantom: PhantomConfig,
    pub standardizer: StandardizationConfig,
    pub sampler: SamplerConfig,
    pub classifiers: ClassifierSection,
    pub net: NetSection,
    pub eval: ReportOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            workdir: PathBuf::from("work"),
            zones: Zone::ALL.to_vec(),
            seed: 0,
            workers: 0,
            phantom: PhantomConfig::default(),
            standardizer: StandardizationConfig::default(),
            sampler: SamplerConfig::default(),
            classifiers: ClassifierSection::default(),
            net: NetSection::default(),
            eval: ReportOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| {
            // surface the zone error as its own kind
            let msg = e.to_string();
            if let Some(rest) = msg.split("unknown zone token ").nth(1) {
                let token = rest.split('"').nth(1).unwrap_or(rest);
                Error::UnknownZone(token.to_string())
            } else {
                Error::format("pipeline config", msg)
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&read_bytes(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.workdir.is_relative() {
            cfg.workdir = base.join(&cfg.workdir);
        }
        if let Some(c) = cfg.corpus.as_mut() {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::Config("at least one zone is required".into()));
        }
        if self.zones.iter().collect::<BTreeSet<_>>().len() != self.zones.len() {
            return Err(Error::Config("zones listed twice".into()));
        }
        if self.classifiers.kinds.is_empty() && !self.net.enabled {
            return Err(Error::Config("no classifier selected".into()));
        }
        self.phantom.validate()?;
        self.standardizer.validate()?;
        self.sampler.validate()?;
        for z in &self.zones {
            self.gbt_for(*z).validate()?;
        }
        if let Some(s) = &self.classifiers.logreg_search {
            if s.lambdas.is_empty() || s.lambdas.iter().any(|l| !(*l >= 0.0)) || s.k < 2 {
                return Err(Error::Config("logreg search needs non-negative lambdas and k >= 2".into()));
            }
        }
        if self.net.enabled {
            self.net.config.validate()?;
        }
        Ok(())
    }

    pub fn gbt_for(&self, zone: Zone) -> GbtHyperparams {
        self.classifiers
            .gbt
            .get(&zone)
            .copied()
            .unwrap_or_else(|| GbtHyperparams::for_zone(zone))
    }

    /// The configuration as actually run: seeds of every stage follow the global seed.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.phantom.seed = self.seed;
        c.sampler.seed = self.seed;
        c.net.config.seed = self.seed;
        c
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        serde_json::to_vec_pretty(self).map_err(|e| Error::format("pipeline config", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<StageRecord>,
    pub metrics: Vec<ReportRow>,
}

impl RunSummary {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Skipped)
    }
}

/// Hash of a file, or of a directory's relative paths and file hashes.
pub fn content_hash(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(sha256_hex(&read_bytes(path)?));
    }
    let mut lines = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = e.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(path).expect("walk stays under root");
                lines.push(format!("{} {}", rel.display(), sha256_hex(&read_bytes(&p)?)));
            }
        }
    }
    lines.sort();
    Ok(sha256_hex(lines.join("\n").as_bytes()))
}

#[derive(Serialize, Deserialize, PartialEq)]
struct Stamp {
    input: String,
    outputs: BTreeMap<String, String>,
}

struct Runner {
    workdir: PathBuf,
    records: Vec<StageRecord>,
}

impl Runner {
    /// Runs `body` unless a stamp shows the same input hash and untouched
    /// outputs. Returns a hash of the outputs.
    fn stage(
        &mut self,
        name: &str,
        inputs: &[&str],
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<String> {
        let input = sha256_hex(inputs.join("\n").as_bytes());
        let stamp_path = self.workdir.join("stamps").join(format!("{name}.json"));
        let current = |outputs: &[PathBuf]| -> Result<Option<BTreeMap<String, String>>> {
            let mut m = BTreeMap::new();
            for o in outputs {
                if !o.exists() {
                    return Ok(None);
                }
                let rel = o.strip_prefix(&self.workdir).unwrap_or(o);
                m.insert(rel.display().to_string(), content_hash(o)?);
            }
            Ok(Some(m))
        };
        let tagged = |e: Error| e.in_stage(name);
        if let Ok(bytes) = fs::read(&stamp_path) {
            if let Ok(stamp) = serde_json::from_slice::<Stamp>(&bytes) {
                if stamp.input == input && current(outputs).map_err(tagged)?.as_ref() == Some(&stamp.outputs) {
                    self.records.push(StageRecord {
                        stage: name.to_string(),
                        status: StageStatus::Skipped,
                    });
                    return Ok(sha256_hex(serde_json::to_string(&stamp.outputs).unwrap().as_bytes()));
                }
            }
        }
        for o in outputs {
            if o.is_dir() {
                fs::remove_dir_all(o).map_err(|e| tagged(Error::io(o, e)))?;
            }
        }
        body().map_err(tagged)?;
        let produced = current(outputs)
            .map_err(tagged)?
            .ok_or_else(|| tagged(Error::Numeric("stage did not write all outputs".into())))?;
        let stamp = Stamp { input, outputs: produced };
        write_bytes(&stamp_path, &serde_json::to_vec_pretty(&stamp).expect("stamp serializes")).map_err(tagged)?;
        self.records.push(StageRecord {
            stage: name.to_string(),
            status: StageStatus::Ran,
        });
        Ok(sha256_hex(serde_json::to_string(&stamp.outputs).unwrap().as_bytes()))
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

/// Standardizes the T2 image of a case; ADC is left untouched.
pub fn standardize_case(model: &StandardizationModel<f64>, case: &CaseImage) -> Result<CaseImage> {
    let t2 = apply_standardizer(model, &case.t2.to_real::<f64>())?;
    Ok(CaseImage {
        t2: t2.map(|v| v as f32),
        ..case.clone()
    })
}

pub fn t2_images(cases: &[CaseImage]) -> Vec<Grid<f64>> {
    cases.iter().map(|c| c.t2.to_real::<f64>()).collect()
}

/// T2 patches and labels of a dataset, for the network.
pub fn t2_patches(ds: &ZoneDataset) -> (Vec<Grid<f64>>, Vec<u8>) {
    ds.samples
        .iter()
        .map(|s| (s.t2.pixels().to_real::<f64>(), s.label()))
        .unzip()
}

pub fn model_seed(seed: u64, zone: Zone, what: &str) -> u64 {
    derive_u64(seed, "train", &format!("{zone}/{what}"))
}

/// Fits one classifier kind for a zone under the pipeline's settings.
pub fn fit_classifier(cfg: &PipelineConfig, kind: ModelKind, zone: Zone, data: &TrainMatrix) -> Result<crate::classify::TrainedModel> {
    let seed = model_seed(cfg.seed, zone, kind.as_str());
    let spec = match kind {
        ModelKind::LogregL1 => {
            let mut p = cfg.classifiers.logreg.clone();
            if let Some(grid) = &cfg.classifiers.logreg_search {
                p.lambda = search_logreg_lambda(data, grid, seed)?.best;
            }
            ModelSpec::LogregL1(p)
        }
        ModelKind::SvmRbf => ModelSpec::SvmRbf(cfg.classifiers.svm.clone()),
        ModelKind::RandomForest => ModelSpec::RandomForest(cfg.classifiers.forest.clone()),
        ModelKind::Gbt => ModelSpec::Gbt(cfg.gbt_for(zone)),
    };
    train(&spec, data, seed)
}

fn run_zone(cfg: &PipelineConfig, runner: &mut Runner, zone: Zone, std_dir: &Path, std_hash: &str) -> Result<()> {
    let zdir = cfg.workdir.join("zones").join(zone.as_str());
    let (train_ds, test_ds) = (zdir.join("train_dataset"), zdir.join("test_dataset"));
    let sample_hash = runner.stage(
        &format!("sample-{zone}"),
        &[std_hash, &json(&cfg.sampler), zone.as_str()],
        &[train_ds.clone(), test_ds.clone()],
        || {
            for (split, dir) in [(Split::Train, &train_ds), (Split::Test, &test_ds)] {
                let cases = load_corpus(&std_dir.join(split.as_str()))?;
                let ds = build_zone_dataset(&cases, zone, split, &cfg.sampler)?;
                save_dataset(&ds, dir)?;
            }
            Ok(())
        },
    )?;

    let (train_csv, test_csv) = (zdir.join("train_features.csv"), zdir.join("test_features.csv"));
    let extract_hash = runner.stage(
        &format!("extract-{zone}"),
        &[&sample_hash],
        &[train_csv.clone(), test_csv.clone()],
        || {
            for (ds, csv) in [(&train_ds, &train_csv), (&test_ds, &test_csv)] {
                let features = extract_batch(&load_dataset(ds)?.samples)?;
                write_feature_csv(&features, csv)?;
            }
            Ok(())
        },
    )?;

    let models_dir = zdir.join("models");
    let model_paths: Vec<PathBuf> = cfg
        .classifiers
        .kinds
        .iter()
        .map(|k| models_dir.join(format!("{}.zldc", k.as_str())))
        .collect();
    let train_hash = runner.stage(
        &format!("train-{zone}"),
        &[&extract_hash, &json(&cfg.classifiers), &json(&cfg.gbt_for(zone)), &cfg.seed.to_string()],
        &model_paths,
        || {
            let data = TrainMatrix::from_features(&read_feature_csv(&train_csv)?)?;
            let models = cfg
                .classifiers
                .kinds
                .par_iter()
                .map(|&k| fit_classifier(cfg, k, zone, &data))
                .collect::<Result<Vec<_>>>()?;
            models.iter().zip(&model_paths).try_for_each(|(m, p)| save_model(m, p))
        },
    )?;

    let net_path = models_dir.join("micro_net.zldc");
    let net_loss = models_dir.join("micro_net_loss.csv");
    let net_hash = if cfg.net.enabled {
        runner.stage(
            &format!("train-net-{zone}"),
            &[&sample_hash, &json(&cfg.net), &cfg.seed.to_string()],
            &[net_path.clone(), net_loss.clone()],
            || {
                let (imgs, labels) = t2_patches(&load_dataset(&train_ds)?);
                let mut nc = cfg.net.config.clone();
                nc.seed = model_seed(cfg.seed, zone, "micro_net");
                let (net, curve) = train_net(&nc, &imgs, &labels)?;
                ModelFile::from_net(&net, &nc, Some(zone))?.save(&net_path)?;
                let text: String = std::iter::once("epoch,loss\n".to_string())
                    .chain(curve.iter().enumerate().map(|(e, l)| format!("{e},{l:?}\n")))
                    .collect();
                write_bytes(&net_loss, text.as_bytes())
            },
        )?
    } else {
        String::new()
    };

    let report_dir = zdir.join("report");
    runner.stage(
        &format!("evaluate-{zone}"),
        &[&extract_hash, &train_hash, &net_hash, &json(&cfg.eval)],
        &[report_dir.clone()],
        || {
            let test = TrainMatrix::from_features(&read_feature_csv(&test_csv)?)?;
            let mut scored = Vec::new();
            for p in &model_paths {
                let m = load_model(p)?;
                if m.zone != Some(zone) {
                    return Err(Error::Config(format!("zone mismatch in {}", p.display())));
                }
                let importances = match m.kind() {
                    ModelKind::SvmRbf => None,
                    _ => Some(crate::classify::feature_importances(&m)?),
                };
                scored.push(Scored {
                    model: m.kind().as_str().to_string(),
                    scores: predict_proba(&m, &test.x)?,
                    importances,
                });
            }
            if cfg.net.enabled {
                let net = ModelFile::load(&net_path)?.net()?;
                let (imgs, _) = t2_patches(&load_dataset(&test_ds)?);
                scored.push(Scored {
                    model: "micro_net".into(),
                    scores: net.predict_proba(&imgs)?,
                    importances: None,
                });
            }
            let report = report_from_scores(zone, &test.y, scored, &cfg.eval)?;
            write_report(&report, &report_dir)
        },
    )?;
    Ok(())
}

fn run_all(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut runner = Runner {
        workdir: cfg.workdir.clone(),
        records: Vec::new(),
    };
    fs::create_dir_all(&cfg.workdir).map_err(|e| Error::io(&cfg.workdir, e))?;
    write_bytes(&cfg.workdir.join("run_manifest.json"), &cfg.to_json()?)?;

    let (corpus_dir, corpus_hash) = match &cfg.corpus {
        Some(dir) => (dir.clone(), content_hash(dir).map_err(|e| e.in_stage("corpus"))?),
        None => {
            let dir = cfg.workdir.join("corpus");
            let h = runner.stage("phantom", &[&json(&cfg.phantom)], &[dir.clone()], || {
                let corpus = generate_corpus(&cfg.phantom)?;
                save_corpus(&corpus.train, &dir.join("train"))?;
                save_corpus(&corpus.test, &dir.join("test"))
            })?;
            (dir, h)
        }
    };

    let std_file = cfg.workdir.join("standardizer.zldc");
    let std_fit_hash = runner.stage(
        "standardize-fit",
        &[&corpus_hash, &json(&cfg.standardizer)],
        &[std_file.clone()],
        || {
            let train = load_corpus(&corpus_dir.join("train"))?;
            let model = fit_standardizer(&t2_images(&train), &cfg.standardizer)?;
            ModelFile::from_standardizer(&model, cfg.seed)?.save(&std_file)
        },
    )?;

    let std_dir = cfg.workdir.join("std_corpus");
    let std_hash = runner.stage(
        "standardize-apply",
        &[&corpus_hash, &std_fit_hash],
        &[std_dir.clone()],
        || {
            let model = ModelFile::load(&std_file)?.standardizer()?;
            for split in [Split::Train, Split::Test] {
                let cases = load_corpus(&corpus_dir.join(split.as_str()))?;
                let out = cases
                    .par_iter()
                    .map(|c| standardize_case(&model, c))
                    .collect::<Result<Vec<_>>>()?;
                save_corpus(&out, &std_dir.join(split.as_str()))?;
            }
            Ok(())
        },
    )?;

    let mut metrics = Vec::new();
    for &zone in &cfg.zones {
        run_zone(cfg, &mut runner, zone, &std_dir, &std_hash)?;
        let report = cfg.workdir.join("zones").join(zone.as_str()).join("report").join("report.csv");
        metrics.extend(read_rows_csv(&report)?);
    }
    write_bytes(&cfg.workdir.join("metrics.csv"), &rows_csv(&metrics)?)?;
    Ok(RunSummary {
        stages: runner.records,
        metrics,
    })
}

/// Runs every stage for every configured zone. Errors carry the stage name.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let cfg = config.effective();
    if cfg.workers == 0 {
        return run_all(&cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_all(&cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_echo() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back = PipelineConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sv_zone_rejected() {
        let e = PipelineConfig::from_json(br#"{"zones": ["PZ", "SV"]}"#).unwrap_err();
        assert!(e.is_validation());
        assert!(matches!(e, Error::UnknownZone(_)), "{e}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(PipelineConfig::from_json(br#"{"zone": ["PZ"]}"#).is_err());
        assert!(PipelineConfig::from_json(br#"{"zones": []}"#).is_err());
    }
}
