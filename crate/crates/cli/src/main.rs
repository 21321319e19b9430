use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zonelesion::classify::{
    feature_importances, k_fold_cv, predict_proba, randomized_search, search_logreg_lambda, train, CvMetric,
    GbtSearchSpace, LambdaSearch, ModelKind, ModelSpec, TrainMatrix,
};
use zonelesion::container::{
    load_dataset, read_bytes, read_feature_csv, save_dataset, write_bytes, write_feature_csv, write_tensor,
};
use zonelesion::corpus::{load_corpus, save_corpus};
use zonelesion::model::feature_names;
use zonelesion::net::train_net;
use zonelesion::persist::{load_model, save_model, schema_hash, ModelFile, NET_KIND};
use zonelesion::phantom::generate_corpus;
use zonelesion::pipeline::{model_seed, run_pipeline, standardize_case, t2_images, t2_patches, PipelineConfig};
use zonelesion::report::{importances_csv, report_from_scores, rows_csv, write_report, ImportanceRow, Scored};
use zonelesion::sampler::build_zone_dataset;
use zonelesion::standardizer::fit_standardizer;
use zonelesion::texture::extract_batch;
use zonelesion::{Error, Result, Split, Zone};

#[derive(Parser)]
#[command(name = "zldc", version, about = "Zone-based lesion classification toolkit")]
struct Cli {
    /// Pipeline config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a synthetic phantom corpus with train/ and test/ splits.
    Phantom {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit or apply T2 intensity standardization.
    Standardize {
        #[command(subcommand)]
        action: StandardizeAction,
    },
    /// Build a zone's paired patch dataset from a directory of cases.
    Sample {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        zone: Zone,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the 26 radiomic features of a patch dataset.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one classifier (or the micro CNN with `--model cnn`).
    Train(TrainArgs),
    /// Stratified k-fold cross-validation of one classifier kind.
    Cv {
        #[command(flatten)]
        data: FeatureArgs,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_enum, default_value = "auc")]
        metric: MetricArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hyperparameter search: randomized for gbt, grid over lambda for logreg_l1.
    Search {
        #[command(flatten)]
        data: FeatureArgs,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value_t = 50)]
        candidates: usize,
        /// Defaults to 3 for gbt and to the config's lambda search folds for logreg_l1.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score held-out data with saved models and write the zone report.
    Evaluate {
        /// Model files; repeat for several.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        /// Patch dataset, needed when a micro CNN is among the models.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        zone: Option<Zone>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ranked feature importances of a saved model.
    Importances {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Saliency maps of a saved micro CNN, one float32 tensor per patch.
    Saliency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline from the config.
    Run {
        /// Overrides the config's workdir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restricts the run to one zone.
        #[arg(long)]
        zone: Option<Zone>,
    },
}

#[derive(Subcommand)]
enum StandardizeAction {
    /// Learn the landmark model from the T2 images of a case directory.
    Fit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Standardize every case of a directory.
    Apply {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FeatureArgs {
    /// Feature CSV of one zone.
    #[arg(long)]
    features: PathBuf,
    /// Expected zone of the rows.
    #[arg(long)]
    zone: Option<Zone>,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature CSV; required for every kind except cnn.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Patch dataset; required for cnn.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    zone: Option<Zone>,
    /// logreg_l1, svm_rbf, random_forest, gbt or cnn.
    #[arg(long)]
    model: String,
    /// Pick hyperparameters by cross-validated search first.
    #[arg(long)]
    search: bool,
    #[arg(long, default_value_t = 50)]
    candidates: usize,
    /// Search folds; defaults to 3 for gbt and to the config's lambda search folds for logreg_l1.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Auc,
    Accuracy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg.effective())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::format("json output", e))
}

/// Reads a feature CSV into a single-zone training matrix.
fn feature_matrix(path: &Path, zone: Option<Zone>) -> Result<TrainMatrix> {
    let data = TrainMatrix::from_features(&read_feature_csv(path)?)?;
    check_zone(data.zone, zone)?;
    Ok(data)
}

fn check_zone(found: Option<Zone>, expected: Option<Zone>) -> Result<()> {
    match (found, expected) {
        (Some(f), Some(e)) if f != e => Err(Error::Config(format!("data is from zone {f}, --zone says {e}"))),
        _ => Ok(()),
    }
}

fn zone_of(data: &TrainMatrix) -> Result<Zone> {
    data.zone.ok_or_else(|| Error::Config("feature rows carry no zone".into()))
}

fn cv_metric(m: MetricArg) -> CvMetric {
    match m {
        MetricArg::Auc => CvMetric::RocAuc,
        MetricArg::Accuracy => CvMetric::Accuracy,
    }
}

fn default_spec(cfg: &PipelineConfig, kind: ModelKind, zone: Zone) -> ModelSpec {
    let c = &cfg.classifiers;
    match kind {
        ModelKind::LogregL1 => ModelSpec::LogregL1(c.logreg.clone()),
        ModelKind::SvmRbf => ModelSpec::SvmRbf(c.svm.clone()),
        ModelKind::RandomForest => ModelSpec::RandomForest(c.forest.clone()),
        ModelKind::Gbt => ModelSpec::Gbt(cfg.gbt_for(zone)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.verb {
        Verb::Phantom { out } => {
            let corpus = generate_corpus(&cfg.phantom)?;
            save_corpus(&corpus.train, &out.join(Split::Train.as_str()))?;
            save_corpus(&corpus.test, &out.join(Split::Test.as_str()))?;
            println!("{} train and {} test cases written to {}", corpus.train.len(), corpus.test.len(), out.display());
        }
        Verb::Standardize { action } => match action {
            StandardizeAction::Fit { corpus, out } => {
                let cases = load_corpus(corpus)?;
                let model = fit_standardizer(&t2_images(&cases), &cfg.standardizer)?;
                ModelFile::from_standardizer(&model, cfg.seed)?.save(out)?;
                println!("standardizer fitted on {} images", cases.len());
            }
            StandardizeAction::Apply { corpus, model, out } => {
                let model = ModelFile::load(model)?.standardizer()?;
                let cases = load_corpus(corpus)?
                    .iter()
                    .map(|c| standardize_case(&model, c))
                    .collect::<Result<Vec<_>>>()?;
                save_corpus(&cases, out)?;
                println!("{} cases standardized", cases.len());
            }
        },
        Verb::Sample { corpus, zone, split, out } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let ds = build_zone_dataset(&load_corpus(corpus)?, *zone, split, &cfg.sampler)?;
            save_dataset(&ds, out)?;
            println!("{} samples ({} positive)", ds.len(), ds.positives());
        }
        Verb::Extract { dataset, out } => {
            let rows = extract_batch(&load_dataset(dataset)?.samples)?;
            write_feature_csv(&rows, out)?;
            println!("{} feature rows", rows.len());
        }
        Verb::Train(args) => train_verb(&cfg, args)?,
        Verb::Cv {
            data,
            model,
            folds,
            metric,
            out,
        } => {
            let d = feature_matrix(&data.features, data.zone)?;
            let zone = zone_of(&d)?;
            let spec = default_spec(&cfg, *model, zone);
            let seed = model_seed(cfg.seed, zone, &format!("cv/{}", model.as_str()));
            let res = k_fold_cv(&d, *folds, seed, cv_metric(*metric), |tr, fold| {
                train(&spec, tr, seed.wrapping_add(fold as u64))
            })?;
            emit(&to_json(&res)?, out.as_deref())?;
        }
        Verb::Search {
            data,
            model,
            candidates,
            folds,
            out,
        } => {
            let d = feature_matrix(&data.features, data.zone)?;
            let zone = zone_of(&d)?;
            let seed = model_seed(cfg.seed, zone, &format!("search/{}", model.as_str()));
            let text = match model {
                ModelKind::Gbt => to_json(&randomized_search(&d, &GbtSearchSpace::default(), *candidates, folds.unwrap_or(3), seed)?)?,
                ModelKind::LogregL1 => {
                    let base = cfg.classifiers.logreg_search.clone().unwrap_or_default();
                    let grid = LambdaSearch {
                        k: folds.unwrap_or(base.k),
                        ..base
                    };
                    to_json(&search_logreg_lambda(&d, &grid, seed)?)?
                }
                other => return Err(Error::Unsupported(format!("no search space for {}", other.as_str()))),
            };
            emit(&text, out.as_deref())?;
        }
        Verb::Evaluate {
            model,
            features,
            dataset,
            zone,
            out,
        } => evaluate_verb(&cfg, model, features, dataset.as_deref(), *zone, out.as_deref())?,
        Verb::Importances { model, out } => {
            let m = load_model(model)?;
            let imp = feature_importances(&m)?;
            let zone = m.zone.ok_or_else(|| Error::Config("model has no zone".into()))?;
            let rows: Vec<ImportanceRow> = imp
                .ranking
                .iter()
                .enumerate()
                .map(|(r, &j)| ImportanceRow {
                    zone,
                    model: m.kind().as_str().to_string(),
                    rank: r + 1,
                    feature: feature_names()[j].to_string(),
                    value: imp.values[j],
                })
                .collect();
            let bytes = importances_csv(&rows)?;
            emit(&String::from_utf8_lossy(&bytes), out.as_deref())?;
        }
        Verb::Saliency { model, dataset, out } => {
            let net = ModelFile::load(model)?.net()?;
            let ds = load_dataset(dataset)?;
            let (imgs, labels) = t2_patches(&ds);
            let probs = net.predict_proba(&imgs)?;
            let mut index = String::from("sample_id,label,probability,file\n");
            for (i, img) in imgs.iter().enumerate() {
                let sal = net.saliency_map(img)?;
                let id = ds.samples[i].sample_id();
                let safe: String = id
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                    .collect();
                let file = format!("{i:05}_{safe}.f32");
                let values: Vec<f32> = sal.as_slice().iter().map(|&v| v as f32).collect();
                write_tensor(&out.join(&file), &[sal.rows(), sal.cols()], &values)?;
                index.push_str(&format!("{id},{},{:?},{file}\n", labels[i], probs[i]));
            }
            write_bytes(&out.join("index.csv"), index.as_bytes())?;
            println!("{} saliency maps written to {}", imgs.len(), out.display());
        }
        Verb::Run { out, zone } => {
            let mut cfg = cfg;
            if let Some(o) = out {
                cfg.workdir = o.clone();
            }
            if let Some(z) = zone {
                cfg.zones = vec![*z];
            }
            let summary = run_pipeline(&cfg)?;
            for s in &summary.stages {
                println!("{:<20} {:?}", s.stage, s.status);
            }
            print!("{}", String::from_utf8_lossy(&rows_csv(&summary.metrics)?));
        }
    }
    Ok(())
}

fn train_verb(cfg: &PipelineConfig, args: &TrainArgs) -> Result<()> {
    if args.model == "cnn" || args.model == NET_KIND {
        if args.search {
            return Err(Error::Unsupported("--search is not available for the cnn".into()));
        }
        let path = args
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("--model cnn needs --dataset".into()))?;
        let ds = load_dataset(path)?;
        check_zone(Some(ds.zone), args.zone)?;
        let (imgs, labels) = t2_patches(&ds);
        let mut nc = cfg.net.config.clone();
        nc.seed = model_seed(cfg.seed, ds.zone, NET_KIND);
        let (net, curve) = train_net(&nc, &imgs, &labels)?;
        ModelFile::from_net(&net, &nc, Some(ds.zone))?.save(&args.out)?;
        println!("final training loss {:?}", curve.last().copied().unwrap_or(f64::NAN));
        return Ok(());
    }
    let kind: ModelKind = args.model.parse()?;
    let path = args
        .features
        .as_ref()
        .ok_or_else(|| Error::Config(format!("--model {} needs --features", kind.as_str())))?;
    let data = feature_matrix(path, args.zone)?;
    let zone = zone_of(&data)?;
    let seed = model_seed(cfg.seed, zone, kind.as_str());
    let spec = match (kind, args.search) {
        (_, false) => default_spec(cfg, kind, zone),
        (ModelKind::Gbt, true) => {
            let res = randomized_search(&data, &GbtSearchSpace::default(), args.candidates, args.folds.unwrap_or(3), seed)?;
            eprintln!("search best cv auc {:.4}", res.best_score);
            ModelSpec::Gbt(res.best)
        }
        (ModelKind::LogregL1, true) => {
            let base = cfg.classifiers.logreg_search.clone().unwrap_or_default();
            let grid = LambdaSearch {
                k: args.folds.unwrap_or(base.k),
                ..base
            };
            let res = search_logreg_lambda(&data, &grid, seed)?;
            eprintln!("search best lambda {} (cv auc {:.4})", res.best, res.best_score);
            let mut p = cfg.classifiers.logreg.clone();
            p.lambda = res.best;
            ModelSpec::LogregL1(p)
        }
        (other, true) => return Err(Error::Unsupported(format!("no search space for {}", other.as_str()))),
    };
    let model = train(&spec, &data, seed)?;
    save_model(&model, &args.out)?;
    println!("{} model for {zone} written to {}", kind.as_str(), args.out.display());
    Ok(())
}

fn evaluate_verb(
    cfg: &PipelineConfig,
    models: &[PathBuf],
    features: &Path,
    dataset: Option<&Path>,
    zone: Option<Zone>,
    out: Option<&Path>,
) -> Result<()> {
    let files = models.iter().map(|p| ModelFile::load(p)).collect::<Result<Vec<_>>>()?;
    let header = csv_header(features)?;
    let n_feat = header.len().saturating_sub(3);
    let feature_hash = schema_hash(&header[..n_feat]);
    for f in files.iter().filter(|f| f.kind != NET_KIND) {
        f.check_schema(&feature_hash)?;
    }
    let test = feature_matrix(features, zone)?;
    let zone = zone_of(&test)?;
    let mut scored = Vec::new();
    for f in &files {
        if f.metadata.zone.is_some_and(|z| z != zone) {
            return Err(Error::Config(format!("{} model was trained on another zone than {zone}", f.kind)));
        }
        if f.kind == NET_KIND {
            let path = dataset.ok_or_else(|| Error::Config("evaluating a cnn needs --dataset".into()))?;
            let ds = load_dataset(path)?;
            let (imgs, labels) = t2_patches(&ds);
            if labels != test.y {
                return Err(Error::Shape("dataset labels do not match the feature rows".into()));
            }
            scored.push(Scored {
                model: NET_KIND.into(),
                scores: f.net()?.predict_proba(&imgs)?,
                importances: None,
            });
            continue;
        }
        let m = f.classifier()?;
        let importances = match m.kind() {
            ModelKind::SvmRbf => None,
            _ => Some(feature_importances(&m)?),
        };
        scored.push(Scored {
            model: m.kind().as_str().to_string(),
            scores: predict_proba(&m, &test.x)?,
            importances,
        });
    }
    let report = report_from_scores(zone, &test.y, scored, &cfg.eval)?;
    if let Some(dir) = out {
        write_report(&report, dir)?;
    }
    print!("{}", String::from_utf8_lossy(&rows_csv(&report.rows)?));
    Ok(())
}

fn csv_header(path: &Path) -> Result<Vec<String>> {
    let bytes = read_bytes(path)?;
    let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    Ok(String::from_utf8_lossy(first)
        .trim_end_matches('\r')
        .split(',')
        .map(str::to_string)
        .collect())
}
