//! The four shallow classifiers under one train/score contract, plus
//! stratified cross-validation and randomized hyperparameter search.

mod cv;
mod forest;
mod gbt;
mod logreg;
mod svm;
mod tree;

pub use cv::{
    k_fold_cv, randomized_search, search_logreg_lambda, stratified_folds, CvMetric, CvResult, GbtSearchSpace,
    LambdaSearch, SearchResult, SearchRow,
};
pub use forest::{entropy_bits, train_random_forest, ForestModel, ForestParams};
pub use gbt::{train_gbt, GbtHyperparams, GbtModel, GBT_LAMBDA, GBT_MIN_CHILD_WEIGHT};
pub use logreg::{train_logreg_l1, LogregModel, LogregParams};
pub use svm::{train_svm_rbf, Gamma, SvmModel, SvmParams};
pub use tree::{Node, Tree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, Zone, FEATURE_COUNT};

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_rows * n_cols != data.len() {
            return Err(Error::Shape(format!(
                "{n_rows}x{n_cols} matrix needs {} values, got {}",
                n_rows * n_cols,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry {v}")));
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), n_cols, rows.concat())
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn map_column(&mut self, j: usize, f: impl Fn(f64) -> f64) {
        for i in 0..self.n_rows {
            let v = &mut self.data[i * self.n_cols + j];
            *v = f(*v);
        }
    }
}

/// Features plus binary labels for one zone.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMatrix {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub zone: Option<Zone>,
}

impl TrainMatrix {
    pub fn new(x: Matrix, y: Vec<u8>, zone: Option<Zone>) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::Shape(format!("{} rows vs {} labels", x.n_rows(), y.len())));
        }
        if let Some(l) = y.iter().find(|&&l| l > 1) {
            return Err(Error::format("label", format!("{l} is not 0 or 1")));
        }
        Ok(Self { x, y, zone })
    }

    /// Stacks feature rows of a single zone.
    pub fn from_features(rows: &[FeatureVector]) -> Result<Self> {
        let zone = rows.first().map(|r| r.zone).ok_or(Error::EmptyDataset)?;
        if let Some(r) = rows.iter().find(|r| r.zone != zone) {
            return Err(Error::format(
                "feature table",
                format!("row {} is {}, table is {zone}", r.sample_id, r.zone),
            ));
        }
        let data: Vec<f64> = rows.iter().flat_map(|r| r.values).collect();
        let x = Matrix::new(rows.len(), FEATURE_COUNT, data)?;
        Self::new(x, rows.iter().map(|r| r.label).collect(), Some(zone))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&l| l == 1).count()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainMatrix {
        TrainMatrix {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            zone: self.zone,
        }
    }

    /// Training precondition: at least two rows and both classes present.
    pub fn check_trainable(&self) -> Result<()> {
        let p = self.positives();
        if self.len() < 2 || p == 0 || p == self.len() {
            return Err(Error::Config(format!(
                "training needs both classes ({} rows, {p} positive)",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Per-column z-scoring statistics (population std; constant columns map to 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.n_rows() as f64;
        let d = x.n_cols();
        let mut mean = vec![0.0; d];
        for r in x.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = if self.std[j] > 0.0 {
                (row[j] - self.mean[j]) / self.std[j]
            } else {
                0.0
            };
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut data = vec![0.0; x.n_rows() * x.n_cols()];
        for (i, r) in x.rows().enumerate() {
            self.transform_row(r, &mut data[i * x.n_cols()..(i + 1) * x.n_cols()]);
        }
        Matrix {
            n_rows: x.n_rows(),
            n_cols: x.n_cols(),
            data,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogregL1,
    SvmRbf,
    RandomForest,
    Gbt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LogregL1,
        ModelKind::SvmRbf,
        ModelKind::RandomForest,
        ModelKind::Gbt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LogregL1 => "logreg_l1",
            ModelKind::SvmRbf => "svm_rbf",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Gbt => "gbt",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelParams {
    LogregL1(LogregModel),
    SvmRbf(SvmModel),
    RandomForest(ForestModel),
    Gbt(GbtModel),
}

/// Hyperparameters of a training run, one variant per model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LogregL1(LogregParams),
    SvmRbf(SvmParams),
    RandomForest(ForestParams),
    Gbt(GbtHyperparams),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::LogregL1(_) => ModelKind::LogregL1,
            ModelSpec::SvmRbf(_) => ModelKind::SvmRbf,
            ModelSpec::RandomForest(_) => ModelKind::RandomForest,
            ModelSpec::Gbt(_) => ModelKind::Gbt,
        }
    }

    /// Defaults for `kind`; GBT takes the zone's tuned values.
    pub fn default_for(kind: ModelKind, zone: Zone) -> Self {
        match kind {
            ModelKind::LogregL1 => ModelSpec::LogregL1(LogregParams::default()),
            ModelKind::SvmRbf => ModelSpec::SvmRbf(SvmParams::default()),
            ModelKind::RandomForest => ModelSpec::RandomForest(ForestParams::default()),
            ModelKind::Gbt => ModelSpec::Gbt(GbtHyperparams::for_zone(zone)),
        }
    }
}

/// A fitted classifier with the metadata it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub zone: Option<Zone>,
    pub seed: u64,
    pub n_features: usize,
    pub spec: ModelSpec,
    pub params: ModelParams,
}

/// Trains the model described by `spec`.
pub fn train(spec: &ModelSpec, data: &TrainMatrix, seed: u64) -> Result<TrainedModel> {
    let params = match spec {
        ModelSpec::LogregL1(p) => ModelParams::LogregL1(train_logreg_l1(data, p)?),
        ModelSpec::SvmRbf(p) => ModelParams::SvmRbf(train_svm_rbf(data, p)?),
        ModelSpec::RandomForest(p) => ModelParams::RandomForest(train_random_forest(data, p, seed)?),
        ModelSpec::Gbt(p) => ModelParams::Gbt(train_gbt(data, p, seed)?),
    };
    Ok(TrainedModel {
        zone: data.zone,
        seed,
        n_features: data.x.n_cols(),
        spec: spec.clone(),
        params,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::LogregL1(_) => ModelKind::LogregL1,
            ModelParams::SvmRbf(_) => ModelKind::SvmRbf,
            ModelParams::RandomForest(_) => ModelKind::RandomForest,
            ModelParams::Gbt(_) => ModelKind::Gbt,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.params {
            ModelParams::LogregL1(m) => m.predict_row(row),
            ModelParams::SvmRbf(m) => m.predict_row(row),
            ModelParams::RandomForest(m) => m.predict_row(row),
            ModelParams::Gbt(m) => m.predict_row(row),
        }
    }
}

/// Positive-class probabilities for every row.
pub fn predict_proba(model: &TrainedModel, rows: &Matrix) -> Result<Vec<f64>> {
    if rows.n_cols() != model.n_features {
        return Err(Error::Shape(format!(
            "model expects {} features, rows have {}",
            model.n_features,
            rows.n_cols()
        )));
    }
    Ok(rows.rows().map(|r| model.predict_row(r)).collect())
}

/// Importance values with indices ranked by descending value (ties by index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importances {
    pub values: Vec<f64>,
    pub ranking: Vec<usize>,
}

impl Importances {
    pub fn from_values(values: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..values.len()).collect();
        ranking.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        Self { values, ranking }
    }

    /// Rank (1-based) of feature `index`.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.ranking.iter().position(|&i| i == index).map(|p| p + 1)
    }
}

pub(crate) fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

/// Logreg: |standardized coefficient|; forest: entropy decrease; GBT: split
/// gain (both normalized to sum 1). SVM has no per-feature coefficients.
pub fn feature_importances(model: &TrainedModel) -> Result<Importances> {
    let values = match &model.params {
        ModelParams::LogregL1(m) => m.weights.iter().map(|w| w.abs()).collect(),
        ModelParams::SvmRbf(_) => {
            return Err(Error::Unsupported(
                "feature importances are not available for the RBF SVM".into(),
            ))
        }
        ModelParams::RandomForest(m) => m.importances.clone(),
        ModelParams::Gbt(m) => m.importances.clone(),
    };
    Ok(Importances::from_values(values))
}
