//! Stratified k-fold cross-validation and randomized hyperparameter search.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{predict_proba, train, GbtHyperparams, LogregParams, ModelSpec, TrainMatrix, TrainedModel};
use crate::error::{Error, Result};
use crate::eval::{roc_auc, LabeledScores};
use crate::seed::{derive_rng, derive_u64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMetric {
    RocAuc,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    /// Fold index of every row.
    pub assignment: Vec<usize>,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

/// Each class is shuffled and dealt round-robin; negatives continue where
/// positives stopped so fold sizes differ by at most one.
pub fn stratified_folds(y: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > y.len() {
        return Err(Error::Config(format!("k={k} must be in [2, {}]", y.len())));
    }
    let mut rng = derive_rng(seed, "cv-folds", &k.to_string());
    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; y.len()];
    for (slot, &i) in pos.iter().chain(&neg).enumerate() {
        fold[i] = slot % k;
    }
    Ok(fold)
}

/// Held-out metric per fold for models produced by `trainer`.
pub fn k_fold_cv<F>(data: &TrainMatrix, k: usize, seed: u64, metric: CvMetric, trainer: F) -> Result<CvResult>
where
    F: Fn(&TrainMatrix, usize) -> Result<TrainedModel> + Sync,
{
    let assignment = stratified_folds(&data.y, k, seed)?;
    for f in 0..k {
        let held: Vec<u8> = (0..data.len()).filter(|&i| assignment[i] == f).map(|i| data.y[i]).collect();
        let held_pos = held.iter().filter(|&&l| l == 1).count();
        let train_pos = data.positives() - held_pos;
        let train_len = data.len() - held.len();
        let held_needs_both = metric == CvMetric::RocAuc;
        if train_pos == 0
            || train_pos == train_len
            || (held_needs_both && (held_pos == 0 || held_pos == held.len()))
        {
            return Err(Error::Config(format!(
                "fold {f} lacks a class ({} positives for k={k})",
                data.positives()
            )));
        }
    }
    let fold_scores = (0..k)
        .into_par_iter()
        .map(|f| {
            let tr: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let te: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            let model = trainer(&data.subset(&tr), f)?;
            let test = data.subset(&te);
            let scores = predict_proba(&model, &test.x)?;
            match metric {
                CvMetric::RocAuc => Ok(roc_auc(&LabeledScores::new(scores, test.y)?)?.auc),
                CvMetric::Accuracy => {
                    let hits = scores
                        .iter()
                        .zip(&test.y)
                        .filter(|(&s, &l)| (s >= 0.5) == (l == 1))
                        .count();
                    Ok(hits as f64 / te.len() as f64)
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = fold_scores.iter().sum::<f64>() / k as f64;
    Ok(CvResult {
        k,
        assignment,
        fold_scores,
        mean,
    })
}

/// Inclusive ranges sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtSearchSpace {
    pub colsample_bytree: (f64, f64),
    pub gamma: (f64, f64),
    pub eta: (f64, f64),
    pub max_depth: (usize, usize),
    pub n_estimators: (usize, usize),
    pub subsample: (f64, f64),
}

impl Default for GbtSearchSpace {
    fn default() -> Self {
        Self {
            colsample_bytree: (0.5, 1.0),
            gamma: (0.0, 0.3),
            eta: (0.01, 0.3),
            max_depth: (2, 6),
            n_estimators: (50, 200),
            subsample: (0.5, 1.0),
        }
    }
}

impl GbtSearchSpace {
    /// A space containing only `hp`.
    pub fn point(hp: &GbtHyperparams) -> Self {
        Self {
            colsample_bytree: (hp.colsample_bytree, hp.colsample_bytree),
            gamma: (hp.gamma, hp.gamma),
            eta: (hp.eta, hp.eta),
            max_depth: (hp.max_depth, hp.max_depth),
            n_estimators: (hp.n_estimators, hp.n_estimators),
            subsample: (hp.subsample, hp.subsample),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("colsample_bytree", self.colsample_bytree),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("subsample", self.subsample),
        ];
        for (name, (lo, hi)) in reals {
            if !(lo <= hi) {
                return Err(Error::Config(format!("empty range for {name}: [{lo}, {hi}]")));
            }
        }
        if self.max_depth.0 > self.max_depth.1 || self.n_estimators.0 > self.n_estimators.1 {
            return Err(Error::Config("empty integer range in search space".into()));
        }
        // both corners must be valid settings
        self.corner(false).validate()?;
        self.corner(true).validate()
    }

    fn corner(&self, high: bool) -> GbtHyperparams {
        let pick = |r: (f64, f64)| if high { r.1 } else { r.0 };
        let pick_u = |r: (usize, usize)| if high { r.1 } else { r.0 };
        GbtHyperparams {
            colsample_bytree: pick(self.colsample_bytree),
            gamma: pick(self.gamma),
            eta: pick(self.eta),
            max_depth: pick_u(self.max_depth),
            n_estimators: pick_u(self.n_estimators),
            subsample: pick(self.subsample),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> GbtHyperparams {
        let mut real = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let colsample_bytree = real(self.colsample_bytree);
        let gamma = real(self.gamma);
        let eta = real(self.eta);
        let subsample = real(self.subsample);
        let max_depth = rng.gen_range(self.max_depth.0..=self.max_depth.1);
        let n_estimators = rng.gen_range(self.n_estimators.0..=self.n_estimators.1);
        GbtHyperparams {
            colsample_bytree,
            gamma,
            eta,
            max_depth,
            n_estimators,
            subsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow<H> {
    pub params: H,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<H> {
    pub best: H,
    pub best_score: f64,
    pub table: Vec<SearchRow<H>>,
}

fn pick_best<H: Clone>(table: Vec<SearchRow<H>>) -> SearchResult<H> {
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean > table[best].mean {
            best = i;
        }
    }
    SearchResult {
        best: table[best].params.clone(),
        best_score: table[best].mean,
        table,
    }
}

/// Samples `n_candidates` settings and keeps the best mean CV ROC-AUC
/// (ties go to the earliest sample).
pub fn randomized_search(
    data: &TrainMatrix,
    space: &GbtSearchSpace,
    n_candidates: usize,
    k: usize,
    seed: u64,
) -> Result<SearchResult<GbtHyperparams>> {
    space.validate()?;
    if n_candidates == 0 {
        return Err(Error::Config("randomized search needs at least one candidate".into()));
    }
    let mut rng = derive_rng(seed, "search-candidates", "gbt");
    let candidates: Vec<GbtHyperparams> = (0..n_candidates).map(|_| space.sample(&mut rng)).collect();
    let table = candidates
        .into_par_iter()
        .enumerate()
        .map(|(c, hp)| {
            let spec = ModelSpec::Gbt(hp);
            let cv = k_fold_cv(data, k, seed, CvMetric::RocAuc, |tr, fold| {
                train(&spec, tr, derive_u64(seed, "search-fit", &format!("{c}/{fold}")))
            })?;
            Ok(SearchRow {
                params: hp,
                fold_scores: cv.fold_scores,
                mean: cv.mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pick_best(table))
}

/// Grid of L1 strengths for logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lambdas: Vec<f64>,
    pub k: usize,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self {
            lambdas: vec![0.001, 0.003, 0.01, 0.03, 0.1],
            k: 10,
        }
    }
}

pub fn search_logreg_lambda(data: &TrainMatrix, grid: &LambdaSearch, seed: u64) -> Result<SearchResult<f64>> {
    if grid.lambdas.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let table = grid
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let spec = ModelSpec::LogregL1(LogregParams {
                lambda,
                ..Default::default()
            });
            let cv = k_fold_cv(data, grid.k, seed, CvMetric::RocAuc, |tr, _| train(&spec, tr, seed))?;
            Ok(SearchRow {
                params: lambda,
                fold_scores: cv.fold_scores,
                mean: cv.mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pick_best(table))
}
