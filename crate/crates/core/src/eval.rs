//! ROC and precision-recall curves, their areas, and thresholded F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores<T> {
    scores: Vec<T>,
    labels: Vec<u8>,
}

impl<T: Real> LabeledScores<T> {
    pub fn new(scores: Vec<T>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score {s}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::format("label", format!("{l} is not 0 or 1")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    /// Cumulative (tp, fp, threshold) after each distinct score, descending.
    fn tie_groups(&self) -> Vec<(usize, usize, T)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("finite scores")
        });
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == s {
                if self.labels[order[i]] == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            out.push((tp, fp, s));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; `inf` for the origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub area: f64,
}

/// Trapezoidal area under ROC points ordered by threshold.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum()
}

/// Average-precision step sum `sum (R_k - R_{k-1}) P_k`.
pub fn pr_area(points: &[PrPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * w[1].precision)
        .sum()
}

/// ROC curve with one threshold per distinct score. The trapezoidal area
/// equals the pairwise concordance with ties counted one half.
pub fn roc_auc<T: Real>(ls: &LabeledScores<T>) -> Result<RocCurve> {
    let (p, n) = (ls.positives(), ls.negatives());
    if p == 0 || n == 0 {
        return Err(Error::Numeric("ROC needs both classes".into()));
    }
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    for (tp, fp, s) in ls.tie_groups() {
        points.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: s.to_f64_lossy(),
        });
    }
    let auc = roc_area(&points);
    Ok(RocCurve { points, auc })
}

/// Precision-recall curve starting at (recall 0, precision 1).
pub fn pr_auc<T: Real>(ls: &LabeledScores<T>) -> Result<PrCurve> {
    let p = ls.positives();
    if p == 0 {
        return Err(Error::Numeric("PR curve needs at least one positive".into()));
    }
    let mut points = vec![PrPoint {
        recall: 0.0,
        precision: 1.0,
        threshold: f64::INFINITY,
    }];
    for (tp, fp, s) in ls.tie_groups() {
        points.push(PrPoint {
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: s.to_f64_lossy(),
        });
    }
    let area = pr_area(&points);
    Ok(PrCurve { points, area })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl F1Summary {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

/// Precision, recall and F1 with `score >= threshold` predicted positive.
pub fn f1_at<T: Real>(ls: &LabeledScores<T>, threshold: T) -> F1Summary {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in ls.scores.iter().zip(&ls.labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    F1Summary::from_counts(tp, fp, tn, fn_)
}
