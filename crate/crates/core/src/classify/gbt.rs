//! Second-order gradient boosting of regression trees on the logistic loss.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{sorted_by_feature, Node, Tree};
use super::{normalized, sigmoid, softplus, Matrix, TrainMatrix};
use crate::error::{Error, Result};
use crate::model::Zone;
use crate::seed::derive_rng;

/// L2 penalty on leaf weights.
pub const GBT_LAMBDA: f64 = 1.0;
/// Minimum hessian sum in each child.
pub const GBT_MIN_CHILD_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtHyperparams {
    pub colsample_bytree: f64,
    pub gamma: f64,
    pub eta: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub subsample: f64,
}

impl GbtHyperparams {
    /// Tuned per-zone values.
    pub fn for_zone(zone: Zone) -> Self {
        let (colsample_bytree, gamma, eta, max_depth, n_estimators, subsample) = match zone {
            Zone::Pz => (0.73, 0.009, 0.058, 4, 122, 0.63),
            Zone::Tz => (0.70, 0.255, 0.155, 2, 132, 0.65),
            Zone::As => (0.71, 0.013, 0.143, 2, 117, 0.99),
        };
        Self {
            colsample_bytree,
            gamma,
            eta,
            max_depth,
            n_estimators,
            subsample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.colsample_bytree) {
            return Err(Error::Config(format!("colsample_bytree {} not in (0,1]", self.colsample_bytree)));
        }
        if !unit(self.subsample) {
            return Err(Error::Config(format!("subsample {} not in (0,1]", self.subsample)));
        }
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta {} not in [0,1]", self.eta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Leaf values already include the shrinkage factor.
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
    /// Mean training log-loss after each round.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    g: &'a [f64],
    h: &'a [f64],
    cols: &'a [usize],
    hp: &'a GbtHyperparams,
    nodes: Vec<Node>,
    gain: Vec<f64>,
}

fn score(g: f64, h: f64) -> f64 {
    g * g / (h + GBT_LAMBDA)
}

impl Builder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let gs: f64 = rows.iter().map(|&i| self.g[i]).sum();
        let hs: f64 = rows.iter().map(|&i| self.h[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: -gs / (hs + GBT_LAMBDA) * self.hp.eta,
        });
        if depth >= self.hp.max_depth || rows.len() < 2 {
            return id;
        }
        let parent = score(gs, hs);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in self.cols {
            let sorted = sorted_by_feature(self.x, &rows, f);
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..sorted.len() - 1 {
                let i = sorted[k].1;
                gl += self.g[i];
                hl += self.h[i];
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let (gr, hr) = (gs - gl, hs - hl);
                if hl < GBT_MIN_CHILD_WEIGHT || hr < GBT_MIN_CHILD_WEIGHT {
                    continue;
                }
                let gain = 0.5 * (score(gl, hl) + score(gr, hr) - parent);
                if best.map_or(true, |b| gain > b.0) {
                    best = Some((gain, f, sorted[k].0));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if gain - self.hp.gamma <= 0.0 {
            return id;
        }
        self.gain[feature] += gain;
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn mean_log_loss(margin: &[f64], y: &[u8]) -> f64 {
    let s: f64 = margin
        .iter()
        .zip(y)
        .map(|(&m, &l)| softplus(m) - if l == 1 { m } else { 0.0 })
        .sum();
    s / y.len() as f64
}

/// Round `t` samples rows and columns from its own derived stream.
pub fn train_gbt(data: &TrainMatrix, hp: &GbtHyperparams, seed: u64) -> Result<GbtModel> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let d = data.x.n_cols();
    let n_cols = ((hp.colsample_bytree * d as f64) as usize).clamp(1, d.max(1));
    let mut margin = vec![0.0; n];
    let mut trees = Vec::with_capacity(hp.n_estimators);
    let mut gain = vec![0.0; d];
    let mut train_loss = Vec::with_capacity(hp.n_estimators);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for t in 0..hp.n_estimators {
        let mut rng = derive_rng(seed, "gbt-round", &t.to_string());
        let rows: Vec<usize> = if hp.subsample < 1.0 {
            (0..n).filter(|_| rng.gen::<f64>() < hp.subsample).collect()
        } else {
            (0..n).collect()
        };
        let mut cols = sample(&mut rng, d, n_cols).into_vec();
        cols.sort_unstable();
        for i in 0..n {
            let p = sigmoid(margin[i]);
            g[i] = p - data.y[i] as f64;
            h[i] = p * (1.0 - p);
        }
        let tree = if rows.is_empty() {
            Tree::leaf(0.0)
        } else {
            let mut b = Builder {
                x: &data.x,
                g: &g,
                h: &h,
                cols: &cols,
                hp,
                nodes: Vec::new(),
                gain: vec![0.0; d],
            };
            b.build(rows, 0);
            for (a, v) in gain.iter_mut().zip(&b.gain) {
                *a += v;
            }
            Tree { nodes: b.nodes }
        };
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict(data.x.row(i));
        }
        train_loss.push(mean_log_loss(&margin, &data.y));
        trees.push(tree);
    }
    Ok(GbtModel {
        trees,
        importances: normalized(gain),
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TrainMatrix {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 4) as f64]).collect();
        let y = (0..30).map(|i| (i % 3 == 0 || i > 20) as u8).collect();
        TrainMatrix::new(Matrix::from_rows(&rows).unwrap(), y, None).unwrap()
    }

    #[test]
    fn zone_defaults() {
        let pz = GbtHyperparams::for_zone(Zone::Pz);
        assert_eq!(
            (pz.colsample_bytree, pz.gamma, pz.eta, pz.max_depth, pz.n_estimators, pz.subsample),
            (0.73, 0.009, 0.058, 4, 122, 0.63)
        );
        for z in Zone::ALL {
            GbtHyperparams::for_zone(z).validate().unwrap();
        }
    }

    #[test]
    fn zero_trees_score_half() {
        let hp = GbtHyperparams {
            n_estimators: 0,
            ..GbtHyperparams::for_zone(Zone::Tz)
        };
        let m = train_gbt(&toy(), &hp, 0).unwrap();
        assert_eq!(m.predict_row(&[3.0, 1.0]), 0.5);
    }

    #[test]
    fn zero_eta_scores_half() {
        let hp = GbtHyperparams {
            eta: 0.0,
            ..GbtHyperparams::for_zone(Zone::Pz)
        };
        let m = train_gbt(&toy(), &hp, 0).unwrap();
        assert!(toy().x.rows().all(|r| m.predict_row(r) == 0.5));
    }

    #[test]
    fn depth_is_bounded() {
        let hp = GbtHyperparams {
            max_depth: 2,
            gamma: 0.0,
            ..GbtHyperparams::for_zone(Zone::Pz)
        };
        let m = train_gbt(&toy(), &hp, 5).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
        assert!(m.trees.iter().any(|t| !t.is_leaf()));
    }

    #[test]
    fn invalid_hyperparameters() {
        let mut hp = GbtHyperparams::for_zone(Zone::As);
        hp.subsample = 0.0;
        assert!(hp.validate().is_err());
        hp.subsample = 1.0;
        hp.eta = 1.5;
        assert!(hp.validate().is_err());
    }
}
