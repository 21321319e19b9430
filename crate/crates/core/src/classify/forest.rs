//! Random forest with entropy splits, bootstrap rows and per-split
//! feature sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{sorted_by_feature, Node, Tree};
use super::{normalized, Matrix, TrainMatrix};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means ceil(sqrt(n_features)).
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            max_features: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
}

impl ForestModel {
    /// Fraction of trees voting positive.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let votes: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        votes / self.trees.len() as f64
    }
}

/// Shannon entropy in bits of a two-class node.
pub fn entropy_bits(pos: usize, total: usize) -> f64 {
    if total == 0 || pos == 0 || pos == total {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    m: usize,
    min_split: usize,
    importance: Vec<f64>,
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[usize], pos: usize, rng: &mut StreamRng) -> Option<Best> {
        let n = rows.len();
        let parent = entropy_bits(pos, n);
        let mut order: Vec<usize> = (0..self.x.n_cols()).collect();
        order.shuffle(rng);
        let mut best: Option<(f64, usize, usize, f64)> = None;
        let mut tried = 0;
        for f in order {
            if tried == self.m {
                break;
            }
            let sorted = sorted_by_feature(self.x, rows, f);
            if sorted[0].0 == sorted[n - 1].0 {
                continue;
            }
            tried += 1;
            let mut left_pos = 0;
            for k in 0..n - 1 {
                left_pos += self.y[sorted[k].1] as usize;
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                let child = (nl as f64 * entropy_bits(left_pos, nl) + nr as f64 * entropy_bits(pos - left_pos, nr))
                    / n as f64;
                let gain = parent - child;
                if best.map_or(true, |b| gain > b.0) {
                    best = Some((gain, f, nl, sorted[k].0));
                }
            }
        }
        let (gain, feature, _, threshold) = best?;
        let (left, right) = rows.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
        Some(Best {
            gain,
            feature,
            threshold,
            left,
            right,
        })
    }

    fn grow(&mut self, rows: Vec<usize>, total: usize, rng: &mut StreamRng) -> usize {
        let id = self.nodes.len();
        let pos: usize = rows.iter().map(|&i| self.y[i] as usize).sum();
        let leaf = Node::Leaf {
            value: if 2 * pos >= rows.len() { 1.0 } else { 0.0 },
        };
        self.nodes.push(leaf.clone());
        if pos == 0 || pos == rows.len() || rows.len() < self.min_split {
            return id;
        }
        let Some(b) = self.best_split(&rows, pos, rng) else {
            return id;
        };
        self.importance[b.feature] += b.gain * rows.len() as f64 / total as f64;
        let left = self.grow(b.left, total, rng);
        let right = self.grow(b.right, total, rng);
        self.nodes[id] = Node::Split {
            feature: b.feature,
            threshold: b.threshold,
            left,
            right,
        };
        id
    }
}

fn grow_tree(data: &TrainMatrix, m: usize, min_split: usize, mut rng: StreamRng) -> (Tree, Vec<f64>) {
    let n = data.len();
    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut g = Grower {
        x: &data.x,
        y: &data.y,
        m,
        min_split,
        importance: vec![0.0; data.x.n_cols()],
        nodes: Vec::new(),
    };
    g.grow(rows, n, &mut rng);
    (Tree { nodes: g.nodes }, g.importance)
}

/// Trees are grown in parallel; tree `t` draws from its own stream derived
/// from `(seed, t)`, so the result does not depend on scheduling.
pub fn train_random_forest(data: &TrainMatrix, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    let d = data.x.n_cols();
    let m = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let rng = derive_rng(seed, "forest-tree", &t.to_string());
            grow_tree(data, m, params.min_samples_split.max(2), rng)
        })
        .collect();
    let mut importance = vec![0.0; d];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importance.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    Ok(ForestModel {
        trees,
        importances: normalized(importance),
    })
}
