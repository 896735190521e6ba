use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    /// Unlimited when absent.
    #[serde(default)]
    pub max_depth: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, min_samples_split: 2, bootstrap: true, max_depth: None }
    }
}

/// A tree node; leaves have no feature or children. Internal nodes send rows
/// with `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match (node.feature, node.left, node.right) {
                (Some(f), Some(l), Some(r)) => i = if x[f] <= node.threshold { l } else { r },
                _ => return node.leaf_value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match (t.nodes[i].left, t.nodes[i].right) {
                (Some(l), Some(r)) => 1 + walk(t, l).max(walk(t, r)),
                _ => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of the tree outputs for each row.
    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.n_features {
            return Err(Error::dim(format!("forest expects {} features, got {}", self.n_features, rows.ncols())));
        }
        if self.trees.is_empty() {
            return Err(Error::State("forest has no trees".into()));
        }
        let t = self.trees.len() as f64;
        Ok(rows.rows().into_iter().map(|r| self.trees.iter().map(|tree| tree.predict_row(r)).sum::<f64>() / t).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<ForestModel> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Best variance-reduction split of a sample: `(feature, threshold)`, or
/// `None` when no feature takes two distinct values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// `S_L^2 / n_L + S_R^2 / n_R`; larger is better.
    pub score: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b { a } else { m }
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    cfg: &'a ForestConfig,
    /// For each feature, sample positions ordered by that feature; a node owns
    /// the same contiguous range in every list.
    order: Vec<Vec<usize>>,
    scratch: Vec<usize>,
    goes_left: Vec<bool>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn best_split(&self, lo: usize, hi: usize, total: f64) -> Option<Split> {
        let n = (hi - lo) as f64;
        let mut best: Option<Split> = None;
        for (f, ord) in self.order.iter().enumerate() {
            let idx = &ord[lo..hi];
            let mut left_sum = 0.0;
            for i in 0..idx.len() - 1 {
                left_sum += self.y[idx[i]];
                let a = self.x[[idx[i], f]];
                let b = self.x[[idx[i + 1], f]];
                if a == b {
                    continue;
                }
                let nl = (i + 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
                if best.is_none_or(|s| score > s.score) {
                    best = Some(Split { feature: f, threshold: midpoint(a, b), score });
                }
            }
        }
        best
    }

    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        let idx = &self.order[0][lo..hi];
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let n = hi - lo;
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        self.nodes.push(Node { feature: None, threshold: 0.0, left: None, right: None, leaf_value: total / n as f64 });
        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        if pure || n < self.cfg.min_samples_split.max(2) || !depth_ok {
            return id;
        }
        let Some(split) = self.best_split(lo, hi, total) else {
            return id;
        };
        for &i in &self.order[split.feature][lo..hi] {
            self.goes_left[i] = self.x[[i, split.feature]] <= split.threshold;
        }
        let mut n_left = 0;
        for f in 0..self.order.len() {
            self.scratch.clear();
            let range = &mut self.order[f][lo..hi];
            let mut w = 0;
            for r in 0..range.len() {
                let i = range[r];
                if self.goes_left[i] {
                    range[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            range[w..].copy_from_slice(&self.scratch);
            n_left = w;
        }
        let mid = lo + n_left;
        let left = self.build(lo, mid, depth + 1);
        let right = self.build(mid, hi, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(split.feature);
        node.threshold = split.threshold;
        node.left = Some(left);
        node.right = Some(right);
        id
    }
}

/// Grows one CART regression tree on all rows of `x` (duplicates allowed).
pub fn grow_tree(x: &Array2<f64>, y: &[f64], cfg: &ForestConfig) -> Result<Tree> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Capacity("tree needs at least one row with a target".into()));
    }
    let order = (0..x.ncols())
        .map(|f| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            o
        })
        .collect::<Vec<_>>();
    let order = if order.is_empty() { vec![(0..n).collect()] } else { order };
    let mut b = Builder { x, y, cfg, order, scratch: Vec::with_capacity(n), goes_left: vec![false; n], nodes: Vec::new() };
    if x.ncols() == 0 {
        b.nodes.push(Node { feature: None, threshold: 0.0, left: None, right: None, leaf_value: y.iter().sum::<f64>() / n as f64 });
    } else {
        b.build(0, n, 0);
    }
    Ok(Tree { nodes: b.nodes })
}

/// Exhaustive best split over every feature and midpoint threshold, scored
/// by the summed squared error of the two children (lower is better, first
/// feature then lowest threshold wins ties).
pub fn brute_force_split(x: &Array2<f64>, y: &[f64]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = x.column(f).to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = midpoint(w[0], w[1]);
            let (l, r): (Vec<f64>, Vec<f64>) = {
                let mut l = Vec::new();
                let mut r = Vec::new();
                for (i, &v) in x.column(f).iter().enumerate() {
                    if v <= thr { l.push(y[i]) } else { r.push(y[i]) }
                }
                (l, r)
            };
            let sse = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            };
            let cost = sse(&l) + sse(&r);
            if best.is_none_or(|b| cost < b.2) {
                best = Some((f, thr, cost));
            }
        }
    }
    best
}

/// Random forest: each tree sees a bootstrap sample of size `n` (or all rows
/// when bootstrapping is off) drawn from stream `seed.index(tree)`.
pub fn train_forest(train: &Dataset, cfg: &ForestConfig, seed: SeedStream) -> Result<ForestModel> {
    let y = train.continuous_target()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::Capacity("forest needs at least one training row".into()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::config("forest needs at least one tree"));
    }
    let x = train.features();
    let y = y.as_slice().expect("contiguous target").to_vec();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            if !cfg.bootstrap {
                return grow_tree(x, &y, cfg);
            }
            let mut rng = seed.index(t as u64).rng();
            let pick: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xb = x.select(ndarray::Axis(0), &pick);
            let yb: Vec<f64> = pick.iter().map(|&i| y[i]).collect();
            grow_tree(&xb, &yb, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel { n_features: train.n_features(), trees })
}
