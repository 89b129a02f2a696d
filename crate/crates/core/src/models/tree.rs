//! CART decision trees: variance reduction for regression, Gini impurity for
//! binary classification.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Third => d / 3,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Mean targets (regression) or `[p_uncritical, p_critical]`.
    Leaf { value: Vec<f64>, samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeTask {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub task: TreeTask,
    pub n_features: usize,
    pub nodes: Vec<Node>,
}

/// Per-row targets in a common numeric form: regression columns, or a
/// one-hot `[uncritical, critical]` encoding.
fn target_rows(target: Target<'_>) -> (TreeTask, DMatrix<f64>) {
    match target {
        Target::Regression(y) => (TreeTask::Regression, y.clone()),
        Target::Classification(y) => (
            TreeTask::Classification,
            DMatrix::from_fn(y.len(), 2, |i, j| if (y[i] == 1) == (j == 1) { 1.0 } else { 0.0 }),
        ),
    }
}

/// Impurity times sample count, from the per-output sums.
fn weighted_impurity(task: TreeTask, count: f64, sum: &[f64], sum_sq: &[f64]) -> f64 {
    if count == 0.0 {
        return 0.0;
    }
    match task {
        TreeTask::Regression => sum.iter().zip(sum_sq).map(|(s, q)| (q - s * s / count).max(0.0)).sum(),
        TreeTask::Classification => count - sum.iter().map(|s| s * s).sum::<f64>() / count,
    }
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: DMatrix<f64>,
    task: TreeTask,
    cfg: TreeConfig,
    k_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn sums(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let m = self.y.ncols();
        let mut s = vec![0.0; m];
        let mut q = vec![0.0; m];
        for &r in rows {
            for j in 0..m {
                let v = self.y[(r, j)];
                s[j] += v;
                q[j] += v * v;
            }
        }
        (s, q)
    }

    fn leaf(&mut self, rows: &[usize], sum: &[f64]) -> usize {
        let n = rows.len() as f64;
        self.nodes.push(Node::Leaf {
            value: sum.iter().map(|s| s / n).collect(),
            samples: rows.len(),
        });
        self.nodes.len() - 1
    }

    fn best_for_feature(&self, rows: &mut [usize], f: usize, total: &[f64], total_sq: &[f64]) -> Option<BestSplit> {
        let x = self.x;
        rows.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
        let m = self.y.ncols();
        let n = rows.len();
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let mut ls = vec![0.0; m];
        let mut lq = vec![0.0; m];
        let mut rs = vec![0.0; m];
        let mut rq = vec![0.0; m];
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            let r = rows[i];
            for j in 0..m {
                let v = self.y[(r, j)];
                ls[j] += v;
                lq[j] += v * v;
            }
            let n_left = i + 1;
            if n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let (a, b) = (x[(r, f)], x[(rows[i + 1], f)]);
            if a == b {
                continue;
            }
            for j in 0..m {
                rs[j] = total[j] - ls[j];
                rq[j] = total_sq[j] - lq[j];
            }
            let score = weighted_impurity(self.task, n_left as f64, &ls, &lq)
                + weighted_impurity(self.task, (n - n_left) as f64, &rs, &rq);
            if best.as_ref().is_none_or(|bs| score < bs.score) {
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit {
                    score,
                    feature: f,
                    threshold,
                });
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (sum, sum_sq) = self.sums(&rows);
        let impurity = weighted_impurity(self.task, rows.len() as f64, &sum, &sum_sq);
        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < self.cfg.min_samples_split.max(2) || impurity <= 1e-12 * rows.len() as f64 {
            return self.leaf(&rows, &sum);
        }

        let d = self.x.ncols();
        let mut order: Vec<usize> = (0..d).collect();
        if self.k_features < d {
            order.shuffle(&mut self.rng);
        }
        let mut scratch = rows.clone();
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        for &f in &order {
            if visited >= self.k_features {
                break;
            }
            let first = self.x[(rows[0], f)];
            if rows.iter().all(|&r| self.x[(r, f)] == first) {
                continue;
            }
            visited += 1;
            if let Some(s) = self.best_for_feature(&mut scratch, f, &sum, &sum_sq) {
                if best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else {
            return self.leaf(&rows, &sum);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[(r, split.feature)] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: Vec::new(),
            samples: 0,
        });
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }
}

/// Grows a tree on the given rows (duplicates allowed, as in bootstraps).
pub fn fit_tree_on(
    x: &DMatrix<f64>,
    target: Target<'_>,
    rows: Vec<usize>,
    cfg: &TreeConfig,
    seed: u64,
) -> Result<TreeModel> {
    if rows.is_empty() || x.ncols() == 0 {
        return Err(Error::Model("tree needs at least one row and one feature".into()));
    }
    if target.len() != x.nrows() {
        return Err(Error::Model("feature and target row counts differ".into()));
    }
    let (task, y) = target_rows(target);
    let mut b = Builder {
        x,
        y,
        task,
        cfg: *cfg,
        k_features: cfg.max_features.resolve(x.ncols()),
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    Ok(TreeModel {
        task,
        n_features: x.ncols(),
        nodes: b.nodes,
    })
}

pub fn fit_tree(x: &DMatrix<f64>, target: Target<'_>, cfg: &TreeConfig, seed: u64) -> Result<TreeModel> {
    fit_tree_on(x, target, (0..x.nrows()).collect(), cfg, seed)
}

impl TreeModel {
    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Raw leaf values per row: regression outputs, or both class
    /// probabilities.
    pub fn predict_values(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let width = match self.task {
            TreeTask::Classification => 2,
            TreeTask::Regression => self.leaf_value(&vec![0.0; self.n_features]).len(),
        };
        let mut out = DMatrix::zeros(x.nrows(), width);
        let mut buf = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x[(i, j)];
            }
            for (j, v) in self.leaf_value(&buf).iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
