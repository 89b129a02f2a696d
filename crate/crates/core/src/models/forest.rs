use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_on, MaxFeatures, TreeConfig, TreeModel};
use super::Target;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// `None` picks sqrt(d) for classification and d/3 for regression.
    pub max_features: Option<MaxFeatures>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            bootstrap: true,
            max_features: None,
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
}

fn tree_seed(seed: u64, i: usize) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).random()
}

pub fn fit_forest(x: &DMatrix<f64>, target: Target<'_>, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if cfg.n_trees == 0 {
        return Err(Error::Model("forest needs at least one tree".into()));
    }
    let n = x.nrows();
    let max_features = cfg.max_features.unwrap_or(match target {
        Target::Classification(_) => MaxFeatures::Sqrt,
        Target::Regression(_) => MaxFeatures::Third,
    });
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        max_features,
        ..TreeConfig::default()
    };
    let trees = (0..cfg.n_trees)
        .map(|i| {
            let s = tree_seed(seed, i);
            let rows = if cfg.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                (0..n).map(|_| rng.random_range(0..n.max(1))).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on(x, target, rows, &tree_cfg, s.wrapping_add(1))
        })
        .collect::<Result<_>>()?;
    Ok(ForestModel { trees })
}

impl ForestModel {
    /// Arithmetic mean of the trees' leaf values.
    pub fn predict_values(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut acc = self.trees[0].predict_values(x);
        for t in &self.trees[1..] {
            acc += t.predict_values(x);
        }
        acc / self.trees.len() as f64
    }
}
