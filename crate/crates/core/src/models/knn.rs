use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::error::{Error, Result};

/// Brute-force k-nearest-neighbour model on Euclidean distance. Distance
/// ties go to the lower training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: DMatrix<f64>,
    /// Regression targets, or a single 0/1 critical indicator column.
    pub y: DMatrix<f64>,
    pub classification: bool,
}

pub fn fit_knn(x: &DMatrix<f64>, target: Target<'_>, k: usize) -> Result<KnnModel> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Model(format!("k = {k} is invalid for {n} training rows")));
    }
    if target.len() != n {
        return Err(Error::Model("feature and target row counts differ".into()));
    }
    let (y, classification) = match target {
        Target::Regression(y) => (y.clone(), false),
        Target::Classification(y) => (
            DMatrix::from_iterator(n, 1, y.iter().map(|&l| if l == 1 { 1.0 } else { 0.0 })),
            true,
        ),
    };
    Ok(KnnModel {
        k,
        x: x.clone(),
        y,
        classification,
    })
}

impl KnnModel {
    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = (0..self.x.nrows())
            .map(|i| {
                let s: f64 = row.iter().enumerate().map(|(j, v)| (v - self.x[(i, j)]).powi(2)).sum();
                (s, i)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    /// Mean neighbour target per row; for classification the single column is
    /// the critical share of the neighbourhood.
    pub fn predict_values(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.y.ncols();
        let mut out = DMatrix::zeros(x.nrows(), m);
        let mut buf = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x[(i, j)];
            }
            let nn = self.neighbours(&buf);
            for j in 0..m {
                out[(i, j)] = nn.iter().map(|&r| self.y[(r, j)]).sum::<f64>() / self.k as f64;
            }
        }
        out
    }
}
