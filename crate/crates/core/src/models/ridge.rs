use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// `features × outputs`.
    pub weights: DMatrix<f64>,
    pub intercept: Vec<f64>,
    pub alpha: f64,
    /// Mean held-out squared error per candidate alpha.
    pub cv_scores: Vec<(f64, f64)>,
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

fn centered(m: &DMatrix<f64>, means: &[f64]) -> DMatrix<f64> {
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c
}

/// Ridge fit with an unpenalised intercept:
/// `(Xcᵀ Xc + alpha I) W = Xcᵀ Yc` on column-centred data.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<RidgeModel> {
    if !(alpha > 0.0) {
        return Err(Error::Model(format!("ridge alpha must be positive, got {alpha}")));
    }
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::Model("ridge needs matching, non-empty inputs".into()));
    }
    let xm = column_means(x);
    let ym = column_means(y);
    let xc = centered(x, &xm);
    let yc = centered(y, &ym);
    let xt = xc.transpose();
    let mut gram = &xt * &xc;
    for i in 0..gram.nrows() {
        gram[(i, i)] += alpha;
    }
    let rhs = &xt * &yc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Model("ridge normal equations are not positive definite".into()))?;
    let weights = chol.solve(&rhs);
    let offset = DMatrix::from_row_slice(1, xm.len(), &xm) * &weights;
    let intercept = ym.iter().zip(offset.iter()).map(|(m, o)| m - o).collect();
    Ok(RidgeModel {
        weights,
        intercept,
        alpha,
        cv_scores: Vec::new(),
    })
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * &self.weights;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.intercept[j]);
        }
        out
    }

    /// Max-abs entry of `(Xcᵀ Xc + alpha I) W - Xcᵀ Yc` for the training data.
    pub fn normal_equation_residual(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let xc = centered(x, &column_means(x));
        let yc = centered(y, &column_means(y));
        let xt = xc.transpose();
        let lhs = &xt * &xc * &self.weights + &self.weights * self.alpha;
        (lhs - xt * yc).amax()
    }
}

/// Picks alpha by k-fold cross-validation (ties resolved to the smaller
/// alpha) and refits on all rows.
pub fn fit_ridge_cv(x: &DMatrix<f64>, y: &DMatrix<f64>, alphas: &[f64], folds: usize, seed: u64) -> Result<RidgeModel> {
    let n = x.nrows();
    if alphas.is_empty() {
        return Err(Error::Model("ridge cv needs at least one alpha".into()));
    }
    if folds < 2 || folds > n {
        return Err(Error::Model(format!("cannot run {folds}-fold cv on {n} rows")));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            f[row] = pos % folds;
        }
        f
    };

    let mut scores = Vec::with_capacity(sorted.len());
    for &alpha in &sorted {
        let mut sse = 0.0;
        for k in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            let m = fit_ridge(&x.select_rows(train.iter()), &y.select_rows(train.iter()), alpha)?;
            let pred = m.predict(&x.select_rows(test.iter()));
            sse += (pred - y.select_rows(test.iter())).norm_squared();
        }
        scores.push((alpha, sse / y.len() as f64));
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 < best.1 {
            best = s;
        }
    }
    let mut model = fit_ridge(x, y, best.0)?;
    model.cv_scores = scores;
    Ok(model)
}
