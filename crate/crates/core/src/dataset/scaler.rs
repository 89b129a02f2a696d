use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column z-score. Columns with zero variance map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; 0 marks a constant column.
    pub std: Vec<f64>,
}

pub fn fit_scaler(x_train: &DMatrix<f64>) -> Result<Scaler> {
    let n = x_train.nrows();
    if n < 2 {
        return Err(Error::Dataset(format!(
            "scaler needs at least 2 training rows, got {n}"
        )));
    }
    let mut mean = Vec::with_capacity(x_train.ncols());
    let mut std = Vec::with_capacity(x_train.ncols());
    for col in x_train.column_iter() {
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        mean.push(m);
        std.push(if s <= 1e-12 * m.abs().max(1.0) { 0.0 } else { s });
    }
    Ok(Scaler { mean, std })
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Dataset(format!(
                "scaler expects {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            for v in col.iter_mut() {
                *v = if s == 0.0 { 0.0 } else { (*v - m) / s };
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            for v in col.iter_mut() {
                *v = *v * s + m;
            }
        }
        out
    }
}

pub fn apply_scaler(scaler: &Scaler, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    scaler.transform(x)
}
