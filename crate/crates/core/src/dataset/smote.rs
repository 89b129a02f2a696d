//! Synthetic minority oversampling by interpolation between minority-class
//! neighbours.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

/// Synthetic rows plus their provenance `(base, neighbour, gap)`, both
/// indices into the minority matrix: `x = x[base] + gap * (x[nb] - x[base])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    pub synthetic: DMatrix<f64>,
    pub parents: Vec<(usize, usize, f64)>,
}

fn sq_dist(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    x.row(a).iter().zip(x.row(b).iter()).map(|(p, q)| (p - q).powi(2)).sum()
}

/// k nearest minority neighbours of each minority row (self excluded, ties
/// by lower index).
fn neighbours(x: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(x, i, j), j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Generates enough synthetic minority rows to reach class parity with the
/// majority. Base rows are visited round-robin; the neighbour and the gap
/// `u ~ U(0, 1)` are drawn from the seeded stream.
pub fn smote_oversample(
    x_minority: &DMatrix<f64>,
    x_majority: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<SmoteOutput> {
    let n_min = x_minority.nrows();
    let n_maj = x_majority.nrows();
    if k == 0 {
        return Err(Error::Dataset("SMOTE needs k >= 1".into()));
    }
    if n_maj > 0 && x_majority.ncols() != x_minority.ncols() {
        return Err(Error::Dataset("class matrices differ in width".into()));
    }
    let needed = n_maj.saturating_sub(n_min);
    if needed == 0 {
        return Ok(SmoteOutput {
            synthetic: DMatrix::zeros(0, x_minority.ncols()),
            parents: Vec::new(),
        });
    }
    if n_min < 2 {
        return Err(Error::Dataset(format!(
            "SMOTE needs at least 2 minority samples, got {n_min}"
        )));
    }
    let nn = neighbours(x_minority, k.min(n_min - 1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x_minority.ncols();
    let mut synthetic = DMatrix::zeros(needed, d);
    let mut parents = Vec::with_capacity(needed);
    for s in 0..needed {
        let base = s % n_min;
        let nb = nn[base][rng.random_range(0..nn[base].len())];
        let gap: f64 = rng.random();
        for j in 0..d {
            let a = x_minority[(base, j)];
            synthetic[(s, j)] = a + gap * (x_minority[(nb, j)] - a);
        }
        parents.push((base, nb, gap));
    }
    Ok(SmoteOutput { synthetic, parents })
}

/// Distance from `p` to the closest segment between two minority rows.
pub fn nearest_segment_distance(x_minority: &DMatrix<f64>, p: &[f64]) -> f64 {
    let n = x_minority.nrows();
    let mut best = f64::INFINITY;
    for a in 0..n {
        for b in a..n {
            let ab: Vec<f64> = (0..p.len()).map(|j| x_minority[(b, j)] - x_minority[(a, j)]).collect();
            let ap: Vec<f64> = (0..p.len()).map(|j| p[j] - x_minority[(a, j)]).collect();
            let len2: f64 = ab.iter().map(|v| v * v).sum();
            let t = if len2 == 0.0 {
                0.0
            } else {
                (ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
            };
            let d2: f64 = ap.iter().zip(&ab).map(|(v, u)| (v - t * u).powi(2)).sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}

/// Balances a labelled matrix (labels ±1) by oversampling the smaller class.
/// Synthetic rows are appended after the originals.
pub fn oversample_labelled(
    x: &DMatrix<f64>,
    y: &[i8],
    k: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<i8>, SmoteOutput)> {
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 1).collect();
    let (minority, majority, label) = if pos.len() <= neg.len() {
        (pos, neg, 1i8)
    } else {
        (neg, pos, -1i8)
    };
    let x_min = x.select_rows(minority.iter());
    let x_maj = x.select_rows(majority.iter());
    let out = smote_oversample(&x_min, &x_maj, k, seed)?;
    let added = out.synthetic.nrows();
    let mut aug = DMatrix::zeros(x.nrows() + added, x.ncols());
    aug.rows_mut(0, x.nrows()).copy_from(x);
    aug.rows_mut(x.nrows(), added).copy_from(&out.synthetic);
    let mut labels = y.to_vec();
    labels.extend(std::iter::repeat_n(label, added));
    Ok((aug, labels, out))
}
