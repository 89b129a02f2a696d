//! Confusion counts, classification metrics with critical as the positive
//! class, regression error statistics and threshold sweeps.

mod report;

use std::ops::{Add, AddAssign};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OperatingLimits;
use crate::models::{classify_from_regression, labels_from_proba};

pub use report::{emit_report, read_curves_csv, read_table_csv, sorted_annual_curve, EmittedFiles, TableRow};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

pub fn confusion_counts(predicted: &[i8], truth: &[i8]) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(Error::Eval(format!(
            "{} predictions for {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, -1) => c.fp += 1,
            (-1, -1) => c.tn += 1,
            (-1, 1) => c.fn_ += 1,
            _ => return Err(Error::Eval(format!("invalid label pair ({p}, {t}) at index {i}"))),
        }
    }
    Ok(c)
}

/// Ratios are `None` when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Eval("no samples to score".into()));
    }
    Ok(Metrics {
        counts: c,
        recall: ratio(c.tp, c.tp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        accuracy: c.correct() as f64 / total as f64,
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
    pub p99: f64,
    pub count: usize,
}

/// Absolute error statistics per quantity: vm in p.u., loading in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionErrors {
    pub vm_pu: ErrorStats,
    pub loading_pct: ErrorStats,
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the
/// ascending sort.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

pub fn error_stats(abs_errors: &[f64]) -> ErrorStats {
    if abs_errors.is_empty() {
        return ErrorStats::default();
    }
    ErrorStats {
        mean: abs_errors.iter().sum::<f64>() / abs_errors.len() as f64,
        max: abs_errors.iter().copied().fold(0.0, f64::max),
        p99: percentile_nearest_rank(abs_errors, 99.0).unwrap_or(0.0),
        count: abs_errors.len(),
    }
}

/// Splits `|Y_hat - Y_true|` at column `n_bus` into vm and loading errors.
pub fn regression_errors(y_hat: &DMatrix<f64>, y_true: &DMatrix<f64>, n_bus: usize) -> Result<RegressionErrors> {
    if y_hat.shape() != y_true.shape() {
        return Err(Error::Eval(format!(
            "prediction shape {:?} differs from truth {:?}",
            y_hat.shape(),
            y_true.shape()
        )));
    }
    if n_bus > y_hat.ncols() {
        return Err(Error::Eval("bus count exceeds target width".into()));
    }
    let abs_cols = |range: std::ops::Range<usize>| -> Vec<f64> {
        let mut out = Vec::with_capacity(range.len() * y_hat.nrows());
        for j in range {
            for i in 0..y_hat.nrows() {
                out.push((y_hat[(i, j)] - y_true[(i, j)]).abs());
            }
        }
        out
    };
    Ok(RegressionErrors {
        vm_pu: error_stats(&abs_cols(0..n_bus)),
        loading_pct: error_stats(&abs_cols(n_bus..y_hat.ncols())),
    })
}

pub enum SweepInput<'a> {
    /// `[p_uncritical, p_critical]` rows.
    Probabilities(&'a DMatrix<f64>),
    /// Regression outputs `[vm | loading]`.
    Regression {
        y_hat: &'a DMatrix<f64>,
        n_bus: usize,
        limits: &'a OperatingLimits,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub metrics: Metrics,
}

pub fn threshold_sweep(input: &SweepInput<'_>, truth: &[i8], thresholds: &[f64]) -> Result<Vec<ThresholdPoint>> {
    if thresholds.is_empty() {
        return Err(Error::Eval("threshold sweep needs at least one threshold".into()));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Eval("thresholds must be sorted ascending".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let pred = match input {
                SweepInput::Probabilities(p) => labels_from_proba(p, t),
                SweepInput::Regression { y_hat, n_bus, limits } => classify_from_regression(y_hat, *n_bus, limits, t),
            };
            Ok(ThresholdPoint {
                threshold: t,
                metrics: compute_metrics(confusion_counts(&pred, truth)?)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_examples() {
        let c = confusion_counts(&[1, 1, -1], &[1, 1, -1]).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (2, 1, 0, 0));
        let c = confusion_counts(&[-1, -1, 1], &[1, 1, -1]).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion_counts(&[1], &[1, 1]).is_err());
        assert!(confusion_counts(&[0], &[1]).is_err());
    }

    #[test]
    fn undefined_ratios_are_absent() {
        let m = compute_metrics(ConfusionCounts {
            tn: 5,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((m.recall, m.precision, m.fnr), (None, None, None));
        assert_eq!(m.fpr, Some(0.0));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"recall\":null"));
        assert!(compute_metrics(ConfusionCounts::default()).is_err());
    }

    #[test]
    fn perfect_single_positive() {
        let m = compute_metrics(ConfusionCounts {
            tp: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((m.recall, m.precision), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn one_element_off() {
        let t = DMatrix::zeros(4, 3);
        let mut h = t.clone();
        h[(2, 2)] = 0.5;
        let e = regression_errors(&h, &t, 1).unwrap();
        assert_eq!(e.vm_pu.max, 0.0);
        assert_eq!(e.loading_pct.max, 0.5);
        assert_eq!(e.loading_pct.mean, 0.5 / 8.0);
        assert!(regression_errors(&h, &DMatrix::zeros(3, 3), 1).is_err());
    }

    #[test]
    fn sweep_rejects_unsorted_and_empty() {
        let p = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(threshold_sweep(&SweepInput::Probabilities(&p), &[1], &[]).is_err());
        assert!(threshold_sweep(&SweepInput::Probabilities(&p), &[1], &[0.5, 0.2]).is_err());
    }

    proptest! {
        #[test]
        fn metric_identities(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
            let c = ConfusionCounts { tp, fp, tn, fn_ };
            prop_assume!(c.total() > 0);
            let m = compute_metrics(c).unwrap();
            prop_assert_eq!(m.accuracy, (tp + tn) as f64 / c.total() as f64);
            if let (Some(r), Some(f)) = (m.recall, m.fnr) {
                prop_assert!((f - (1.0 - r)).abs() < 1e-12);
            }
        }

        #[test]
        fn counts_match_brute_force(pairs in prop::collection::vec((prop::bool::ANY, prop::bool::ANY), 1..50)) {
            let lab = |b: bool| if b { 1i8 } else { -1 };
            let pred: Vec<i8> = pairs.iter().map(|p| lab(p.0)).collect();
            let truth: Vec<i8> = pairs.iter().map(|p| lab(p.1)).collect();
            let c = confusion_counts(&pred, &truth).unwrap();
            let count = |a: bool, b: bool| pairs.iter().filter(|p| p.0 == a && p.1 == b).count() as u64;
            prop_assert_eq!(c, ConfusionCounts {
                tp: count(true, true),
                fp: count(true, false),
                tn: count(false, false),
                fn_: count(false, true),
            });
        }

        #[test]
        fn percentile_matches_sort_oracle(v in prop::collection::vec(0.0f64..100.0, 1..1000)) {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            // smallest value covering at least 99 % of the sample
            let oracle = (0..n).map(|i| s[i]).find(|x| {
                100 * s.iter().filter(|y| *y <= x).count() >= 99 * n
            }).unwrap();
            prop_assert_eq!(percentile_nearest_rank(&v, 99.0).unwrap(), oracle);
            let st = error_stats(&v);
            prop_assert!(st.p99 <= st.max && st.mean <= st.max);
        }

        #[test]
        fn lower_probability_threshold_grows_recall(
            probs in prop::collection::vec(0.0f64..1.0, 1..60),
            flips in prop::collection::vec(prop::bool::ANY, 60),
        ) {
            let n = probs.len();
            let p = DMatrix::from_fn(n, 2, |i, j| if j == 1 { probs[i] } else { 1.0 - probs[i] });
            let truth: Vec<i8> = (0..n).map(|i| if flips[i] { 1 } else { -1 }).collect();
            let pts = threshold_sweep(&SweepInput::Probabilities(&p), &truth, &[0.2, 0.5]).unwrap();
            let (lo, hi) = (pts[0].metrics.counts, pts[1].metrics.counts);
            prop_assert!(lo.tp >= hi.tp && lo.fp >= hi.fp);
        }
    }
}
