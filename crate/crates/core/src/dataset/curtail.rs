use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, TimeSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct Curtailment {
    pub series: TimeSeries,
    /// Cap as a fraction of each RES unit's rating.
    pub cap: f64,
    pub summary: CurtailmentSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentSummary {
    pub cap: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub energy_ratio: f64,
}

const ENERGY_RTOL: f64 = 1e-4;

fn capped_energy(cols: &[(&[f64], f64)], cap: f64) -> f64 {
    cols.iter()
        .map(|(p, rating)| p.iter().map(|&v| v.min(cap * rating)).sum::<f64>())
        .sum()
}

/// Peak-shaves every RES profile with one common cap `c` (fraction of
/// rating) so that the annual RES energy drops by `energy_fraction`.
/// Non-RES columns are left untouched.
pub fn apply_curtailment(grid: &Grid, ts: &TimeSeries, energy_fraction: f64) -> Result<Curtailment> {
    if !(energy_fraction > 0.0 && energy_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "curtailment fraction {energy_fraction} must lie strictly between 0 and 1"
        )));
    }
    let ratings = grid.res_profile_ratings();
    if ratings.is_empty() {
        return Err(Error::InvalidArgument("grid has no RES units to curtail".into()));
    }
    let mut cols = Vec::with_capacity(ratings.len());
    for (pid, &rating) in &ratings {
        cols.push((ts.column(pid)?.p.as_slice(), rating));
    }
    let before = capped_energy(&cols, f64::INFINITY);
    if !(before > 0.0) {
        return Err(Error::InvalidArgument("RES profiles carry no energy".into()));
    }
    let target = (1.0 - energy_fraction) * before;

    let mut lo = 0.0;
    let mut hi = cols
        .iter()
        .flat_map(|(p, r)| p.iter().map(move |v| v / r))
        .fold(0.0f64, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if capped_energy(&cols, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let cap = 0.5 * (lo + hi);
    let after = capped_energy(&cols, cap);
    if ((after - target) / target).abs() > ENERGY_RTOL {
        return Err(Error::InvalidArgument(format!(
            "curtailment of {energy_fraction} cannot be met by a common cap"
        )));
    }

    let mut series = ts.clone();
    for (pid, &rating) in &ratings {
        let col = series.columns.get_mut(pid).expect("checked above");
        for v in col.p.iter_mut() {
            *v = v.min(cap * rating);
        }
    }
    Ok(Curtailment {
        series,
        cap,
        summary: CurtailmentSummary {
            cap,
            energy_before: before,
            energy_after: after,
            energy_ratio: after / before,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::InjectorKind;

    #[test]
    fn three_percent_energy_ratio() {
        let grid = fixtures::demo9();
        let ts = fixtures::mini_year(&grid, 2000, 7);
        let c = apply_curtailment(&grid, &ts, 0.03).unwrap();
        assert!((c.summary.energy_ratio - 0.97).abs() < 1e-3);
        for (pid, col) in &c.series.columns {
            let orig = &ts.columns[pid];
            assert!(col.p.iter().zip(&orig.p).all(|(a, b)| a <= b));
        }
        for g in grid.generators.iter().filter(|g| g.kind != InjectorKind::Res) {
            assert_eq!(c.series.columns[&g.profile_id], ts.columns[&g.profile_id]);
        }
    }

    #[test]
    fn flat_profile_cap() {
        let grid = fixtures::demo3();
        let mut ts = fixtures::mini_year(&grid, 100, 1);
        let wind = grid.generators.iter().find(|g| g.kind == InjectorKind::Res).unwrap();
        let rating = wind.p_max.unwrap();
        ts.insert_mw(&wind.profile_id, vec![rating; 100], vec![0.0; 100])
            .unwrap();
        let c = apply_curtailment(&grid, &ts, 0.03).unwrap();
        // bisection oracle: E(c) = T * c * rating, so c = 1 - fraction
        assert!((c.cap - 0.97).abs() < 1e-9);
        let col = &c.series.columns[&wind.profile_id];
        assert!(col.p.iter().all(|&p| (p - 0.97 * rating / grid.base_mva).abs() < 1e-9));
    }

    #[test]
    fn small_fraction_approaches_identity() {
        let grid = fixtures::demo9();
        let ts = fixtures::mini_year(&grid, 500, 2);
        let c = apply_curtailment(&grid, &ts, 1e-9).unwrap();
        for (pid, col) in &c.series.columns {
            let orig = &ts.columns[pid];
            let max_diff = col
                .p
                .iter()
                .zip(&orig.p)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_diff < 1e-6, "{pid}");
        }
    }

    #[test]
    fn larger_fraction_lowers_the_cap() {
        let grid = fixtures::demo9();
        let ts = fixtures::mini_year(&grid, 500, 2);
        let caps: Vec<f64> = [0.01, 0.03, 0.1, 0.3]
            .iter()
            .map(|&f| apply_curtailment(&grid, &ts, f).unwrap().cap)
            .collect();
        assert!(caps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn infeasible_fraction() {
        let grid = fixtures::demo9();
        let ts = fixtures::mini_year(&grid, 10, 2);
        assert!(apply_curtailment(&grid, &ts, 0.0).is_err());
        assert!(apply_curtailment(&grid, &ts, 1.0).is_err());
    }
}
