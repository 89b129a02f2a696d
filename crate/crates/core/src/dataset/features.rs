use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{aggregate_snapshot, BusKind, Grid, Snapshot, SnapshotSource};

/// Column layout of the input vector: reference bus voltage magnitudes and
/// angles, generator-bus voltage setpoints, net real power of every bus and
/// net reactive power of every PQ bus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub names: Vec<String>,
    pub n_ref: usize,
    pub n_gen: usize,
    pub n_bus: usize,
    pub n_pq: usize,
}

impl FeatureLayout {
    pub fn for_grid(grid: &Grid) -> Self {
        let refs = grid.buses_of_kind(BusKind::Slack);
        let gens = grid.buses_of_kind(BusKind::Pv);
        let pqs = grid.buses_of_kind(BusKind::Pq);
        let id = |i: usize| grid.buses[i].id.as_str();
        let mut names = Vec::new();
        names.extend(refs.iter().map(|&i| format!("vm_ref:{}", id(i))));
        names.extend(refs.iter().map(|&i| format!("va_ref:{}", id(i))));
        names.extend(gens.iter().map(|&i| format!("vm_gen:{}", id(i))));
        names.extend((0..grid.n_bus()).map(|i| format!("p:{}", id(i))));
        names.extend(pqs.iter().map(|&i| format!("q:{}", id(i))));
        FeatureLayout {
            names,
            n_ref: refs.len(),
            n_gen: gens.len(),
            n_bus: grid.n_bus(),
            n_pq: pqs.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn matches(&self, grid: &Grid) -> bool {
        self.n_bus == grid.n_bus()
            && self.n_ref == 1
            && self.n_gen == grid.buses_of_kind(BusKind::Pv).len()
            && self.n_pq == grid.buses_of_kind(BusKind::Pq).len()
            && self.len() == 2 * self.n_ref + self.n_gen + self.n_bus + self.n_pq
    }
}

/// Input vector for one operating point.
pub fn features_from_snapshot(grid: &Grid, layout: &FeatureLayout, snap: &Snapshot) -> Result<Vec<f64>> {
    if !layout.matches(grid) {
        return Err(Error::Dataset("feature layout does not match the grid".into()));
    }
    let s = aggregate_snapshot(grid, snap);
    let mut x = Vec::with_capacity(layout.len());
    let refs = grid.buses_of_kind(BusKind::Slack);
    x.extend(refs.iter().map(|&i| grid.buses[i].vm_setpoint.unwrap_or(1.0)));
    // reference angle is the zero of the angle frame
    x.extend(refs.iter().map(|_| 0.0));
    for i in grid.buses_of_kind(BusKind::Pv) {
        x.push(grid.buses[i].vm_setpoint.unwrap_or(1.0));
    }
    x.extend(s.iter().map(|c| c.re));
    for i in grid.buses_of_kind(BusKind::Pq) {
        x.push(s[i].im);
    }
    Ok(x)
}

pub fn extract_features<S: SnapshotSource>(
    grid: &Grid,
    layout: &FeatureLayout,
    source: &S,
    step: usize,
) -> Result<Vec<f64>> {
    let snap = source.snapshot(grid, step)?;
    features_from_snapshot(grid, layout, &snap)
}
