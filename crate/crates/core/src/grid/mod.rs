//! Static network description, time-series profiles and the bus admittance
//! matrix.
//!
//! Impedances in the grid file are already per-unit on (`base_mva`,
//! `base_kv`); powers are MW/MVAr and rated currents kA. Time series are
//! converted to per-unit when loaded.

mod admittance;
mod series;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use series::{
    aggregate_bus_injections, aggregate_snapshot, load_time_series, write_time_series, Snapshot, SnapshotSource,
    TimeSeries,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_setpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_pu: f64,
    /// Rated current in kA.
    pub i_rated: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectorKind {
    Load,
    Res,
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injector {
    pub id: String,
    pub bus: String,
    pub kind: InjectorKind,
    /// Real power rating in MW. Required for generators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    pub profile_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingLimits {
    /// Max line loading in percent of the rated current.
    pub i_limit_pct: f64,
    #[serde(default = "default_vm_min")]
    pub vm_min: f64,
    #[serde(default = "default_vm_max")]
    pub vm_max: f64,
}

fn default_vm_min() -> f64 {
    0.9
}

fn default_vm_max() -> f64 {
    1.1
}

impl Default for OperatingLimits {
    fn default() -> Self {
        OperatingLimits {
            i_limit_pct: 100.0,
            vm_min: default_vm_min(),
            vm_max: default_vm_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub loads: Vec<Injector>,
    #[serde(default)]
    pub generators: Vec<Injector>,
    pub limits: OperatingLimits,
}

/// Reads and validates a grid file.
pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Grid::from_json(&text)
}

impl Grid {
    pub fn from_json(text: &str) -> Result<Grid> {
        let grid: Grid = serde_json::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Stable content hash, used to tie result stores to the grid they came from.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("grid serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_line(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated grid has a slack bus")
    }

    pub fn buses_of_kind(&self, kind: BusKind) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].kind == kind).collect()
    }

    /// Base current in kA for the grid's (base_mva, base_kv).
    pub fn base_current_ka(&self) -> f64 {
        self.base_mva / (3f64.sqrt() * self.base_kv)
    }

    pub fn injectors(&self) -> impl Iterator<Item = &Injector> {
        self.loads.iter().chain(self.generators.iter())
    }

    /// Endpoint bus indices for every line.
    pub fn line_endpoints(&self) -> Vec<(usize, usize)> {
        let index: HashMap<&str, usize> = self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
        self.lines
            .iter()
            .map(|l| (index[l.from_bus.as_str()], index[l.to_bus.as_str()]))
            .collect()
    }

    /// Connectivity of the bus graph with the given line removed.
    pub fn is_connected_without(&self, outage: Option<usize>) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return false;
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, (f, t)) in self.line_endpoints().into_iter().enumerate() {
            if Some(k) == outage {
                continue;
            }
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut visited = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    visited += 1;
                    queue.push_back(v);
                }
            }
        }
        visited == n
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::Validation(msg));

        if !(self.base_mva > 0.0) || !(self.base_kv > 0.0) {
            return invalid("base_mva and base_kv must be positive".into());
        }
        if self.buses.is_empty() {
            return invalid("grid has no buses".into());
        }

        let lim = &self.limits;
        if !(lim.i_limit_pct > 0.0 && lim.i_limit_pct <= 200.0) {
            return invalid(format!("i_limit_pct {} outside (0, 200]", lim.i_limit_pct));
        }
        if !(lim.vm_min < lim.vm_max) {
            return invalid("limits: vm_min must be below vm_max".into());
        }

        let mut bus_ids = HashSet::new();
        for bus in &self.buses {
            if !bus_ids.insert(bus.id.as_str()) {
                return invalid(format!("duplicate bus id `{}`", bus.id));
            }
            let (lo, hi) = (lim.vm_min, lim.vm_max);
            match (bus.kind, bus.vm_setpoint) {
                (BusKind::Pq, _) => {}
                (_, None) => {
                    return invalid(format!("bus `{}` needs a vm_setpoint", bus.id));
                }
                (_, Some(v)) if !(v >= lo && v <= hi) => {
                    return invalid(format!("bus `{}`: vm_setpoint {v} outside [{lo}, {hi}]", bus.id));
                }
                _ => {}
            }
        }
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count != 1 {
            return invalid(format!("expected exactly one slack bus, found {slack_count}"));
        }

        let mut line_ids = HashSet::new();
        for line in &self.lines {
            if !line_ids.insert(line.id.as_str()) {
                return invalid(format!("duplicate line id `{}`", line.id));
            }
            for end in [&line.from_bus, &line.to_bus] {
                if !bus_ids.contains(end.as_str()) {
                    return invalid(format!("line `{}` references unknown bus `{end}`", line.id));
                }
            }
            if line.from_bus == line.to_bus {
                return invalid(format!("line `{}` connects a bus to itself", line.id));
            }
            if line.r_pu == 0.0 && line.x_pu == 0.0 {
                return invalid(format!("line `{}` has zero impedance", line.id));
            }
            if !(line.b_pu >= 0.0) {
                return invalid(format!("line `{}` has negative shunt susceptance", line.id));
            }
            if !(line.i_rated > 0.0) {
                return invalid(format!("line `{}` needs a positive i_rated", line.id));
            }
        }

        let mut injector_ids = HashSet::new();
        for inj in self.injectors() {
            if !injector_ids.insert(inj.id.as_str()) {
                return invalid(format!("duplicate injector id `{}`", inj.id));
            }
            if !bus_ids.contains(inj.bus.as_str()) {
                return invalid(format!("injector `{}` references unknown bus `{}`", inj.id, inj.bus));
            }
            if let Some(p) = inj.p_max {
                if !(p > 0.0) {
                    return invalid(format!("injector `{}` needs p_max > 0", inj.id));
                }
            }
        }
        for inj in &self.loads {
            if inj.kind != InjectorKind::Load {
                return invalid(format!("`{}` in loads must have kind load", inj.id));
            }
        }
        for inj in &self.generators {
            if inj.kind == InjectorKind::Load {
                return invalid(format!("`{}` in generators cannot have kind load", inj.id));
            }
            if inj.p_max.is_none() {
                return invalid(format!("generator `{}` needs p_max", inj.id));
            }
        }

        if !self.is_connected_without(None) {
            return invalid("bus graph is not connected".into());
        }
        Ok(())
    }

    /// Profile ids referenced by any injector, in first-reference order.
    pub fn profile_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.injectors()
            .map(|i| i.profile_id.as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }

    /// Rated power (p.u.) of the RES injector(s) feeding each RES profile.
    pub(crate) fn res_profile_ratings(&self) -> BTreeMap<String, f64> {
        let mut ratings = BTreeMap::new();
        for g in self.generators.iter().filter(|g| g.kind == InjectorKind::Res) {
            let p = g.p_max.unwrap_or(0.0) / self.base_mva;
            let entry = ratings.entry(g.profile_id.clone()).or_insert(0.0f64);
            *entry = entry.max(p);
        }
        ratings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn bundled_three_bus_loads() {
        let grid = fixtures::demo3();
        assert_eq!(grid.n_bus(), 3);
        assert_eq!(grid.n_line(), 3);
        assert_eq!(grid.buses_of_kind(BusKind::Slack).len(), 1);
    }

    #[test]
    fn two_slack_buses_rejected() {
        let mut grid = fixtures::demo3();
        grid.buses[1].kind = BusKind::Slack;
        grid.buses[1].vm_setpoint = Some(1.0);
        let err = grid.validate().unwrap_err();
        assert!(err.to_string().contains("exactly one slack"), "{err}");
    }

    #[test]
    fn unknown_bus_is_named() {
        let mut grid = fixtures::demo3();
        grid.lines[0].to_bus = "b99".into();
        let err = Grid::from_json(&grid.to_json()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("b99"), "{err}");
    }

    #[test]
    fn disconnected_grid_rejected() {
        let mut grid = fixtures::demo3();
        grid.buses.push(Bus {
            id: "lonely".into(),
            kind: BusKind::Pq,
            vm_setpoint: None,
        });
        assert!(grid.validate().unwrap_err().to_string().contains("not connected"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut grid = fixtures::demo3();
        grid.lines[1].id = grid.lines[0].id.clone();
        assert!(grid.validate().is_err());
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(Grid::from_json("{ nope"), Err(Error::Parse(_))));
    }

    #[test]
    fn round_trip_through_file() {
        let grid = fixtures::demo9();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        grid.save(&path).unwrap();
        assert_eq!(load_grid(&path).unwrap(), grid);
    }

    #[test]
    fn limits_default_band() {
        let lim: OperatingLimits = serde_json::from_str(r#"{"i_limit_pct": 60}"#).unwrap();
        assert_eq!((lim.vm_min, lim.vm_max), (0.9, 1.1));
    }
}
