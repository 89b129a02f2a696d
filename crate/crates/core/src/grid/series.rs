use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Grid, InjectorKind};
use crate::error::{Error, Result};

/// One real/reactive profile pair, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Per-profile real and reactive power over `step_count` steps, in per-unit
/// on the grid's `base_mva`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub step_count: usize,
    pub resolution_min: u32,
    pub base_mva: f64,
    pub columns: BTreeMap<String, Profile>,
}

/// Injector powers (p.u.) for a single operating point. Indices follow
/// `grid.loads` and `grid.generators`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
}

/// Anything that yields injector snapshots by index: a time series or a set
/// of generated scenarios.
pub trait SnapshotSource: Sync {
    fn len(&self) -> usize;
    fn snapshot(&self, grid: &Grid, index: usize) -> Result<Snapshot>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TimeSeries {
    pub fn new(step_count: usize, base_mva: f64) -> Self {
        TimeSeries {
            step_count,
            resolution_min: 60,
            base_mva,
            columns: BTreeMap::new(),
        }
    }

    pub fn with_resolution(mut self, minutes: u32) -> Self {
        self.resolution_min = minutes;
        self
    }

    /// Inserts a column given in MW / MVAr.
    pub fn insert_mw(&mut self, profile_id: &str, p_mw: Vec<f64>, q_mvar: Vec<f64>) -> Result<()> {
        if p_mw.len() != self.step_count || q_mvar.len() != self.step_count {
            return Err(Error::Series(format!(
                "column `{profile_id}` must have {} rows",
                self.step_count
            )));
        }
        let base = self.base_mva;
        self.columns.insert(
            profile_id.to_string(),
            Profile {
                p: p_mw.into_iter().map(|v| v / base).collect(),
                q: q_mvar.into_iter().map(|v| v / base).collect(),
            },
        );
        Ok(())
    }

    pub fn column(&self, profile_id: &str) -> Result<&Profile> {
        self.columns
            .get(profile_id)
            .ok_or_else(|| Error::Series(format!("missing column for profile `{profile_id}`")))
    }

    pub fn check_covers(&self, grid: &Grid) -> Result<()> {
        for pid in grid.profile_ids() {
            self.column(pid)?;
        }
        Ok(())
    }
}

impl SnapshotSource for TimeSeries {
    fn len(&self) -> usize {
        self.step_count
    }

    fn snapshot(&self, grid: &Grid, step: usize) -> Result<Snapshot> {
        if step >= self.step_count {
            return Err(Error::StepOutOfRange {
                step,
                len: self.step_count,
            });
        }
        let mut snap = Snapshot {
            load_p: Vec::with_capacity(grid.loads.len()),
            load_q: Vec::with_capacity(grid.loads.len()),
            gen_p: Vec::with_capacity(grid.generators.len()),
            gen_q: Vec::with_capacity(grid.generators.len()),
        };
        for load in &grid.loads {
            let col = self.column(&load.profile_id)?;
            snap.load_p.push(col.p[step]);
            snap.load_q.push(col.q[step]);
        }
        for gen in &grid.generators {
            let col = self.column(&gen.profile_id)?;
            snap.gen_p.push(col.p[step]);
            // conventional units sit on voltage-controlled buses; their Q is solved for
            snap.gen_q.push(match gen.kind {
                InjectorKind::Res => col.q[step],
                _ => 0.0,
            });
        }
        Ok(snap)
    }
}

/// Net per-bus injection (generation positive) at one step of a time series.
pub fn aggregate_bus_injections(grid: &Grid, ts: &TimeSeries, step: usize) -> Result<Vec<Complex64>> {
    Ok(aggregate_snapshot(grid, &ts.snapshot(grid, step)?))
}

pub fn aggregate_snapshot(grid: &Grid, snap: &Snapshot) -> Vec<Complex64> {
    let mut s = vec![Complex64::default(); grid.n_bus()];
    for (k, load) in grid.loads.iter().enumerate() {
        let i = grid.bus_index(&load.bus).expect("validated grid");
        s[i] -= Complex64::new(snap.load_p[k], snap.load_q[k]);
    }
    for (k, gen) in grid.generators.iter().enumerate() {
        let i = grid.bus_index(&gen.bus).expect("validated grid");
        s[i] += Complex64::new(snap.gen_p[k], snap.gen_q[k]);
    }
    s
}

/// Reads a `step,<id>_p,<id>_q,...` CSV in MW / MVAr. Every profile referenced
/// by the grid needs a `_p` column; a missing `_q` column means zero.
pub fn load_time_series(path: impl AsRef<Path>, grid: &Grid) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_time_series(file, grid)
}

pub(crate) fn read_time_series(reader: impl std::io::Read, grid: &Grid) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Series(e.to_string()))?.clone();
    if headers.get(0) != Some("step") {
        return Err(Error::Series("first header column must be `step`".into()));
    }

    let mut wanted: Vec<(usize, String, bool)> = Vec::new();
    for pid in grid.profile_ids() {
        let p_col = headers
            .iter()
            .position(|h| h == format!("{pid}_p"))
            .ok_or_else(|| Error::Series(format!("missing column for profile `{pid}`")))?;
        wanted.push((p_col, pid.to_string(), true));
        if let Some(q_col) = headers.iter().position(|h| h == format!("{pid}_q")) {
            wanted.push((q_col, pid.to_string(), false));
        }
    }

    let mut p: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut q: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut rows = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Series(format!("row {}: {e}", line + 2)))?;
        if record.len() != headers.len() {
            return Err(Error::Series(format!(
                "row {} has {} cells, expected {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        for (col, pid, is_p) in &wanted {
            let cell = &record[*col];
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Series(format!(
                    "row {}, column `{}`: non-numeric cell `{cell}`",
                    line + 2,
                    &headers[*col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Series(format!("row {}: non-finite value", line + 2)));
            }
            let target = if *is_p { &mut p } else { &mut q };
            target.entry(pid.clone()).or_default().push(v);
        }
        rows += 1;
    }

    let mut ts = TimeSeries::new(rows, grid.base_mva);
    for (pid, p_mw) in p {
        let q_mvar = q.remove(&pid).unwrap_or_else(|| vec![0.0; rows]);
        ts.insert_mw(&pid, p_mw, q_mvar)?;
    }
    if rows == 0 {
        for pid in grid.profile_ids() {
            ts.insert_mw(pid, vec![], vec![])?;
        }
    }
    Ok(ts)
}

/// Writes the CSV format read by [`load_time_series`].
pub fn write_time_series(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_time_series_to(ts, file).map_err(|e| Error::Series(e.to_string()))
}

pub(crate) fn write_time_series_to(ts: &TimeSeries, writer: impl std::io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["step".to_string()];
    for pid in ts.columns.keys() {
        header.push(format!("{pid}_p"));
        header.push(format!("{pid}_q"));
    }
    w.write_record(&header)?;
    let base = ts.base_mva;
    for t in 0..ts.step_count {
        let mut row = vec![t.to_string()];
        for col in ts.columns.values() {
            row.push((col.p[t] * base).to_string());
            row.push((col.q[t] * base).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
