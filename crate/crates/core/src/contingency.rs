//! N-1 case enumeration and the (cases × steps) power flow sweep.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{aggregate_snapshot, Grid, OperatingLimits, SnapshotSource};
use crate::powerflow::{state_label, Network, PfOptions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyCase {
    pub id: usize,
    /// Outaged line id; `None` for the base case.
    pub outage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEnumeration {
    pub cases: Vec<ContingencyCase>,
    /// Lines whose outage would island part of the grid.
    pub islanding: Vec<String>,
}

/// Base case plus one case per line whose removal keeps the grid connected.
pub fn enumerate_cases(grid: &Grid) -> CaseEnumeration {
    let mut cases = vec![ContingencyCase { id: 0, outage: None }];
    let mut islanding = Vec::new();
    for (k, line) in grid.lines.iter().enumerate() {
        if grid.is_connected_without(Some(k)) {
            cases.push(ContingencyCase {
                id: cases.len(),
                outage: Some(line.id.clone()),
            });
        } else {
            islanding.push(line.id.clone());
        }
    }
    CaseEnumeration { cases, islanding }
}

pub fn base_case() -> Vec<ContingencyCase> {
    vec![ContingencyCase { id: 0, outage: None }]
}

/// Which steps of a source to simulate.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSelection {
    All,
    /// A seeded random subset of this fraction (returned sorted).
    Fraction(f64),
    List(Vec<usize>),
}

impl StepSelection {
    /// Parses `all`, a fraction in (0, 1), or a comma list of step indices.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "all" {
            return Ok(StepSelection::All);
        }
        if !text.contains(',') && text.contains('.') {
            let f: f64 = text
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad step fraction `{text}`")))?;
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("step fraction {f} outside (0, 1]")));
            }
            return Ok(StepSelection::Fraction(f));
        }
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad step index `{s}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(StepSelection::List)
    }

    pub fn resolve(&self, step_count: usize, seed: u64) -> Result<Vec<usize>> {
        match self {
            StepSelection::All => Ok((0..step_count).collect()),
            StepSelection::Fraction(f) => {
                let mut ids: Vec<usize> = (0..step_count).collect();
                ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let mut take: Vec<usize> = ids.into_iter().take((f * step_count as f64).floor() as usize).collect();
                take.sort_unstable();
                Ok(take)
            }
            StepSelection::List(list) => {
                if let Some(&bad) = list.iter().find(|&&s| s >= step_count) {
                    return Err(Error::StepOutOfRange {
                        step: bad,
                        len: step_count,
                    });
                }
                Ok(list.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub case: usize,
    pub step: usize,
    pub converged: bool,
    /// Empty when not converged.
    pub vm: Vec<f64>,
    /// Empty when not converged.
    pub loading: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub version: u32,
    pub grid_hash: String,
    pub cases: Vec<ContingencyCase>,
    pub steps: Vec<usize>,
    pub limits: OperatingLimits,
    /// Number of outage cases, i.e. `cases.len() - 1` when the base case is present.
    pub outage_cases: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTiming {
    pub total_s: f64,
    pub per_solve_mean_s: f64,
    pub solves: usize,
}

/// Solved records in case-major order; not serialized with the timing.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResultStore {
    pub header: StoreHeader,
    pub records: Vec<SweepRecord>,
    pub timing: SweepTiming,
}

pub const STORE_FORMAT: &str = "gridml-store";

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub pf: PfOptions,
    /// 1 forces a serial sweep on the calling thread.
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            pf: PfOptions::default(),
            workers: 1,
        }
    }
}

fn solve_case<S: SnapshotSource>(
    grid: &Grid,
    source: &S,
    case: &ContingencyCase,
    steps: &[usize],
    pf: &PfOptions,
) -> Result<Vec<SweepRecord>> {
    let network = Network::new(grid, case.outage.as_deref())?;
    let limits = grid.limits;
    steps
        .iter()
        .map(|&step| {
            let snap = source.snapshot(grid, step)?;
            let injections = aggregate_snapshot(grid, &snap);
            let sol = network.solve(&injections, pf)?;
            Ok(if sol.converged {
                let label = state_label(&sol.vm, &sol.line_loading, &limits);
                SweepRecord {
                    case: case.id,
                    step,
                    converged: true,
                    vm: sol.vm,
                    loading: sol.line_loading,
                    label: Some(label),
                }
            } else {
                SweepRecord {
                    case: case.id,
                    step,
                    converged: false,
                    vm: Vec::new(),
                    loading: Vec::new(),
                    label: None,
                }
            })
        })
        .collect()
}

/// Solves every (case, step) pair. Non-convergence is recorded per record;
/// structural problems (islanded topology, bad step) abort the sweep.
pub fn run_sweep<S: SnapshotSource>(
    grid: &Grid,
    source: &S,
    cases: &[ContingencyCase],
    steps: &[usize],
    opts: &SweepOptions,
) -> Result<SweepResultStore> {
    if let Some(&bad) = steps.iter().find(|&&s| s >= source.len()) {
        return Err(Error::StepOutOfRange {
            step: bad,
            len: source.len(),
        });
    }
    let start = Instant::now();
    let per_case: Vec<Vec<SweepRecord>> = if opts.workers <= 1 {
        cases
            .iter()
            .map(|c| solve_case(grid, source, c, steps, &opts.pf))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| {
            cases
                .par_iter()
                .map(|c| solve_case(grid, source, c, steps, &opts.pf))
                .collect::<Result<_>>()
        })?
    };
    let total_s = start.elapsed().as_secs_f64();
    let solves = cases.len() * steps.len();
    Ok(SweepResultStore {
        header: StoreHeader {
            format: STORE_FORMAT.into(),
            version: 1,
            grid_hash: grid.content_hash(),
            cases: cases.to_vec(),
            steps: steps.to_vec(),
            limits: grid.limits,
            outage_cases: cases.iter().filter(|c| c.outage.is_some()).count(),
        },
        records: per_case.into_iter().flatten().collect(),
        timing: SweepTiming {
            total_s,
            per_solve_mean_s: if solves > 0 { total_s / solves as f64 } else { 0.0 },
            solves,
        },
    })
}

/// Per-case labels over the converged steps of a store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabels {
    pub case: usize,
    pub steps: Vec<usize>,
    pub labels: Vec<i8>,
    pub non_converged: Vec<usize>,
}

pub fn label_matrix(store: &SweepResultStore) -> Vec<CaseLabels> {
    store
        .header
        .cases
        .iter()
        .map(|c| {
            let mut out = CaseLabels {
                case: c.id,
                steps: Vec::new(),
                labels: Vec::new(),
                non_converged: Vec::new(),
            };
            for r in store.case_records(c.id) {
                match r.label {
                    Some(l) if r.converged => {
                        out.steps.push(r.step);
                        out.labels.push(l);
                    }
                    _ => out.non_converged.push(r.step),
                }
            }
            out
        })
        .collect()
}

impl SweepResultStore {
    pub fn case_position(&self, case: usize) -> Option<usize> {
        self.header.cases.iter().position(|c| c.id == case)
    }

    pub fn case_records(&self, case: usize) -> &[SweepRecord] {
        let n = self.header.steps.len();
        match self.case_position(case) {
            Some(p) => &self.records[p * n..(p + 1) * n],
            None => &[],
        }
    }

    /// Converged records of one case keyed by step.
    pub fn case_index(&self, case: usize) -> HashMap<usize, &SweepRecord> {
        self.case_records(case)
            .iter()
            .filter(|r| r.converged)
            .map(|r| (r.step, r))
            .collect()
    }

    pub fn non_converged_count(&self) -> usize {
        self.records.iter().filter(|r| !r.converged).count()
    }

    pub fn critical_count(&self) -> usize {
        self.records.iter().filter(|r| r.label == Some(1)).count()
    }

    /// Recomputes every label from the stored state vectors.
    pub fn relabel(&self, limits: &OperatingLimits) -> Vec<Option<i8>> {
        self.records
            .iter()
            .map(|r| r.converged.then(|| state_label(&r.vm, &r.loading, limits)))
            .collect()
    }

    /// Concatenates two sweeps over the same cases, steps of `other` after ours.
    pub fn merge(self, other: SweepResultStore) -> Result<SweepResultStore> {
        if self.header.cases != other.header.cases || self.header.grid_hash != other.header.grid_hash {
            return Err(Error::InvalidArgument("stores cover different grids or cases".into()));
        }
        let (na, nb) = (self.header.steps.len(), other.header.steps.len());
        let mut records = Vec::with_capacity(self.records.len() + other.records.len());
        for p in 0..self.header.cases.len() {
            records.extend_from_slice(&self.records[p * na..(p + 1) * na]);
            records.extend_from_slice(&other.records[p * nb..(p + 1) * nb]);
        }
        let mut header = self.header;
        header.steps.extend_from_slice(&other.header.steps);
        let solves = self.timing.solves + other.timing.solves;
        let total_s = self.timing.total_s + other.timing.total_s;
        Ok(SweepResultStore {
            header,
            records,
            timing: SweepTiming {
                total_s,
                per_solve_mean_s: if solves > 0 { total_s / solves as f64 } else { 0.0 },
                solves,
            },
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Parse(e.to_string());
        writeln!(w, "{}", serde_json::to_string(&self.header)?).map_err(io)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<SweepResultStore> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse("empty store file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let header: StoreHeader = serde_json::from_str(&header_line)?;
        if header.format != STORE_FORMAT {
            return Err(Error::Parse(format!("not a store file (format `{}`)", header.format)));
        }
        let mut records = Vec::with_capacity(header.cases.len() * header.steps.len());
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<SweepRecord>(&line)?);
        }
        if records.len() != header.cases.len() * header.steps.len() {
            return Err(Error::Parse(format!(
                "store has {} records, header implies {}",
                records.len(),
                header.cases.len() * header.steps.len()
            )));
        }
        Ok(SweepResultStore {
            header,
            records,
            timing: SweepTiming::default(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SweepResultStore> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::TimeSeries;

    fn radial3() -> Grid {
        let mut g = fixtures::demo3();
        g.lines.truncate(2);
        g
    }

    #[test]
    fn triangle_has_four_cases() {
        let e = enumerate_cases(&fixtures::demo3());
        assert_eq!(e.cases.len(), 4);
        assert!(e.islanding.is_empty());
        assert_eq!(e.cases[0].outage, None);
    }

    #[test]
    fn radial_has_only_base_case() {
        let e = enumerate_cases(&radial3());
        assert_eq!(e.cases.len(), 1);
        assert_eq!(e.islanding.len(), 2);
    }

    #[test]
    fn sweep_counts_records() {
        let grid = fixtures::demo3();
        let ts = fixtures::mini_year(&grid, 100, 1);
        let cases = enumerate_cases(&grid).cases;
        let steps: Vec<usize> = (0..100).collect();
        let store = run_sweep(&grid, &ts, &cases, &steps, &SweepOptions::default()).unwrap();
        assert_eq!(store.records.len(), 400);
        assert_eq!(store.timing.solves, 400);
    }

    #[test]
    fn equal_injections_give_identical_records() {
        let grid = fixtures::demo3();
        let mut ts = fixtures::mini_year(&grid, 10, 1);
        for col in ts.columns.values_mut() {
            col.p[7] = col.p[2];
            col.q[7] = col.q[2];
        }
        let cases = enumerate_cases(&grid).cases;
        let store = run_sweep(&grid, &ts, &cases, &[2, 7], &SweepOptions::default()).unwrap();
        for c in &cases {
            let recs = store.case_records(c.id);
            assert_eq!(recs[0].vm, recs[1].vm);
            assert_eq!(recs[0].loading, recs[1].loading);
        }
    }

    #[test]
    fn zero_load_year_is_uncritical() {
        let grid = fixtures::demo9();
        let mut ts = TimeSeries::new(5, grid.base_mva);
        for pid in grid.profile_ids() {
            ts.insert_mw(pid, vec![0.0; 5], vec![0.0; 5]).unwrap();
        }
        let cases = enumerate_cases(&grid).cases;
        let store = run_sweep(&grid, &ts, &cases, &[0, 1, 2, 3, 4], &SweepOptions::default()).unwrap();
        assert!(store.records.iter().all(|r| r.label == Some(-1)));
    }

    #[test]
    fn islanding_case_aborts_sweep() {
        let grid = radial3();
        let ts = fixtures::mini_year(&grid, 3, 1);
        let bad = vec![ContingencyCase {
            id: 1,
            outage: Some(grid.lines[0].id.clone()),
        }];
        assert!(run_sweep(&grid, &ts, &bad, &[0], &SweepOptions::default()).is_err());
    }

    fn synthetic_store() -> SweepResultStore {
        let limits = OperatingLimits {
            i_limit_pct: 60.0,
            ..Default::default()
        };
        let steps: Vec<usize> = (0..120).collect();
        let cases: Vec<ContingencyCase> = (0..4)
            .map(|id| ContingencyCase {
                id,
                outage: (id > 0).then(|| format!("l{id}")),
            })
            .collect();
        let mut records = Vec::new();
        for c in &cases {
            for &t in &steps {
                let loading = if c.id == 2 && (57..=87).contains(&t) {
                    75.0
                } else {
                    30.0
                };
                let converged = !(c.id == 3 && t == 10);
                records.push(SweepRecord {
                    case: c.id,
                    step: t,
                    converged,
                    vm: if converged { vec![1.0, 0.99] } else { vec![] },
                    loading: if converged { vec![loading] } else { vec![] },
                    label: converged.then_some(if loading > limits.i_limit_pct { 1 } else { -1 }),
                });
            }
        }
        SweepResultStore {
            header: StoreHeader {
                format: STORE_FORMAT.into(),
                version: 1,
                grid_hash: "x".into(),
                cases,
                steps,
                limits,
                outage_cases: 3,
            },
            records,
            timing: SweepTiming::default(),
        }
    }

    #[test]
    fn label_matrix_marks_window_and_excludes_non_converged() {
        let store = synthetic_store();
        let m = label_matrix(&store);
        let case2 = &m[2];
        for (t, l) in case2.steps.iter().zip(&case2.labels) {
            assert_eq!(*l == 1, (57..=87).contains(t), "step {t}");
        }
        assert!(m[1].labels.iter().all(|&l| l == -1));
        assert_eq!(m[3].non_converged, vec![10]);
        assert_eq!(m[3].labels.len(), 119);
    }

    #[test]
    fn store_round_trip() {
        let grid = fixtures::demo9();
        let ts = fixtures::mini_year(&grid, 12, 4);
        let cases = enumerate_cases(&grid).cases;
        let steps: Vec<usize> = (0..12).collect();
        let store = run_sweep(&grid, &ts, &cases, &steps, &SweepOptions::default()).unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let back = SweepResultStore::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.header, store.header);
        assert_eq!(back.records, store.records);
    }

    #[test]
    fn step_selection_parsing() {
        assert_eq!(StepSelection::parse("all").unwrap(), StepSelection::All);
        assert_eq!(StepSelection::parse("0.25").unwrap(), StepSelection::Fraction(0.25));
        assert_eq!(
            StepSelection::parse("1,4,9").unwrap(),
            StepSelection::List(vec![1, 4, 9])
        );
        assert_eq!(StepSelection::Fraction(0.25).resolve(100, 3).unwrap().len(), 25);
        assert!(StepSelection::List(vec![100]).resolve(100, 0).is_err());
    }
}
