//! Supervised datasets built from sweep results: input features, regression
//! targets `[vm per bus | loading per line]` and ±1 security labels.

mod curtail;
mod features;
mod scaler;
mod scenario;
mod smote;
mod split;

use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contingency::SweepResultStore;
use crate::error::{Error, Result};
use crate::grid::{Grid, SnapshotSource};

pub use curtail::{apply_curtailment, Curtailment, CurtailmentSummary};
pub use features::{extract_features, features_from_snapshot, FeatureLayout};
pub use scaler::{apply_scaler, fit_scaler, Scaler};
pub use scenario::{generate_scenarios, ScenarioConfig, ScenarioSet};
pub use smote::{nearest_segment_distance, oversample_labelled, smote_oversample, SmoteOutput, DEFAULT_K as SMOTE_K};
pub use split::split_train_test;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Regression,
    Classification,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" | "regression" => Ok(Mode::Regression),
            "cls" | "classification" => Ok(Mode::Classification),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Rows of one contingency case. `x` holds unscaled features; `scaler` is
/// fitted on the training rows when a split is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: FeatureLayout,
    pub case: usize,
    pub mode: Mode,
    pub n_bus: usize,
    pub n_line: usize,
    pub steps: Vec<usize>,
    pub split: Vec<Split>,
    pub x: DMatrix<f64>,
    pub y_reg: Option<DMatrix<f64>>,
    pub y_cls: Option<Vec<i8>>,
    pub scaler: Option<Scaler>,
}

/// Dataset rows for the converged records of `case`. Features come from
/// `source`, targets and labels from `store`. The split starts as all-train.
pub fn build_dataset<S: SnapshotSource>(
    grid: &Grid,
    source: &S,
    store: &SweepResultStore,
    case: usize,
    mode: Mode,
) -> Result<Dataset> {
    if store.case_position(case).is_none() {
        return Err(Error::Dataset(format!("store has no case {case}")));
    }
    let layout = FeatureLayout::for_grid(grid);
    let usable: Vec<_> = store.case_records(case).iter().filter(|r| r.converged).collect();
    if usable.is_empty() {
        return Err(Error::Dataset(format!("case {case} has no converged records")));
    }
    let (n_bus, n_line) = (grid.n_bus(), grid.n_line());
    let n = usable.len();
    let mut x = DMatrix::zeros(n, layout.len());
    for (i, r) in usable.iter().enumerate() {
        let row = extract_features(grid, &layout, source, r.step)?;
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let (y_reg, y_cls) = match mode {
        Mode::Regression => {
            let mut y = DMatrix::zeros(n, n_bus + n_line);
            for (i, r) in usable.iter().enumerate() {
                if r.vm.len() != n_bus || r.loading.len() != n_line {
                    return Err(Error::Dataset("store record does not match the grid".into()));
                }
                for (j, v) in r.vm.iter().chain(&r.loading).enumerate() {
                    y[(i, j)] = *v;
                }
            }
            (Some(y), None)
        }
        Mode::Classification => (
            None,
            Some(
                usable
                    .iter()
                    .map(|r| r.label.expect("converged records carry labels"))
                    .collect(),
            ),
        ),
    };
    Ok(Dataset {
        layout,
        case,
        mode,
        n_bus,
        n_line,
        steps: usable.iter().map(|r| r.step).collect(),
        split: vec![Split::Train; n],
        x,
        y_reg,
        y_cls,
        scaler: None,
    })
}

/// Stacks several case datasets and appends one-hot case indicator columns.
pub fn build_multi_case_dataset(parts: &[Dataset]) -> Result<Dataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dataset("no case datasets to stack".into()))?;
    if parts.iter().any(|p| p.mode != first.mode || p.layout != first.layout) {
        return Err(Error::Dataset("case datasets differ in mode or layout".into()));
    }
    let n: usize = parts.iter().map(|p| p.x.nrows()).sum();
    let d = first.layout.len();
    let k = parts.len();
    let mut layout = first.layout.clone();
    layout.names.extend(parts.iter().map(|p| format!("case:{}", p.case)));
    let mut x = DMatrix::zeros(n, d + k);
    let mut y_reg = first.y_reg.as_ref().map(|y| DMatrix::zeros(n, y.ncols()));
    let mut y_cls = first.y_cls.as_ref().map(|_| Vec::with_capacity(n));
    let (mut steps, mut split) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut row = 0;
    for (c, p) in parts.iter().enumerate() {
        let m = p.x.nrows();
        x.view_mut((row, 0), (m, d)).copy_from(&p.x);
        x.view_mut((row, d + c), (m, 1)).fill(1.0);
        if let (Some(dst), Some(src)) = (y_reg.as_mut(), p.y_reg.as_ref()) {
            dst.rows_mut(row, m).copy_from(src);
        }
        if let (Some(dst), Some(src)) = (y_cls.as_mut(), p.y_cls.as_ref()) {
            dst.extend_from_slice(src);
        }
        steps.extend_from_slice(&p.steps);
        split.extend_from_slice(&p.split);
        row += m;
    }
    let mut out = Dataset {
        layout,
        case: usize::MAX,
        mode: first.mode,
        n_bus: first.n_bus,
        n_line: first.n_line,
        steps,
        split,
        x,
        y_reg,
        y_cls,
        scaler: None,
    };
    if out.split.contains(&Split::Train) {
        out.fit_scaler_on_train()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    layout: FeatureLayout,
    case: usize,
    mode: Mode,
    n_bus: usize,
    n_line: usize,
    rows: usize,
    scaler: Option<Scaler>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetRow {
    step: usize,
    split: Split,
    x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<i8>,
}

pub const DATASET_FORMAT: &str = "gridml-dataset";

impl Dataset {
    /// Tags rows whose step is in `train_steps` as training rows (all others
    /// test) and refits the scaler on the training rows.
    pub fn assign_split(&mut self, train_steps: &[usize]) -> Result<()> {
        let train: HashSet<usize> = train_steps.iter().copied().collect();
        self.split = self
            .steps
            .iter()
            .map(|s| if train.contains(s) { Split::Train } else { Split::Test })
            .collect();
        self.fit_scaler_on_train()
    }

    pub fn fit_scaler_on_train(&mut self) -> Result<()> {
        let x_train = self.x.select_rows(self.rows(Split::Train).iter());
        self.scaler = Some(fit_scaler(&x_train)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn x_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(rows.iter())
    }

    pub fn y_reg_rows(&self, rows: &[usize]) -> Option<DMatrix<f64>> {
        self.y_reg.as_ref().map(|y| y.select_rows(rows.iter()))
    }

    pub fn y_cls_rows(&self, rows: &[usize]) -> Option<Vec<i8>> {
        self.y_cls.as_ref().map(|y| rows.iter().map(|&i| y[i]).collect())
    }

    /// Scaled features of the given rows, using the training-row scaler.
    pub fn scaled_rows(&self, rows: &[usize]) -> Result<DMatrix<f64>> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::Dataset("dataset has no fitted scaler".into()))?;
        scaler.transform(&self.x_rows(rows))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Parse(e.to_string());
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: 1,
            layout: self.layout.clone(),
            case: self.case,
            mode: self.mode,
            n_bus: self.n_bus,
            n_line: self.n_line,
            rows: self.len(),
            scaler: self.scaler.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for i in 0..self.len() {
            let row = DatasetRow {
                step: self.steps[i],
                split: self.split[i],
                x: self.x.row(i).iter().copied().collect(),
                y: self.y_reg.as_ref().map(|y| y.row(i).iter().copied().collect()),
                label: self.y_cls.as_ref().map(|y| y[i]),
            };
            writeln!(w, "{}", serde_json::to_string(&row)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Dataset> {
        let mut lines = r.lines();
        let header: DatasetHeader = serde_json::from_str(
            &lines
                .next()
                .ok_or_else(|| Error::Parse("empty dataset file".into()))?
                .map_err(|e| Error::Parse(e.to_string()))?,
        )?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Parse(format!("not a dataset file (format `{}`)", header.format)));
        }
        let d = header.layout.len();
        let mut rows = Vec::with_capacity(header.rows);
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if !line.trim().is_empty() {
                let row: DatasetRow = serde_json::from_str(&line)?;
                if row.x.len() != d {
                    return Err(Error::Parse("dataset row width does not match layout".into()));
                }
                rows.push(row);
            }
        }
        if rows.len() != header.rows {
            return Err(Error::Parse(format!(
                "dataset has {} rows, header says {}",
                rows.len(),
                header.rows
            )));
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i].x[j]);
        let y_reg = match header.mode {
            Mode::Regression => {
                let k = header.n_bus + header.n_line;
                if rows.iter().any(|r| r.y.as_ref().map(Vec::len) != Some(k)) {
                    return Err(Error::Parse("regression rows need targets".into()));
                }
                Some(DMatrix::from_fn(n, k, |i, j| rows[i].y.as_ref().unwrap()[j]))
            }
            Mode::Classification => None,
        };
        let y_cls = match header.mode {
            Mode::Classification => Some(
                rows.iter()
                    .map(|r| {
                        r.label
                            .ok_or_else(|| Error::Parse("classification rows need labels".into()))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            Mode::Regression => None,
        };
        Ok(Dataset {
            layout: header.layout,
            case: header.case,
            mode: header.mode,
            n_bus: header.n_bus,
            n_line: header.n_line,
            steps: rows.iter().map(|r| r.step).collect(),
            split: rows.iter().map(|r| r.split).collect(),
            x,
            y_reg,
            y_cls,
            scaler: header.scaler,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contingency::{enumerate_cases, run_sweep, SweepOptions};
    use crate::fixtures;

    fn sweep(steps: usize) -> (Grid, crate::grid::TimeSeries, SweepResultStore) {
        let grid = fixtures::demo9();
        let ts = fixtures::mini_year(&grid, steps, 3);
        let cases = enumerate_cases(&grid).cases[..4].to_vec();
        let ids: Vec<usize> = (0..steps).collect();
        let store = run_sweep(&grid, &ts, &cases, &ids, &SweepOptions::default()).unwrap();
        (grid, ts, store)
    }

    #[test]
    fn classification_dataset_rows() {
        let (grid, ts, store) = sweep(40);
        let ds = build_dataset(&grid, &ts, &store, 2, Mode::Classification).unwrap();
        let converged = store.case_records(2).iter().filter(|r| r.converged).count();
        assert_eq!(ds.len(), converged);
        assert!(ds.y_cls.as_ref().unwrap().iter().all(|&l| l == 1 || l == -1));
    }

    #[test]
    fn regression_targets_layout() {
        let (grid, ts, store) = sweep(20);
        let ds = build_dataset(&grid, &ts, &store, 1, Mode::Regression).unwrap();
        assert_eq!(ds.y_reg.as_ref().unwrap().ncols(), grid.n_bus() + grid.n_line());
        assert!(build_dataset(&grid, &ts, &store, 99, Mode::Regression).is_err());
    }

    #[test]
    fn scenario_dataset_targets_come_from_solving() {
        let grid = fixtures::demo9();
        let set = generate_scenarios(
            &grid,
            &ScenarioConfig {
                samples: 15,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let cases = enumerate_cases(&grid).cases[..2].to_vec();
        let ids: Vec<usize> = (0..15).collect();
        let store = run_sweep(&grid, &set, &cases, &ids, &SweepOptions::default()).unwrap();
        let ds = build_dataset(&grid, &set, &store, 1, Mode::Regression).unwrap();
        let rec = &store.case_records(1)[0];
        let y = ds.y_reg.unwrap();
        assert_eq!(
            y.row(0).iter().copied().collect::<Vec<_>>(),
            [rec.vm.clone(), rec.loading.clone()].concat()
        );
    }

    #[test]
    fn split_scaler_and_file_round_trip() {
        let (grid, ts, store) = sweep(30);
        let mut ds = build_dataset(&grid, &ts, &store, 0, Mode::Regression).unwrap();
        let (train, _) = split_train_test(&ds.steps.clone(), 0.5, 8).unwrap();
        ds.assign_split(&train).unwrap();
        assert_eq!(ds.rows(Split::Train).len(), 15);
        let expected = fit_scaler(&ds.x_rows(&ds.rows(Split::Train))).unwrap();
        assert_eq!(ds.scaler.as_ref().unwrap(), &expected);

        let mut a = Vec::new();
        ds.write_to(&mut a).unwrap();
        let back = Dataset::read_from(a.as_slice()).unwrap();
        assert_eq!(back, ds);
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_case_appends_indicators() {
        let (grid, ts, store) = sweep(10);
        let parts: Vec<Dataset> = (0..3)
            .map(|c| build_dataset(&grid, &ts, &store, c, Mode::Classification).unwrap())
            .collect();
        let all = build_multi_case_dataset(&parts).unwrap();
        assert_eq!(all.len(), 30);
        assert_eq!(all.layout.len(), parts[0].layout.len() + 3);
        let d = parts[0].layout.len();
        assert_eq!(all.x[(12, d + 1)], 1.0);
        assert_eq!(all.x[(12, d)], 0.0);
    }
}
