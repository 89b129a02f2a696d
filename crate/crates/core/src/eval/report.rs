use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Metrics;
use crate::error::{Error, Result};

/// One row of the summary table: misclassification counts and rates for a
/// classifier or a regression-derived labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub correct: u64,
    pub total: u64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub accuracy: f64,
}

impl TableRow {
    pub fn from_metrics(name: impl Into<String>, m: &Metrics) -> TableRow {
        TableRow {
            name: name.into(),
            fn_: m.counts.fn_,
            fp: m.counts.fp,
            correct: m.counts.correct(),
            total: m.counts.total(),
            fpr: m.fpr,
            fnr: m.fnr,
            accuracy: m.accuracy,
        }
    }
}

/// Values sorted in descending order, as plotted in duration curves.
pub fn sorted_annual_curve(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub report: PathBuf,
    pub table: PathBuf,
    pub curves: PathBuf,
    pub timings: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Writes `report.json`, `table.csv`, `curves.csv` (long form: curve, rank,
/// value) and, when given, `timings.json` into `dir`.
pub fn emit_report<R: Serialize, T: Serialize>(
    dir: &Path,
    report: &R,
    table: &[TableRow],
    curves: &BTreeMap<String, Vec<f64>>,
    timings: Option<&T>,
) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = EmittedFiles {
        report: dir.join("report.json"),
        table: dir.join("table.csv"),
        curves: dir.join("curves.csv"),
        timings: timings.map(|_| dir.join("timings.json")),
    };
    write_json(&files.report, report)?;

    let mut w = csv::Writer::from_writer(create(&files.table)?);
    for row in table {
        w.serialize(row).map_err(|e| csv_err(&files.table, e))?;
    }
    w.flush().map_err(|e| Error::io(&files.table, e))?;

    let mut w = csv::Writer::from_writer(create(&files.curves)?);
    w.write_record(["curve", "rank", "value"])
        .map_err(|e| csv_err(&files.curves, e))?;
    for (name, values) in curves {
        for (rank, v) in values.iter().enumerate() {
            w.serialize((name, rank, v)).map_err(|e| csv_err(&files.curves, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&files.curves, e))?;

    if let (Some(t), Some(path)) = (timings, &files.timings) {
        write_json(path, t)?;
    }
    Ok(files)
}

pub fn read_table_csv(path: &Path) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn read_curves_csv(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in r.deserialize::<(String, usize, f64)>() {
        let (name, rank, v) = row.map_err(|e| csv_err(path, e))?;
        let curve = out.entry(name).or_default();
        if rank != curve.len() {
            return Err(Error::Parse(format!("{}: curve ranks out of order", path.display())));
        }
        curve.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{compute_metrics, ConfusionCounts};
    use super::*;

    #[test]
    fn curve_is_descending() {
        assert_eq!(sorted_annual_curve(&[1.0, 3.0, 2.0]), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = compute_metrics(ConfusionCounts {
            tp: 3,
            fp: 1,
            tn: 10,
            fn_: 0,
        })
        .unwrap();
        let no_pos = compute_metrics(ConfusionCounts {
            tn: 4,
            ..Default::default()
        })
        .unwrap();
        let table = vec![
            TableRow::from_metrics("cls", &m),
            TableRow::from_metrics("reg", &no_pos),
        ];
        let mut curves = BTreeMap::new();
        curves.insert("max_loading".to_string(), vec![0.1 + 0.2, 1.0 / 3.0]);
        curves.insert("p_in".to_string(), vec![2.0]);
        let report = serde_json::json!({ "metrics": m });
        let files = emit_report(
            dir.path(),
            &report,
            &table,
            &curves,
            Some(&serde_json::json!({"sweep_s": 1.5})),
        )
        .unwrap();

        let back: serde_json::Value = serde_json::from_reader(File::open(&files.report).unwrap()).unwrap();
        assert_eq!(back, report);
        let m_back: Metrics = serde_json::from_value(back["metrics"].clone()).unwrap();
        assert_eq!(m_back, m);
        assert_eq!(read_table_csv(&files.table).unwrap(), table);
        assert_eq!(read_curves_csv(&files.curves).unwrap(), curves);
        assert!(files.timings.unwrap().exists());
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let err = emit_report::<_, ()>(&file.join("sub"), &1, &[], &BTreeMap::new(), None);
        assert!(err.is_err());
    }
}
