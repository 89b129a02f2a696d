use std::path::Path;
use std::process::{Command, Output};

use gridml::contingency::SweepResultStore;
use gridml::dataset::{Dataset, Split};
use gridml::eval::{read_table_csv, regression_errors};
use gridml::fixtures;
use gridml::models::ModelFile;

fn gridml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridml"))
        .args(args)
        .output()
        .expect("gridml binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gridml(args);
    assert!(
        out.status.success(),
        "gridml {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = gridml(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = gridml(&[
        "simulate", "--grid", "demo3", "--series", "x.csv", "--out", "y", "--bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stochastic_steps_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    let r = gridml(&["simulate", "--grid", "demo3", "--series", "demo-year", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--seed"));
    let r = gridml(&["scenario", "--grid", "demo3", "--n", "5", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = gridml(&[
        "simulate",
        "--grid",
        p(&dir.path().join("nope.json")),
        "--series",
        "demo-year",
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("s.jsonl")),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.starts_with("error: loading grid"), "{err}");
    assert_eq!(err.matches("No such file").count(), 1, "{err}");
}

#[test]
fn simulate_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let args = |out: &Path, workers: &'static str| {
        vec![
            "--seed".to_string(),
            "4".into(),
            "--workers".into(),
            workers.into(),
            "simulate".into(),
            "--grid".into(),
            "demo9".into(),
            "--series".into(),
            "demo-year".into(),
            "--steps".into(),
            "0.05".into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let run = |v: Vec<String>| ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    run(args(&a, "1"));
    run(args(&b, "4"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let store = SweepResultStore::load(&a).unwrap();
    assert_eq!(store.header.steps.len(), 100);
    assert_eq!(store.records.len(), store.header.cases.len() * 100);
}

#[test]
fn base_case_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    ok(&[
        "--seed",
        "1",
        "simulate",
        "--grid",
        "demo9",
        "--series",
        "demo-year",
        "--steps",
        "0,5,9",
        "--cases",
        "base",
        "--out",
        p(&out),
    ]);
    let store = SweepResultStore::load(&out).unwrap();
    assert_eq!(store.header.cases.len(), 1);
    assert_eq!(store.header.steps, vec![0, 5, 9]);
}

#[test]
fn modular_chain_matches_library_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    ok(&[
        "--seed",
        "2",
        "simulate",
        "--grid",
        "demo9",
        "--series",
        "demo-year",
        "--steps",
        "0.2",
        "--out",
        p(&d("store.jsonl")),
    ]);
    for (mode, name) in [("reg", "reg.jsonl"), ("cls", "cls.jsonl")] {
        ok(&[
            "--seed",
            "3",
            "dataset",
            "--grid",
            "demo9",
            "--series",
            "demo-year",
            "--store",
            p(&d("store.jsonl")),
            "--case",
            "3",
            "--mode",
            mode,
            "--train-frac",
            "0.1",
            "--out",
            p(&d(name)),
        ]);
    }
    let ds = Dataset::load(d("reg.jsonl")).unwrap();
    assert_eq!(ds.case, 3);
    assert_eq!(ds.x.ncols(), 19);
    assert!(!ds.rows(Split::Train).is_empty() && !ds.rows(Split::Test).is_empty());

    ok(&[
        "--seed",
        "5",
        "train",
        "--dataset",
        p(&d("reg.jsonl")),
        "--model",
        "ridge",
        "--out",
        p(&d("ridge.json")),
    ]);
    ok(&[
        "--seed",
        "5",
        "train",
        "--dataset",
        p(&d("cls.jsonl")),
        "--model",
        "mlp",
        "--hidden",
        "16",
        "--max-epochs",
        "30",
        "--smote",
        "--out",
        p(&d("mlp.json")),
    ]);
    ok(&[
        "--seed",
        "5",
        "train",
        "--dataset",
        p(&d("reg.jsonl")),
        "--model",
        "ridge",
        "--separate-heads",
        "--out",
        p(&d("heads.json")),
    ]);
    let heads = ModelFile::load(d("heads.json")).unwrap();
    let x_all = ds.x_rows(&(0..ds.len()).collect::<Vec<_>>());
    assert_eq!(heads.predict_regression(&x_all).unwrap().ncols(), ds.n_bus + ds.n_line);
    let heads_cls = gridml(&[
        "--seed",
        "5",
        "train",
        "--dataset",
        p(&d("cls.jsonl")),
        "--separate-heads",
        "--out",
        p(&d("x.json")),
    ]);
    assert_eq!(heads_cls.status.code(), Some(1));
    let refused = gridml(&[
        "--seed",
        "5",
        "train",
        "--dataset",
        p(&d("reg.jsonl")),
        "--smote",
        "--out",
        p(&d("x.json")),
    ]);
    assert_eq!(refused.status.code(), Some(1));

    ok(&[
        "predict",
        "--model",
        p(&d("ridge.json")),
        "--dataset",
        p(&d("reg.jsonl")),
        "--out",
        p(&d("pr.jsonl")),
    ]);
    ok(&[
        "predict",
        "--model",
        p(&d("mlp.json")),
        "--dataset",
        p(&d("cls.jsonl")),
        "--out",
        p(&d("pc.jsonl")),
    ]);
    let mismatch = gridml(&[
        "predict",
        "--model",
        p(&d("ridge.json")),
        "--dataset",
        p(&d("cls.jsonl")),
        "--out",
        p(&d("x")),
    ]);
    assert_eq!(mismatch.status.code(), Some(1));

    ok(&[
        "evaluate",
        "--pred",
        p(&d("pr.jsonl")),
        "--truth",
        p(&d("store.jsonl")),
        "--out",
        p(&d("er.json")),
    ]);
    ok(&[
        "evaluate",
        "--pred",
        p(&d("pc.jsonl")),
        "--truth",
        p(&d("store.jsonl")),
        "--thresholds",
        "0.2,0.5",
        "--out",
        p(&d("ec.json")),
    ]);

    // the evaluation file agrees with metrics computed from the library
    let model = ModelFile::load(d("ridge.json")).unwrap();
    let test = ds.rows(Split::Test);
    let y_hat = model.predict_regression(&ds.x_rows(&test)).unwrap();
    let errors = regression_errors(&y_hat, &ds.y_reg_rows(&test).unwrap(), ds.n_bus).unwrap();
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(d("er.json")).unwrap()).unwrap();
    let mean = eval["regression"]["loading_pct"]["mean"].as_f64().unwrap();
    assert!((mean - errors.loading_pct.mean).abs() < 1e-12);
    assert_eq!(eval["samples"].as_u64().unwrap() as usize, test.len());
    assert_eq!(eval["thresholds"].as_array().unwrap().len(), 4);

    ok(&[
        "report",
        "--eval",
        p(&d("er.json")),
        "--eval",
        p(&d("ec.json")),
        "--out",
        p(&d("rep")),
    ]);
    let table = read_table_csv(&d("rep/table.csv")).unwrap();
    assert_eq!(table.len(), 2);
    assert_eq!(table[0].name, "er@0.96");
    assert_eq!(table[1].name, "ec@0.2");
    assert!(table.iter().all(|r| r.total as usize == test.len()));
    let bad = gridml(&[
        "report",
        "--eval",
        p(&d("ec.json")),
        "--threshold",
        "0.3",
        "--out",
        p(&d("rep2")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    ok(&[
        "--seed",
        "2",
        "simulate",
        "--grid",
        "demo3",
        "--series",
        "demo-year",
        "--steps",
        "0.1",
        "--out",
        p(&d("s.jsonl")),
    ]);
    ok(&[
        "--seed",
        "2",
        "dataset",
        "--grid",
        "demo3",
        "--series",
        "demo-year",
        "--store",
        p(&d("s.jsonl")),
        "--case",
        "0",
        "--mode",
        "reg",
        "--train-frac",
        "0.5",
        "--out",
        p(&d("ds.jsonl")),
    ]);
    for model in ["mlp", "forest", "tree", "knn"] {
        let a = d(&format!("{model}_a.json"));
        let b = d(&format!("{model}_b.json"));
        for (out, workers) in [(&a, "1"), (&b, "3")] {
            ok(&[
                "--seed",
                "8",
                "--workers",
                workers,
                "train",
                "--dataset",
                p(&d("ds.jsonl")),
                "--model",
                model,
                "--max-epochs",
                "20",
                "--out",
                p(out),
            ]);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{model}");
    }
}

#[test]
fn scenario_and_curtail_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    ok(&[
        "--seed",
        "6",
        "scenario",
        "--grid",
        "demo9",
        "--n",
        "40",
        "--out",
        p(&d("a.json")),
    ]);
    ok(&[
        "--seed",
        "6",
        "scenario",
        "--grid",
        "demo9",
        "--n",
        "40",
        "--out",
        p(&d("b.json")),
    ]);
    assert_eq!(std::fs::read(d("a.json")).unwrap(), std::fs::read(d("b.json")).unwrap());
    ok(&[
        "simulate",
        "--grid",
        "demo9",
        "--series",
        p(&d("a.json")),
        "--out",
        p(&d("s.jsonl")),
    ]);
    let store = SweepResultStore::load(d("s.jsonl")).unwrap();
    assert_eq!(store.header.steps.len(), 40);
    let wrong = gridml(&[
        "simulate",
        "--grid",
        "demo3",
        "--series",
        p(&d("a.json")),
        "--out",
        p(&d("x.jsonl")),
    ]);
    assert_eq!(wrong.status.code(), Some(1));

    let out = ok(&[
        "--seed",
        "6",
        "curtail",
        "--grid",
        "demo9",
        "--series",
        "demo-year",
        "--out",
        p(&d("cut.csv")),
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ratio = summary["energy_after"].as_f64().unwrap() / summary["energy_before"].as_f64().unwrap();
    assert!((ratio - 0.97).abs() < 1e-3);
    let grid = fixtures::demo9();
    let ts = gridml::grid::load_time_series(d("cut.csv"), &grid).unwrap();
    assert_eq!(ts.step_count, fixtures::MINI_YEAR_STEPS);
    ok(&[
        "simulate",
        "--grid",
        "demo9",
        "--series",
        p(&d("cut.csv")),
        "--steps",
        "0,1,2",
        "--out",
        p(&d("c.jsonl")),
    ]);
}

#[test]
fn small_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&[
        "--seed",
        "1",
        "--workers",
        "2",
        "pipeline",
        "--grid",
        "demo3",
        "--out",
        p(&out),
    ]);
    for f in [
        "report.json",
        "table.csv",
        "curves.csv",
        "timings.json",
        "store.jsonl",
        "models/case0_reg.json",
        "models/case0_cls.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "gridml-report");
    assert_eq!(report["seeds"]["base"], 1);
    assert_eq!(report["steps"], fixtures::MINI_YEAR_STEPS);
}
