use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::error::ErrorKind;
use clap::CommandFactory;
use gridml::contingency::{base_case, enumerate_cases, run_sweep, StepSelection, SweepOptions, SweepResultStore};
use gridml::dataset::{
    apply_curtailment, build_dataset, generate_scenarios, split_train_test, Dataset, Mode, ScenarioConfig, Split,
    SMOTE_K,
};
use gridml::eval::{
    emit_report, regression_errors, sorted_annual_curve, threshold_sweep, RegressionErrors, SweepInput, TableRow,
    ThresholdPoint,
};
use gridml::grid::write_time_series;
use gridml::models::{
    train_model, train_separate_heads, ModelFile, ModelKind, Target, TrainConfig, DEFAULT_LOADING_FACTORS,
    DEFAULT_PROBABILITY_THRESHOLD,
};
use gridml::pipeline::{run_pipeline, stage_seed, train_classifier, train_smote_classifier, PipelineConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::inputs::{self, resolve_grid, resolve_source, ScenarioFile, SCENARIO_FORMAT};
use crate::{CaseSet, Cli, Command, Global, SplitArg};

pub const PREDICTION_FORMAT: &str = "gridml-predictions";
pub const EVALUATION_FORMAT: &str = "gridml-evaluation";
const DEFAULT_LOADING_FACTOR: f64 = 0.96;

/// Exits with a usage error (status 2) when a stochastic step has no seed.
fn require_seed(g: &Global, what: &str) -> u64 {
    g.seed.unwrap_or_else(|| {
        Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                format!("--seed is required for {what}"),
            )
            .exit()
    })
}

fn seed_if(g: &Global, needed: bool, what: &str) -> Option<u64> {
    if needed {
        Some(require_seed(g, what))
    } else {
        g.seed
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionHeader {
    pub format: String,
    pub version: u32,
    pub case: usize,
    pub mode: Mode,
    pub kind: ModelKind,
    pub n_bus: usize,
    pub n_line: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub step: usize,
    /// Regression outputs `[vm | loading]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_critical: Option<f64>,
}

fn read_predictions(path: &Path) -> Result<(PredictionHeader, Vec<PredictionRow>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines.next().context("empty prediction file")??;
    let header: PredictionHeader = serde_json::from_str(&first).context("prediction header")?;
    ensure!(
        header.format == PREDICTION_FORMAT,
        "{} is not a prediction file",
        path.display()
    );
    let rows = lines
        .map(|l| Ok(serde_json::from_str::<PredictionRow>(&l?)?))
        .collect::<Result<Vec<_>>>()?;
    ensure!(rows.len() == header.rows, "prediction file truncated");
    Ok((header, rows))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub format: String,
    pub case: usize,
    pub mode: Mode,
    pub kind: ModelKind,
    pub samples: usize,
    pub thresholds: Vec<ThresholdPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionErrors>,
    pub curves: BTreeMap<String, Vec<f64>>,
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate {
            grid,
            series,
            steps,
            cases,
            out,
        } => {
            let selection = StepSelection::parse(steps)?;
            let stochastic = inputs::needs_seed(series) || matches!(selection, StepSelection::Fraction(_));
            let seed = seed_if(g, stochastic, "a seeded series or step fraction");
            let grid = resolve_grid(grid)?;
            let source = resolve_source(series, &grid, seed)?;
            let steps = selection.resolve(gridml::grid::SnapshotSource::len(&source), seed.unwrap_or(0))?;
            let cases = match cases {
                CaseSet::All => {
                    let e = enumerate_cases(&grid);
                    if !e.islanding.is_empty() {
                        log::info!("skipping islanding outages: {}", e.islanding.join(", "));
                    }
                    e.cases
                }
                CaseSet::Base => base_case(),
            };
            let opts = SweepOptions {
                pf: g.pf(),
                workers: g.workers(),
            };
            let store = run_sweep(&grid, &source, &cases, &steps, &opts)?;
            log::info!(
                "{} records, {} critical, {} not converged, {:.3} s",
                store.records.len(),
                store.critical_count(),
                store.non_converged_count(),
                store.timing.total_s
            );
            store.save(out)?;
        }
        Command::Dataset {
            grid,
            series,
            store,
            case,
            mode,
            train_frac,
            out,
        } => {
            let seed = require_seed(g, "the train/test split");
            let grid = resolve_grid(grid)?;
            let source = resolve_source(series, &grid, Some(seed))?;
            let store = SweepResultStore::load(store)?;
            ensure!(
                store.header.grid_hash == grid.content_hash(),
                "store was simulated on a different grid"
            );
            let mut ds = build_dataset(&grid, &source, &store, *case, (*mode).into())?;
            let all: Vec<usize> = (0..gridml::grid::SnapshotSource::len(&source)).collect();
            let (train, _) = split_train_test(&all, *train_frac, seed)?;
            ds.assign_split(&train)?;
            log::info!("case {case}: {} rows, {} train", ds.len(), ds.rows(Split::Train).len());
            ds.save(out)?;
        }
        Command::Scenario { grid, n, noise, out } => {
            let seed = require_seed(g, "scenario sampling");
            let grid = resolve_grid(grid)?;
            let config = ScenarioConfig {
                samples: *n,
                noise_std: *noise,
                seed,
                ..ScenarioConfig::default()
            };
            let set = generate_scenarios(&grid, &config)?;
            let mut w = create(out)?;
            serde_json::to_writer(
                &mut w,
                &ScenarioFile {
                    format: SCENARIO_FORMAT.into(),
                    config,
                    set,
                },
            )?;
            w.flush()?;
        }
        Command::Curtail {
            grid,
            series,
            fraction,
            out,
        } => {
            let seed = seed_if(g, inputs::needs_seed(series), "a seeded series");
            let grid = resolve_grid(grid)?;
            let ts = inputs::time_series(resolve_source(series, &grid, seed)?, series)?;
            let c = apply_curtailment(&grid, &ts, *fraction)?;
            write_time_series(&c.series, out)?;
            println!("{}", serde_json::to_string_pretty(&c.summary)?);
        }
        Command::Train {
            dataset,
            model,
            smote,
            separate_heads,
            hidden,
            max_epochs,
            out,
        } => {
            let seed = require_seed(g, "training");
            let ds = Dataset::load(dataset)?;
            let kind: ModelKind = (*model).into();
            let mut cfg = TrainConfig::default();
            if let Some(h) = hidden {
                cfg.mlp.hidden = h.clone();
            }
            if let Some(e) = max_epochs {
                cfg.mlp.max_epochs = *e;
            }
            let rows = ds.rows(Split::Train);
            ensure!(!rows.is_empty(), "dataset has no training rows");
            let x = ds.scaled_rows(&rows)?;
            let trained = match ds.mode {
                Mode::Regression => {
                    ensure!(!smote, "--smote applies to classification datasets only");
                    let y = ds.y_reg_rows(&rows).context("dataset carries no regression targets")?;
                    if *separate_heads {
                        train_separate_heads(kind, &x, &y, ds.n_bus, &cfg, seed)?
                    } else {
                        train_model(kind, &x, Target::Regression(&y), &cfg, seed)?
                    }
                }
                Mode::Classification => {
                    ensure!(!separate_heads, "--separate-heads applies to regression datasets only");
                    let y = ds.y_cls_rows(&rows).context("dataset carries no labels")?;
                    let balanced = if *smote {
                        let smote_seed = stage_seed(seed, 0, ds.case);
                        let r = train_smote_classifier(kind, &x, &y, &cfg, SMOTE_K, smote_seed, seed)?;
                        if r.is_none() {
                            log::warn!("classes already balanced or minority too small; SMOTE skipped");
                        }
                        r
                    } else {
                        None
                    };
                    match balanced {
                        Some((m, summary)) => {
                            log::info!("SMOTE added {} synthetic rows", summary.synthetic);
                            m
                        }
                        None => train_classifier(kind, &x, &y, &cfg, seed)?,
                    }
                }
            };
            ModelFile::for_dataset(&ds, trained, seed)?.save(out)?;
        }
        Command::Predict {
            model,
            dataset,
            split,
            out,
        } => {
            let model = ModelFile::load(model)?;
            let ds = Dataset::load(dataset)?;
            ensure!(model.mode == ds.mode, "model and dataset modes differ");
            ensure!(model.layout == ds.layout, "model and dataset feature layouts differ");
            let rows: Vec<usize> = match split {
                SplitArg::All => (0..ds.len()).collect(),
                SplitArg::Train => ds.rows(Split::Train),
                SplitArg::Test => ds.rows(Split::Test),
            };
            let x = ds.x_rows(&rows);
            let header = PredictionHeader {
                format: PREDICTION_FORMAT.into(),
                version: 1,
                case: ds.case,
                mode: ds.mode,
                kind: model.model.kind(),
                n_bus: ds.n_bus,
                n_line: ds.n_line,
                rows: rows.len(),
            };
            let mut w = create(out)?;
            writeln!(w, "{}", serde_json::to_string(&header)?)?;
            let pred = match ds.mode {
                Mode::Regression => model.predict_regression(&x)?,
                Mode::Classification => model.predict_proba(&x)?,
            };
            for (i, &r) in rows.iter().enumerate() {
                let row = match ds.mode {
                    Mode::Regression => PredictionRow {
                        step: ds.steps[r],
                        y: Some(pred.row(i).iter().copied().collect()),
                        p_critical: None,
                    },
                    Mode::Classification => PredictionRow {
                        step: ds.steps[r],
                        y: None,
                        p_critical: Some(pred[(i, 1)]),
                    },
                };
                writeln!(w, "{}", serde_json::to_string(&row)?)?;
            }
            w.flush()?;
        }
        Command::Evaluate {
            pred,
            truth,
            thresholds,
            out,
        } => {
            let eval = evaluate(pred, truth, thresholds.as_deref())?;
            write_json(out, &eval)?;
        }
        Command::Report { evals, threshold, out } => {
            let mut table = Vec::new();
            let mut curves = BTreeMap::new();
            let mut all = BTreeMap::new();
            for path in evals {
                let e: Evaluation = read_json(path)?;
                ensure!(
                    e.format == EVALUATION_FORMAT,
                    "{} is not an evaluation file",
                    path.display()
                );
                let name = eval_name(path);
                let t = threshold.unwrap_or(match e.mode {
                    Mode::Classification => DEFAULT_PROBABILITY_THRESHOLD,
                    Mode::Regression => DEFAULT_LOADING_FACTOR,
                });
                let point = e
                    .thresholds
                    .iter()
                    .find(|p| (p.threshold - t).abs() < 1e-12)
                    .with_context(|| format!("{} has no threshold {t}", path.display()))?;
                table.push(TableRow::from_metrics(format!("{name}@{t}"), &point.metrics));
                for (c, v) in &e.curves {
                    curves.insert(format!("{name}/{c}"), v.clone());
                }
                ensure!(
                    all.insert(name.clone(), e).is_none(),
                    "duplicate evaluation name `{name}`"
                );
            }
            let report = serde_json::json!({ "format": "gridml-summary", "evaluations": all });
            emit_report::<_, ()>(out, &report, &table, &curves, None)?;
        }
        Command::Pipeline {
            grid,
            series,
            train_frac,
            compare_models,
            out,
        } => {
            let seed = require_seed(g, "the pipeline");
            let grid = resolve_grid(grid)?;
            let ts = inputs::time_series(resolve_source(series, &grid, Some(seed))?, series)?;
            let cfg = PipelineConfig {
                train_fraction: *train_frac,
                seed,
                workers: g.workers(),
                pf: g.pf(),
                compare_models: *compare_models,
                ..PipelineConfig::default()
            };
            let output = run_pipeline(&grid, &ts, &cfg)?;
            let files = output.write(out)?;
            for row in &output.report.table {
                log::info!(
                    "{}: FN {} FP {} accuracy {:.4}",
                    row.name,
                    row.fn_,
                    row.fp,
                    row.accuracy
                );
            }
            log::info!("report written to {}", files.report.display());
        }
    }
    Ok(())
}

fn eval_name(path: &Path) -> String {
    PathBuf::from(path.file_stem().unwrap_or(path.as_os_str()))
        .to_string_lossy()
        .into_owned()
}

fn sorted_row_max(y: &DMatrix<f64>, from: usize) -> Vec<f64> {
    let m: Vec<f64> = y
        .row_iter()
        .map(|r| r.iter().skip(from).copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    sorted_annual_curve(&m)
}

pub fn evaluate(pred: &Path, truth: &Path, thresholds: Option<&[f64]>) -> Result<Evaluation> {
    let (header, rows) = read_predictions(pred)?;
    ensure!(!rows.is_empty(), "no predictions to evaluate");
    let store = SweepResultStore::load(truth)?;
    let index = store.case_index(header.case);
    ensure!(!index.is_empty(), "truth store has no case {}", header.case);
    let records = rows
        .iter()
        .map(|r| match index.get(&r.step) {
            Some(rec) if rec.converged => Ok(*rec),
            Some(_) => bail!("step {} did not converge in the truth store", r.step),
            None => bail!("truth store has no step {} for case {}", r.step, header.case),
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<i8> = records.iter().map(|r| r.label.expect("converged")).collect();
    let n = rows.len();
    let mut curves = BTreeMap::new();
    let (points, regression) = match header.mode {
        Mode::Classification => {
            let t = thresholds.map_or_else(|| vec![DEFAULT_PROBABILITY_THRESHOLD, 0.5], <[f64]>::to_vec);
            let mut proba = DMatrix::zeros(n, 2);
            for (i, r) in rows.iter().enumerate() {
                let p = r.p_critical.context("classification row without p_critical")?;
                proba[(i, 0)] = 1.0 - p;
                proba[(i, 1)] = p;
            }
            (threshold_sweep(&SweepInput::Probabilities(&proba), &labels, &t)?, None)
        }
        Mode::Regression => {
            let t = thresholds.map_or_else(|| DEFAULT_LOADING_FACTORS.to_vec(), <[f64]>::to_vec);
            let width = header.n_bus + header.n_line;
            let mut y_hat = DMatrix::zeros(n, width);
            let mut y_true = DMatrix::zeros(n, width);
            for (i, (r, rec)) in rows.iter().zip(&records).enumerate() {
                let y = r.y.as_ref().context("regression row without outputs")?;
                ensure!(y.len() == width, "prediction width {} differs from {width}", y.len());
                for (j, (p, v)) in y.iter().zip(rec.vm.iter().chain(&rec.loading)).enumerate() {
                    y_hat[(i, j)] = *p;
                    y_true[(i, j)] = *v;
                }
            }
            let input = SweepInput::Regression {
                y_hat: &y_hat,
                n_bus: header.n_bus,
                limits: &store.header.limits,
            };
            curves.insert("max_loading_pred".to_string(), sorted_row_max(&y_hat, header.n_bus));
            curves.insert("max_loading_true".to_string(), sorted_row_max(&y_true, header.n_bus));
            (
                threshold_sweep(&input, &labels, &t)?,
                Some(regression_errors(&y_hat, &y_true, header.n_bus)?),
            )
        }
    };
    Ok(Evaluation {
        format: EVALUATION_FORMAT.into(),
        case: header.case,
        mode: header.mode,
        kind: header.kind,
        samples: n,
        thresholds: points,
        regression,
        curves,
    })
}
