//! End-to-end experiment: sweep a year, train per-case surrogates on a small
//! share of the steps and score them on the rest, on curtailed in-feed and
//! against scenario-trained models.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contingency::{enumerate_cases, run_sweep, ContingencyCase, SweepOptions, SweepResultStore};
use crate::dataset::{
    apply_curtailment, build_dataset, generate_scenarios, nearest_segment_distance, oversample_labelled,
    split_train_test, CurtailmentSummary, Dataset, Mode, ScenarioConfig, ScenarioSet, Split, SMOTE_K,
};
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, confusion_counts, emit_report, error_stats, regression_errors, sorted_annual_curve,
    threshold_sweep, ConfusionCounts, EmittedFiles, Metrics, RegressionErrors, SweepInput, TableRow, ThresholdPoint,
};
use crate::grid::{Grid, InjectorKind, SnapshotSource, TimeSeries};
use crate::models::{
    labels_from_proba, predict_proba, predict_regression, train_mlp_with_validation, train_model, validation_size,
    ModelFile, ModelKind, SurrogateModel, Target, TrainConfig, DEFAULT_LOADING_FACTORS, DEFAULT_PROBABILITY_THRESHOLD,
};
use crate::powerflow::PfOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train_fraction: f64,
    pub seed: u64,
    /// Execution detail only; results do not depend on it.
    #[serde(skip, default = "one_worker")]
    pub workers: usize,
    pub pf: PfOptions,
    pub train: TrainConfig,
    /// Probability thresholds for the classifiers, ascending.
    pub probability_thresholds: Vec<f64>,
    /// Operating threshold reported in the summary table.
    pub probability_threshold: f64,
    /// Loading factors for regression-derived labels, ascending.
    pub loading_factors: Vec<f64>,
    /// Factor reported in the summary table.
    pub loading_factor: f64,
    pub curtail_fraction: f64,
    pub smote_k: usize,
    /// Also train ridge, tree, forest and k-NN regressors per case.
    pub compare_models: bool,
}

fn one_worker() -> usize {
    1
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_fraction: 0.1,
            seed: 0,
            workers: 1,
            pf: PfOptions::default(),
            train: TrainConfig::default(),
            probability_thresholds: vec![DEFAULT_PROBABILITY_THRESHOLD, 0.5],
            probability_threshold: DEFAULT_PROBABILITY_THRESHOLD,
            loading_factors: DEFAULT_LOADING_FACTORS.to_vec(),
            loading_factor: 0.96,
            curtail_fraction: 0.03,
            smote_k: SMOTE_K,
            compare_models: false,
        }
    }
}

/// Every seed derived from the base seed, so that any stage can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub base: u64,
    pub split: u64,
    pub scenario: u64,
    /// Per case: regression MLP, classifier, SMOTE classifier, SMOTE
    /// sampling, scenario MLP.
    pub cases: Vec<CaseSeeds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSeeds {
    pub case: usize,
    pub regression: u64,
    pub classifier: u64,
    pub classifier_smote: u64,
    pub smote: u64,
    pub scenario_regression: u64,
}

const STAGE_SPLIT: u64 = 1;
const STAGE_SCENARIO: u64 = 2;
const STAGE_REG: u64 = 3;
const STAGE_CLS: u64 = 4;
const STAGE_CLS_SMOTE: u64 = 5;
const STAGE_SMOTE: u64 = 6;
const STAGE_SCEN_REG: u64 = 7;

pub fn stage_seed(base: u64, stage: u64, case: usize) -> u64 {
    let mix = base
        ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (case as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha8Rng::seed_from_u64(mix).random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteSummary {
    pub applied: bool,
    pub minority_label: Option<i8>,
    pub minority: usize,
    pub synthetic: usize,
    /// Largest distance of a synthetic row to its nearest minority segment.
    pub max_segment_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub kind: ModelKind,
    pub errors: RegressionErrors,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: usize,
    pub outage: Option<String>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub non_converged: usize,
    pub train_critical: usize,
    pub test_critical: usize,
    pub regression: RegressionErrors,
    pub factor_sweep: Vec<ThresholdPoint>,
    pub classifier_kind: ModelKind,
    pub classification: Vec<ThresholdPoint>,
    pub classification_smote: Vec<ThresholdPoint>,
    pub smote: SmoteSummary,
    pub curtailed_regression: RegressionErrors,
    pub curtailed_factor_sweep: Vec<ThresholdPoint>,
    pub curtailed_classification: Vec<ThresholdPoint>,
    pub scenario_regression: RegressionErrors,
    pub comparison: Vec<ModelScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub regression: RegressionErrors,
    pub factor_sweep: Vec<ThresholdPoint>,
    pub classification: Vec<ThresholdPoint>,
    pub classification_smote: Vec<ThresholdPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentReport {
    pub summary: CurtailmentSummary,
    pub fraction: f64,
    pub aggregate: AggregateReport,
    /// Baseline minus curtailed accuracy at the table thresholds.
    pub regression_accuracy_drop: f64,
    pub classification_accuracy_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub samples: usize,
    pub non_converged: usize,
    pub regression: RegressionErrors,
    pub time_series_max_vm_error: f64,
    pub scenario_max_vm_error: f64,
    pub max_vm_error_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub format: String,
    pub grid_hash: String,
    pub config: PipelineConfig,
    pub seeds: SeedLog,
    pub cases: Vec<ContingencyCase>,
    pub islanding: Vec<String>,
    pub steps: usize,
    pub train_steps: Vec<usize>,
    pub records: usize,
    pub critical_records: usize,
    pub per_case: Vec<CaseReport>,
    pub aggregate: AggregateReport,
    pub curtailment: CurtailmentReport,
    pub scenario: ScenarioReport,
    pub table: Vec<TableRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTimings {
    pub sweep_train_s: f64,
    pub sweep_test_s: f64,
    pub sweep_per_solve_s: f64,
    pub sweep_curtailed_s: f64,
    pub sweep_scenario_s: f64,
    pub train_s: f64,
    pub predict_s: f64,
    /// Prediction time per (case, step) of the regression MLPs.
    pub predict_per_sample_s: f64,
    pub total_s: f64,
}

pub struct PipelineOutput {
    pub report: PipelineReport,
    pub timings: PipelineTimings,
    pub store: SweepResultStore,
    pub models: Vec<(ModelFile, ModelFile)>,
    pub curves: BTreeMap<String, Vec<f64>>,
}

struct CaseOutcome {
    report: CaseReport,
    vm_abs: Vec<f64>,
    loading_abs: Vec<f64>,
    curtailed_vm_abs: Vec<f64>,
    curtailed_loading_abs: Vec<f64>,
    scenario_vm_abs: Vec<f64>,
    scenario_loading_abs: Vec<f64>,
    max_loading_true: Vec<f64>,
    max_loading_pred: Vec<f64>,
    models: (ModelFile, ModelFile),
    train_s: f64,
    predict_s: f64,
    predicted_samples: usize,
}

struct Context<'a> {
    grid: &'a Grid,
    series: &'a TimeSeries,
    curtailed: &'a TimeSeries,
    scenarios: &'a ScenarioSet,
    store: &'a SweepResultStore,
    curtailed_store: &'a SweepResultStore,
    scenario_store: &'a SweepResultStore,
    train_steps: &'a [usize],
    cfg: &'a PipelineConfig,
}

fn abs_errors(y_hat: &DMatrix<f64>, y: &DMatrix<f64>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::new();
    for j in cols {
        for i in 0..y.nrows() {
            out.push((y_hat[(i, j)] - y[(i, j)]).abs());
        }
    }
    out
}

fn row_max(y: &DMatrix<f64>, from: usize) -> Vec<f64> {
    (0..y.nrows())
        .map(|i| (from..y.ncols()).map(|j| y[(i, j)]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Rows of a dataset built on another source, scaled with `reference`'s
/// training scaler.
fn rescaled(mut ds: Dataset, reference: &Dataset) -> Dataset {
    ds.split = vec![Split::Test; ds.len()];
    ds.scaler = reference.scaler.clone();
    ds
}

/// Classifier of `kind`, or a constant model when the rows hold a single class.
pub fn train_classifier(
    kind: ModelKind,
    x: &DMatrix<f64>,
    y: &[i8],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SurrogateModel> {
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        Ok(SurrogateModel::constant_for(Target::Classification(y)))
    } else {
        train_model(kind, x, Target::Classification(y), cfg, seed)
    }
}

/// Classifier trained on SMOTE-balanced rows. Only rows used for fitting
/// are oversampled: for the MLP the early-stopping slice is first held out
/// from the original rows. `None` when there is nothing to balance.
pub fn train_smote_classifier(
    kind: ModelKind,
    x: &DMatrix<f64>,
    y: &[i8],
    cfg: &TrainConfig,
    k: usize,
    smote_seed: u64,
    model_seed: u64,
) -> Result<Option<(SurrogateModel, SmoteSummary)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(smote_seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let n_val = if kind == ModelKind::Mlp {
        order.shuffle(&mut rng);
        validation_size(y.len(), cfg.mlp.validation_fraction)
    } else {
        0
    };
    let (val, fit) = order.split_at(n_val);
    let mut fit = fit.to_vec();
    fit.sort_unstable();
    let y_fit: Vec<i8> = fit.iter().map(|&i| y[i]).collect();
    let pos = y_fit.iter().filter(|&&l| l == 1).count();
    let minority = pos.min(y_fit.len() - pos);
    if minority < 2 || 2 * minority >= y_fit.len() {
        return Ok(None);
    }
    let minority_label = if pos == minority { 1 } else { -1 };
    let x_fit = x.select_rows(fit.iter());
    let (x_aug, y_aug, out) = oversample_labelled(&x_fit, &y_fit, k, rng.random())?;
    let min_rows: Vec<usize> = (0..y_fit.len()).filter(|&i| y_fit[i] == minority_label).collect();
    let x_min = x_fit.select_rows(min_rows.iter());
    let max_segment_distance = out
        .synthetic
        .row_iter()
        .map(|r| nearest_segment_distance(&x_min, &r.iter().copied().collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let model = if kind == ModelKind::Mlp {
        let y_val: Vec<i8> = val.iter().map(|&i| y[i]).collect();
        SurrogateModel::Mlp(train_mlp_with_validation(
            &x_aug,
            Target::Classification(&y_aug),
            &x.select_rows(val.iter()),
            Target::Classification(&y_val),
            &cfg.mlp,
            model_seed,
        )?)
    } else {
        train_model(kind, &x_aug, Target::Classification(&y_aug), cfg, model_seed)?
    };
    Ok(Some((
        model,
        SmoteSummary {
            applied: true,
            minority_label: Some(minority_label),
            minority,
            synthetic: out.synthetic.nrows(),
            max_segment_distance,
        },
    )))
}

fn run_case(ctx: &Context<'_>, case: &ContingencyCase, seeds: &CaseSeeds) -> Result<CaseOutcome> {
    let grid = ctx.grid;
    let cfg = ctx.cfg;
    let n_bus = grid.n_bus();
    let limits = grid.limits;

    let mut reg = build_dataset(grid, ctx.series, ctx.store, case.id, Mode::Regression)?;
    let mut cls = build_dataset(grid, ctx.series, ctx.store, case.id, Mode::Classification)?;
    reg.assign_split(ctx.train_steps)?;
    cls.assign_split(ctx.train_steps)?;
    let train = reg.rows(Split::Train);
    let test = reg.rows(Split::Test);
    if train.len() < 2 || test.is_empty() {
        return Err(Error::Dataset(format!(
            "case {} has {} training and {} test rows",
            case.id,
            train.len(),
            test.len()
        )));
    }
    let x_train = reg.scaled_rows(&train)?;
    let x_test = reg.scaled_rows(&test)?;
    let y_train = reg.y_reg_rows(&train).expect("regression dataset");
    let y_test = reg.y_reg_rows(&test).expect("regression dataset");
    let l_train = cls.y_cls_rows(&train).expect("classification dataset");
    let l_test = cls.y_cls_rows(&test).expect("classification dataset");

    let t0 = Instant::now();
    let reg_model = train_model(
        ModelKind::Mlp,
        &x_train,
        Target::Regression(&y_train),
        &cfg.train,
        seeds.regression,
    )?;
    let cls_model = train_classifier(ModelKind::Mlp, &x_train, &l_train, &cfg.train, seeds.classifier)?;
    let minority = {
        let pos = l_train.iter().filter(|&&l| l == 1).count();
        pos.min(l_train.len() - pos)
    };
    let (cls_smote_model, smote) = match train_smote_classifier(
        ModelKind::Mlp,
        &x_train,
        &l_train,
        &cfg.train,
        cfg.smote_k,
        seeds.smote,
        seeds.classifier_smote,
    )? {
        Some(pair) => pair,
        None => (
            cls_model.clone(),
            SmoteSummary {
                applied: false,
                minority_label: None,
                minority,
                synthetic: 0,
                max_segment_distance: 0.0,
            },
        ),
    };
    let mut train_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let y_hat = predict_regression(&reg_model, &x_test)?;
    let proba = predict_proba(&cls_model, &x_test)?;
    let proba_smote = predict_proba(&cls_smote_model, &x_test)?;
    let mut predict_s = t1.elapsed().as_secs_f64();

    let regression = regression_errors(&y_hat, &y_test, n_bus)?;
    let factor_sweep = threshold_sweep(
        &SweepInput::Regression {
            y_hat: &y_hat,
            n_bus,
            limits: &limits,
        },
        &l_test,
        &cfg.loading_factors,
    )?;
    let classification = threshold_sweep(&SweepInput::Probabilities(&proba), &l_test, &cfg.probability_thresholds)?;
    let classification_smote = threshold_sweep(
        &SweepInput::Probabilities(&proba_smote),
        &l_test,
        &cfg.probability_thresholds,
    )?;

    // curtailed in-feed, models unchanged
    let c_reg = rescaled(
        build_dataset(grid, ctx.curtailed, ctx.curtailed_store, case.id, Mode::Regression)?,
        &reg,
    );
    let c_cls = build_dataset(grid, ctx.curtailed, ctx.curtailed_store, case.id, Mode::Classification)?;
    let c_rows: Vec<usize> = (0..c_reg.len()).collect();
    let c_x = c_reg.scaled_rows(&c_rows)?;
    let c_y = c_reg.y_reg_rows(&c_rows).expect("regression dataset");
    let c_l = c_cls.y_cls_rows(&c_rows).expect("classification dataset");
    let c_hat = predict_regression(&reg_model, &c_x)?;
    let c_proba = predict_proba(&cls_model, &c_x)?;
    let curtailed_regression = regression_errors(&c_hat, &c_y, n_bus)?;
    let curtailed_factor_sweep = threshold_sweep(
        &SweepInput::Regression {
            y_hat: &c_hat,
            n_bus,
            limits: &limits,
        },
        &c_l,
        &cfg.loading_factors,
    )?;
    let curtailed_classification =
        threshold_sweep(&SweepInput::Probabilities(&c_proba), &c_l, &cfg.probability_thresholds)?;

    // scenario-trained regressor, scored on the time-series test rows
    let mut s_reg = build_dataset(grid, ctx.scenarios, ctx.scenario_store, case.id, Mode::Regression)?;
    s_reg.fit_scaler_on_train()?;
    let s_rows: Vec<usize> = (0..s_reg.len()).collect();
    let s_x = s_reg.scaled_rows(&s_rows)?;
    let s_y = s_reg.y_reg_rows(&s_rows).expect("regression dataset");
    let t2 = Instant::now();
    let s_model = train_model(
        ModelKind::Mlp,
        &s_x,
        Target::Regression(&s_y),
        &cfg.train,
        seeds.scenario_regression,
    )?;
    train_s += t2.elapsed().as_secs_f64();
    let s_test_x = s_reg.scaler.as_ref().expect("fitted").transform(&reg.x_rows(&test))?;
    let s_hat = predict_regression(&s_model, &s_test_x)?;
    let scenario_regression = regression_errors(&s_hat, &y_test, n_bus)?;

    let mut comparison = Vec::new();
    if cfg.compare_models {
        for kind in [ModelKind::Ridge, ModelKind::Tree, ModelKind::Forest, ModelKind::Knn] {
            let t = Instant::now();
            let m = train_model(
                kind,
                &x_train,
                Target::Regression(&y_train),
                &cfg.train,
                seeds.regression,
            )?;
            train_s += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let pred = predict_regression(&m, &x_test)?;
            predict_s += t.elapsed().as_secs_f64();
            let labels = crate::models::classify_from_regression(&pred, n_bus, &limits, cfg.loading_factor);
            comparison.push(ModelScore {
                kind,
                errors: regression_errors(&pred, &y_test, n_bus)?,
                metrics: compute_metrics(confusion_counts(&labels, &l_test)?)?,
            });
        }
    }

    let non_converged = ctx.store.case_records(case.id).iter().filter(|r| !r.converged).count();
    let report = CaseReport {
        case: case.id,
        outage: case.outage.clone(),
        train_rows: train.len(),
        test_rows: test.len(),
        non_converged,
        train_critical: l_train.iter().filter(|&&l| l == 1).count(),
        test_critical: l_test.iter().filter(|&&l| l == 1).count(),
        regression,
        factor_sweep,
        classifier_kind: cls_model.kind(),
        classification,
        classification_smote,
        smote,
        curtailed_regression,
        curtailed_factor_sweep,
        curtailed_classification,
        scenario_regression,
        comparison,
    };
    let models = (
        ModelFile::for_dataset(&reg, reg_model, seeds.regression)?,
        ModelFile::for_dataset(&cls, cls_model, seeds.classifier)?,
    );
    Ok(CaseOutcome {
        report,
        vm_abs: abs_errors(&y_hat, &y_test, 0..n_bus),
        loading_abs: abs_errors(&y_hat, &y_test, n_bus..y_test.ncols()),
        curtailed_vm_abs: abs_errors(&c_hat, &c_y, 0..n_bus),
        curtailed_loading_abs: abs_errors(&c_hat, &c_y, n_bus..c_y.ncols()),
        scenario_vm_abs: abs_errors(&s_hat, &y_test, 0..n_bus),
        scenario_loading_abs: abs_errors(&s_hat, &y_test, n_bus..y_test.ncols()),
        max_loading_true: row_max(&y_test, n_bus),
        max_loading_pred: row_max(&y_hat, n_bus),
        models,
        train_s,
        predict_s,
        predicted_samples: y_hat.nrows(),
    })
}

/// Sums confusion counts over cases, threshold by threshold.
fn aggregate_points(per_case: &[&[ThresholdPoint]]) -> Result<Vec<ThresholdPoint>> {
    let Some(first) = per_case.first() else {
        return Ok(Vec::new());
    };
    (0..first.len())
        .map(|k| {
            let counts: ConfusionCounts = per_case.iter().map(|pts| pts[k].metrics.counts).sum();
            Ok(ThresholdPoint {
                threshold: first[k].threshold,
                metrics: compute_metrics(counts)?,
            })
        })
        .collect()
}

fn pooled(a: Vec<f64>, b: Vec<f64>) -> RegressionErrors {
    RegressionErrors {
        vm_pu: error_stats(&a),
        loading_pct: error_stats(&b),
    }
}

fn point_at(points: &[ThresholdPoint], threshold: f64) -> Result<&ThresholdPoint> {
    points
        .iter()
        .find(|p| p.threshold == threshold)
        .ok_or_else(|| Error::InvalidArgument(format!("threshold {threshold} is not part of the sweep")))
}

fn res_curve(grid: &Grid, ts: &TimeSeries) -> Result<Vec<f64>> {
    let mut total = vec![0.0; ts.step_count];
    for g in grid.generators.iter().filter(|g| g.kind == InjectorKind::Res) {
        for (t, v) in ts.column(&g.profile_id)?.p.iter().enumerate() {
            total[t] += v * grid.base_mva;
        }
    }
    Ok(sorted_annual_curve(&total))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        for (name, v) in [
            ("probability", &self.probability_thresholds),
            ("loading factor", &self.loading_factors),
        ] {
            if v.is_empty() || v.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "{name} thresholds must be non-empty and ascending"
                )));
            }
        }
        point_ok(&self.probability_thresholds, self.probability_threshold)?;
        point_ok(&self.loading_factors, self.loading_factor)
    }
}

fn point_ok(v: &[f64], t: f64) -> Result<()> {
    if v.contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold {t} is not part of the sweep"
        )))
    }
}

pub fn run_pipeline(grid: &Grid, series: &TimeSeries, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let enumeration = enumerate_cases(grid);
    let cases = enumeration.cases.clone();
    let all_steps: Vec<usize> = (0..series.len()).collect();
    let split_seed = stage_seed(cfg.seed, STAGE_SPLIT, 0);
    let (train_steps, test_steps) = split_train_test(&all_steps, cfg.train_fraction, split_seed)?;
    log::info!(
        "{} cases, {} steps ({} train / {} test), split seed {split_seed}",
        cases.len(),
        all_steps.len(),
        train_steps.len(),
        test_steps.len()
    );

    let sweep_opts = SweepOptions {
        pf: cfg.pf,
        workers: cfg.workers,
    };
    let train_store = run_sweep(grid, series, &cases, &train_steps, &sweep_opts)?;
    let test_store = run_sweep(grid, series, &cases, &test_steps, &sweep_opts)?;
    let mut timings = PipelineTimings {
        sweep_train_s: train_store.timing.total_s,
        sweep_test_s: test_store.timing.total_s,
        ..Default::default()
    };
    let store = train_store.merge(test_store)?;
    timings.sweep_per_solve_s = store.timing.per_solve_mean_s;

    let curtailment = apply_curtailment(grid, series, cfg.curtail_fraction)?;
    log::info!("curtailment cap {:.4} of rating", curtailment.cap);
    let curtailed_store = run_sweep(grid, &curtailment.series, &cases, &test_steps, &sweep_opts)?;
    timings.sweep_curtailed_s = curtailed_store.timing.total_s;

    let scenario_seed = stage_seed(cfg.seed, STAGE_SCENARIO, 0);
    let scenarios = generate_scenarios(
        grid,
        &ScenarioConfig {
            samples: train_steps.len(),
            seed: scenario_seed,
            ..ScenarioConfig::default()
        },
    )?;
    let scenario_steps: Vec<usize> = (0..scenarios.len()).collect();
    let scenario_store = run_sweep(grid, &scenarios, &cases, &scenario_steps, &sweep_opts)?;
    timings.sweep_scenario_s = scenario_store.timing.total_s;

    let seeds = SeedLog {
        base: cfg.seed,
        split: split_seed,
        scenario: scenario_seed,
        cases: cases
            .iter()
            .map(|c| CaseSeeds {
                case: c.id,
                regression: stage_seed(cfg.seed, STAGE_REG, c.id),
                classifier: stage_seed(cfg.seed, STAGE_CLS, c.id),
                classifier_smote: stage_seed(cfg.seed, STAGE_CLS_SMOTE, c.id),
                smote: stage_seed(cfg.seed, STAGE_SMOTE, c.id),
                scenario_regression: stage_seed(cfg.seed, STAGE_SCEN_REG, c.id),
            })
            .collect(),
    };

    let ctx = Context {
        grid,
        series,
        curtailed: &curtailment.series,
        scenarios: &scenarios,
        store: &store,
        curtailed_store: &curtailed_store,
        scenario_store: &scenario_store,
        train_steps: &train_steps,
        cfg,
    };
    let jobs: Vec<(&ContingencyCase, &CaseSeeds)> = cases.iter().zip(&seeds.cases).collect();
    let outcomes: Vec<CaseOutcome> = if cfg.workers <= 1 {
        jobs.iter().map(|(c, s)| run_case(&ctx, c, s)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| {
            jobs.par_iter()
                .map(|(c, s)| run_case(&ctx, c, s))
                .collect::<Result<_>>()
        })?
    };

    let reports: Vec<&CaseReport> = outcomes.iter().map(|o| &o.report).collect();
    let collect = |f: fn(&CaseReport) -> &[ThresholdPoint]| -> Result<Vec<ThresholdPoint>> {
        aggregate_points(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
    };
    let flat =
        |f: fn(&CaseOutcome) -> &Vec<f64>| -> Vec<f64> { outcomes.iter().flat_map(|o| f(o).iter().copied()).collect() };

    let aggregate = AggregateReport {
        regression: pooled(flat(|o| &o.vm_abs), flat(|o| &o.loading_abs)),
        factor_sweep: collect(|r| &r.factor_sweep)?,
        classification: collect(|r| &r.classification)?,
        classification_smote: collect(|r| &r.classification_smote)?,
    };
    let curtailed = AggregateReport {
        regression: pooled(flat(|o| &o.curtailed_vm_abs), flat(|o| &o.curtailed_loading_abs)),
        factor_sweep: collect(|r| &r.curtailed_factor_sweep)?,
        classification: collect(|r| &r.curtailed_classification)?,
        classification_smote: Vec::new(),
    };
    let scenario_errors = pooled(flat(|o| &o.scenario_vm_abs), flat(|o| &o.scenario_loading_abs));

    let (pt, lf) = (cfg.probability_threshold, cfg.loading_factor);
    let reg_base = point_at(&aggregate.factor_sweep, lf)?.metrics;
    let cls_base = point_at(&aggregate.classification, pt)?.metrics;
    let cls_smote = point_at(&aggregate.classification_smote, pt)?.metrics;
    let reg_curt = point_at(&curtailed.factor_sweep, lf)?.metrics;
    let cls_curt = point_at(&curtailed.classification, pt)?.metrics;
    let table = vec![
        TableRow::from_metrics(format!("classification p>={pt}"), &cls_base),
        TableRow::from_metrics(format!("classification+smote p>={pt}"), &cls_smote),
        TableRow::from_metrics(format!("regression {lf}*I_limit"), &reg_base),
        TableRow::from_metrics(format!("curtailed classification p>={pt}"), &cls_curt),
        TableRow::from_metrics(format!("curtailed regression {lf}*I_limit"), &reg_curt),
    ];

    let ts_max = aggregate.regression.vm_pu.max;
    let sc_max = scenario_errors.vm_pu.max;
    let scenario_report = ScenarioReport {
        samples: scenarios.len(),
        non_converged: scenario_store.non_converged_count(),
        regression: scenario_errors,
        time_series_max_vm_error: ts_max,
        scenario_max_vm_error: sc_max,
        max_vm_error_ratio: if ts_max > 0.0 { sc_max / ts_max } else { f64::INFINITY },
    };

    let mut curves = BTreeMap::new();
    let base = &outcomes[0];
    curves.insert(
        "max_loading_true_base".to_string(),
        sorted_annual_curve(&base.max_loading_true),
    );
    curves.insert(
        "max_loading_pred_base".to_string(),
        sorted_annual_curve(&base.max_loading_pred),
    );
    curves.insert("p_res_uncurtailed_mw".to_string(), res_curve(grid, series)?);
    curves.insert("p_res_curtailed_mw".to_string(), res_curve(grid, &curtailment.series)?);

    timings.train_s = outcomes.iter().map(|o| o.train_s).sum();
    timings.predict_s = outcomes.iter().map(|o| o.predict_s).sum();
    let samples: usize = outcomes.iter().map(|o| o.predicted_samples).sum();
    timings.predict_per_sample_s = if samples > 0 {
        timings.predict_s / samples as f64
    } else {
        0.0
    };
    timings.total_s = start.elapsed().as_secs_f64();

    let report = PipelineReport {
        format: "gridml-report".into(),
        grid_hash: grid.content_hash(),
        config: cfg.clone(),
        seeds,
        cases: cases.clone(),
        islanding: enumeration.islanding.clone(),
        steps: all_steps.len(),
        train_steps: train_steps.clone(),
        records: store.records.len(),
        critical_records: store.critical_count(),
        per_case: outcomes.iter().map(|o| o.report.clone()).collect(),
        aggregate,
        curtailment: CurtailmentReport {
            summary: curtailment.summary,
            fraction: cfg.curtail_fraction,
            aggregate: curtailed,
            regression_accuracy_drop: reg_base.accuracy - reg_curt.accuracy,
            classification_accuracy_drop: cls_base.accuracy - cls_curt.accuracy,
        },
        scenario: scenario_report,
        table,
    };
    let models = outcomes.into_iter().map(|o| o.models).collect();
    Ok(PipelineOutput {
        report,
        timings,
        store,
        models,
        curves,
    })
}

impl PipelineOutput {
    /// Writes the report files, the sweep store and one regression and one
    /// classification model per case into `dir`.
    pub fn write(&self, dir: &Path) -> Result<EmittedFiles> {
        let files = emit_report(dir, &self.report, &self.report.table, &self.curves, Some(&self.timings))?;
        self.store.save(dir.join("store.jsonl"))?;
        let models = dir.join("models");
        std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        for (reg, cls) in &self.models {
            reg.save(models.join(format!("case{}_reg.json", reg.case)))?;
            cls.save(models.join(format!("case{}_cls.json", cls.case)))?;
        }
        Ok(files)
    }
}

/// Predicted labels of a classifier file at `threshold`.
pub fn classify_with(model: &ModelFile, x_raw: &DMatrix<f64>, threshold: f64) -> Result<Vec<i8>> {
    Ok(labels_from_proba(&model.predict_proba(x_raw)?, threshold))
}
