//! Surrogate models for power-flow results: an MLP, ridge regression with
//! cross-validated strength, CART trees, random forests and k-NN, together
//! with a self-describing model file.

mod forest;
mod knn;
mod mlp;
mod ridge;
mod tree;

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureLayout, Mode, Scaler};
use crate::error::{Error, Result};
use crate::grid::OperatingLimits;
use crate::powerflow::state_label;

pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use knn::{fit_knn, KnnModel};
pub use mlp::{
    train_mlp, train_mlp_with_validation, validation_size, Activation, DenseLayer, LayerGradient, MlpConfig, MlpModel,
    MlpTask, TrainingLog,
};
pub use ridge::{fit_ridge, fit_ridge_cv, RidgeModel, DEFAULT_ALPHAS};
pub use tree::{fit_tree, fit_tree_on, MaxFeatures, Node, TreeConfig, TreeModel, TreeTask};

/// Classification operating threshold on the critical-class probability.
pub const DEFAULT_PROBABILITY_THRESHOLD: f64 = 0.2;
/// Loading factors applied when regression outputs are turned into labels.
pub const DEFAULT_LOADING_FACTORS: [f64; 4] = [0.94, 0.96, 0.98, 1.0];

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Regression(&'a DMatrix<f64>),
    /// Labels in {+1, -1}.
    Classification(&'a [i8]),
}

impl Target<'_> {
    pub fn len(&self) -> usize {
        match self {
            Target::Regression(y) => y.nrows(),
            Target::Classification(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        match self {
            Target::Regression(_) => Mode::Regression,
            Target::Classification(_) => Mode::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Ridge,
    Tree,
    Forest,
    Knn,
    Constant,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp" => ModelKind::Mlp,
            "ridge" => ModelKind::Ridge,
            "tree" => ModelKind::Tree,
            "forest" => ModelKind::Forest,
            "knn" => ModelKind::Knn,
            "constant" => ModelKind::Constant,
            other => return Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Ridge => "ridge",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Knn => "knn",
            ModelKind::Constant => "constant",
        };
        f.write_str(s)
    }
}

/// Hyperparameters for every model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mlp: MlpConfig,
    pub ridge_alphas: Vec<f64>,
    pub ridge_folds: usize,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub knn_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mlp: MlpConfig::default(),
            ridge_alphas: DEFAULT_ALPHAS.to_vec(),
            ridge_folds: 5,
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            knn_k: 5,
        }
    }
}

/// Predicts the same output for every input. Used when a classification
/// training set holds a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantModel {
    /// Regression outputs, or `[p_critical]`.
    pub value: Vec<f64>,
    pub classification: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SurrogateModel {
    Mlp(MlpModel),
    Ridge(RidgeModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Knn(KnnModel),
    Constant(ConstantModel),
    /// Two regressors of one kind, one for the voltage columns and one for
    /// the loading columns.
    Heads(SplitHeads),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHeads {
    pub n_vm: usize,
    pub vm: Box<SurrogateModel>,
    pub loading: Box<SurrogateModel>,
}

impl SurrogateModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SurrogateModel::Mlp(_) => ModelKind::Mlp,
            SurrogateModel::Ridge(_) => ModelKind::Ridge,
            SurrogateModel::Tree(_) => ModelKind::Tree,
            SurrogateModel::Forest(_) => ModelKind::Forest,
            SurrogateModel::Knn(_) => ModelKind::Knn,
            SurrogateModel::Constant(_) => ModelKind::Constant,
            SurrogateModel::Heads(h) => h.vm.kind(),
        }
    }

    pub fn constant_for(target: Target<'_>) -> SurrogateModel {
        let classification = matches!(target, Target::Classification(_));
        let value = match target {
            Target::Regression(y) => {
                let n = y.nrows().max(1) as f64;
                y.column_iter().map(|c| c.sum() / n).collect()
            }
            Target::Classification(y) => {
                let pos = y.iter().filter(|&&l| l == 1).count();
                vec![pos as f64 / y.len().max(1) as f64]
            }
        };
        SurrogateModel::Constant(ConstantModel { value, classification })
    }

    /// Raw outputs: regression targets, or a single critical-probability
    /// column.
    fn outputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SurrogateModel::Mlp(m) => m.predict(x),
            SurrogateModel::Ridge(m) => m.predict(x),
            SurrogateModel::Tree(m) => match m.task {
                TreeTask::Regression => m.predict_values(x),
                TreeTask::Classification => m.predict_values(x).columns(1, 1).into_owned(),
            },
            SurrogateModel::Forest(m) => match m.trees[0].task {
                TreeTask::Regression => m.predict_values(x),
                TreeTask::Classification => m.predict_values(x).columns(1, 1).into_owned(),
            },
            SurrogateModel::Knn(m) => m.predict_values(x),
            SurrogateModel::Constant(c) => DMatrix::from_fn(x.nrows(), c.value.len(), |_, j| c.value[j]),
            SurrogateModel::Heads(h) => {
                let (vm, loading) = (h.vm.outputs(x), h.loading.outputs(x));
                let mut out = DMatrix::zeros(x.nrows(), vm.ncols() + loading.ncols());
                out.columns_mut(0, vm.ncols()).copy_from(&vm);
                out.columns_mut(vm.ncols(), loading.ncols()).copy_from(&loading);
                out
            }
        }
    }

    fn is_classifier(&self) -> bool {
        match self {
            SurrogateModel::Mlp(m) => m.task == MlpTask::Binary,
            SurrogateModel::Ridge(_) => false,
            SurrogateModel::Tree(m) => m.task == TreeTask::Classification,
            SurrogateModel::Forest(m) => m.trees[0].task == TreeTask::Classification,
            SurrogateModel::Knn(m) => m.classification,
            SurrogateModel::Constant(c) => c.classification,
            SurrogateModel::Heads(_) => false,
        }
    }
}

/// Trains one model of the requested kind on scaled features.
pub fn train_model(
    kind: ModelKind,
    x: &DMatrix<f64>,
    target: Target<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SurrogateModel> {
    if target.is_empty() || x.nrows() != target.len() {
        return Err(Error::Model(
            "features and targets must be non-empty and aligned".into(),
        ));
    }
    Ok(match kind {
        ModelKind::Mlp => SurrogateModel::Mlp(train_mlp(x, target, &cfg.mlp, seed)?),
        ModelKind::Ridge => match target {
            Target::Regression(y) => {
                let folds = cfg.ridge_folds.min(x.nrows());
                SurrogateModel::Ridge(fit_ridge_cv(x, y, &cfg.ridge_alphas, folds, seed)?)
            }
            Target::Classification(_) => return Err(Error::Model("ridge supports regression targets only".into())),
        },
        ModelKind::Tree => SurrogateModel::Tree(fit_tree(x, target, &cfg.tree, seed)?),
        ModelKind::Forest => SurrogateModel::Forest(fit_forest(x, target, &cfg.forest, seed)?),
        ModelKind::Knn => SurrogateModel::Knn(fit_knn(x, target, cfg.knn_k.min(x.nrows()))?),
        ModelKind::Constant => SurrogateModel::constant_for(target),
    })
}

/// Fits separate regressors for the first `n_vm` target columns and for the
/// rest, both with the same seed.
pub fn train_separate_heads(
    kind: ModelKind,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    n_vm: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SurrogateModel> {
    if n_vm == 0 || n_vm >= y.ncols() {
        return Err(Error::Model(format!(
            "cannot split {} target columns after column {n_vm}",
            y.ncols()
        )));
    }
    let vm_y = y.columns(0, n_vm).into_owned();
    let loading_y = y.columns(n_vm, y.ncols() - n_vm).into_owned();
    let vm = train_model(kind, x, Target::Regression(&vm_y), cfg, seed)?;
    let loading = train_model(kind, x, Target::Regression(&loading_y), cfg, seed)?;
    Ok(SurrogateModel::Heads(SplitHeads {
        n_vm,
        vm: Box::new(vm),
        loading: Box::new(loading),
    }))
}

/// Regression output, columns `[vm per bus | loading per line]`.
pub fn predict_regression(model: &SurrogateModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if model.is_classifier() {
        return Err(Error::Model(format!("{} model is a classifier", model.kind())));
    }
    Ok(model.outputs(x))
}

/// Class probabilities per row as `[p_uncritical, p_critical]`.
pub fn predict_proba(model: &SurrogateModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !model.is_classifier() {
        return Err(Error::Model(format!("{} model is a regressor", model.kind())));
    }
    let p = model.outputs(x);
    Ok(DMatrix::from_fn(x.nrows(), 2, |i, j| {
        let pc = p[(i, 0)].clamp(0.0, 1.0);
        if j == 1 {
            pc
        } else {
            1.0 - pc
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum PredictionThreshold {
    /// Critical iff `p_critical >= value`.
    Probability(f64),
    /// Critical iff any predicted loading exceeds `value * i_limit_pct`.
    LoadingFactor(f64),
}

impl PredictionThreshold {
    pub fn validate(self) -> Result<Self> {
        match self {
            PredictionThreshold::Probability(p) if !(p > 0.0 && p < 1.0) => Err(Error::InvalidArgument(format!(
                "probability threshold {p} must lie in (0, 1)"
            ))),
            PredictionThreshold::LoadingFactor(f) if !(f > 0.0 && f <= 1.2) => Err(Error::InvalidArgument(format!(
                "loading factor {f} must lie in (0, 1.2]"
            ))),
            t => Ok(t),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            PredictionThreshold::Probability(v) | PredictionThreshold::LoadingFactor(v) => v,
        }
    }
}

pub fn labels_from_proba(proba: &DMatrix<f64>, threshold: f64) -> Vec<i8> {
    (0..proba.nrows())
        .map(|i| if proba[(i, 1)] >= threshold { 1 } else { -1 })
        .collect()
}

/// Labels regression outputs: critical iff any loading exceeds
/// `factor * i_limit_pct` or any voltage leaves the band.
pub fn classify_from_regression(y_hat: &DMatrix<f64>, n_bus: usize, limits: &OperatingLimits, factor: f64) -> Vec<i8> {
    let scaled = OperatingLimits {
        i_limit_pct: factor * limits.i_limit_pct,
        ..*limits
    };
    let mut vm = vec![0.0; n_bus];
    let mut loading = vec![0.0; y_hat.ncols().saturating_sub(n_bus)];
    (0..y_hat.nrows())
        .map(|i| {
            for (j, v) in vm.iter_mut().enumerate() {
                *v = y_hat[(i, j)];
            }
            for (j, l) in loading.iter_mut().enumerate() {
                *l = y_hat[(i, n_bus + j)];
            }
            state_label(&vm, &loading, &scaled)
        })
        .collect()
}

pub const MODEL_FORMAT: &str = "gridml-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    /// Contingency case position the model was trained for.
    pub case: usize,
    pub layout: FeatureLayout,
    /// Extra one-hot case columns appended by multi-case datasets.
    #[serde(default)]
    pub extra_features: Vec<String>,
    pub scaler: Scaler,
    pub n_bus: usize,
    pub n_line: usize,
    pub seed: u64,
    pub model: SurrogateModel,
}

impl ModelFile {
    /// Wraps a model trained on `ds` together with the dataset's layout and
    /// training scaler.
    pub fn for_dataset(ds: &Dataset, model: SurrogateModel, seed: u64) -> Result<ModelFile> {
        let scaler = ds
            .scaler
            .clone()
            .ok_or_else(|| Error::Model("dataset has no fitted scaler".into()))?;
        Ok(ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            mode: ds.mode,
            case: ds.case,
            layout: ds.layout.clone(),
            extra_features: Vec::new(),
            scaler,
            n_bus: ds.n_bus,
            n_line: ds.n_line,
            seed,
            model,
        })
    }

    pub fn n_features(&self) -> usize {
        self.layout.len() + self.extra_features.len()
    }

    /// Scales raw features and predicts regression outputs.
    pub fn predict_regression(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        predict_regression(&self.model, &self.scale(x_raw)?)
    }

    pub fn predict_proba(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        predict_proba(&self.model, &self.scale(x_raw)?)
    }

    fn scale(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.n_features() {
            return Err(Error::Model(format!(
                "feature layout mismatch: model expects {} columns, got {}",
                self.n_features(),
                x_raw.ncols()
            )));
        }
        self.scaler.transform(x_raw)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let m: ModelFile = serde_json::from_reader(BufReader::new(f))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "{}: unsupported model file {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}
