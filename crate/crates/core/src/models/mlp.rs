//! Fully connected feed-forward network trained with mini-batch Adam.
//!
//! Regression uses a linear output layer and half mean squared error on
//! internally standardized targets; binary classification uses a single
//! logistic output and log-loss. Both add an L2 penalty
//! `alpha / (2 n) * sum(W^2)` over the weight matrices.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::dataset::{fit_scaler, Scaler};
use crate::error::{Error, Result};

/// Weight and bias gradients of one layer.
pub type LayerGradient = (DMatrix<f64>, Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpTask {
    Regression,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of training rows held out for early stopping. Disabled below
    /// 10 training rows.
    pub validation_fraction: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![100, 100],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            validation_fraction: 0.1,
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `inputs × outputs`.
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub task: MlpTask,
    pub activation: Activation,
    pub alpha: f64,
    pub layers: Vec<DenseLayer>,
    /// Regression targets are learned in standardized form.
    pub target_scaler: Option<Scaler>,
    pub log: TrainingLog,
}

fn add_bias(z: &mut DMatrix<f64>, bias: &[f64]) {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpModel {
    /// Glorot-uniform initialisation.
    pub fn init(n_in: usize, n_out: usize, task: MlpTask, config: &MlpConfig, rng: &mut ChaCha8Rng) -> MlpModel {
        let mut sizes = vec![n_in];
        sizes.extend(&config.hidden);
        sizes.push(n_out);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = if task == MlpTask::Binary && l == sizes.len() - 2 {
                    2.0
                } else {
                    6.0
                };
                let bound = (gain / (fan_in + fan_out) as f64).sqrt();
                DenseLayer {
                    weights: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
                    bias: (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        MlpModel {
            task,
            activation: config.activation,
            alpha: config.alpha,
            layers,
            target_scaler: None,
            log: TrainingLog::default(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    /// Activations of every layer; the last entry is the network output
    /// (linear for regression, probability for binary).
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            let mut z = input * &layer.weights;
            add_bias(&mut z, &layer.bias);
            if l < last {
                z.apply(|v| *v = self.activation.apply(*v));
            } else if self.task == MlpTask::Binary {
                z.apply(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        acts
    }

    /// Raw network outputs (standardized targets or probabilities).
    pub fn forward_output(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).pop().expect("network has layers")
    }

    /// Encodes a training target into the space the loss is computed in.
    pub fn encode_target(&self, target: Target<'_>) -> Result<DMatrix<f64>> {
        match (self.task, target) {
            (MlpTask::Regression, Target::Regression(y)) => match &self.target_scaler {
                Some(s) => s.transform(y),
                None => Ok(y.clone()),
            },
            (MlpTask::Binary, Target::Classification(y)) => Ok(DMatrix::from_iterator(
                y.len(),
                1,
                y.iter().map(|&l| if l == 1 { 1.0 } else { 0.0 }),
            )),
            _ => Err(Error::Model("target kind does not match the network task".into())),
        }
    }

    fn data_loss(&self, out: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        match self.task {
            MlpTask::Regression => (out - y).norm_squared() / (2.0 * y.len() as f64),
            MlpTask::Binary => {
                let eps = 1e-12;
                let n = y.nrows() as f64;
                out.iter()
                    .zip(y.iter())
                    .map(|(&p, &t)| {
                        let p = p.clamp(eps, 1.0 - eps);
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum::<f64>()
                    / n
            }
        }
    }

    fn penalty(&self, n: usize) -> f64 {
        let sq: f64 = self.layers.iter().map(|l| l.weights.norm_squared()).sum();
        self.alpha * sq / (2.0 * n as f64)
    }

    /// Training objective (data loss plus L2 penalty) on encoded targets.
    pub fn objective(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let out = self.forward_output(x);
        self.data_loss(&out, y) + self.penalty(x.nrows())
    }

    /// Objective and its gradient by backpropagation, per layer as
    /// `(dW, db)`.
    pub fn backprop(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<LayerGradient>) {
        let n = x.nrows();
        let acts = self.forward(x);
        let out = acts.last().expect("network has layers");
        let loss = self.data_loss(out, y) + self.penalty(n);

        // output delta: both loss/output pairs reduce to (out - y) / scale
        let scale = match self.task {
            MlpTask::Regression => y.len() as f64,
            MlpTask::Binary => n as f64,
        };
        let mut delta = (out - y) / scale;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            let mut dw = input.transpose() * &delta;
            dw += &self.layers[l].weights * (self.alpha / n as f64);
            let db: Vec<f64> = delta.column_iter().map(|c| c.sum()).collect();
            if l > 0 {
                let mut next = &delta * self.layers[l].weights.transpose();
                let a_prev = &acts[l - 1];
                next.zip_apply(a_prev, |d, a| *d *= self.activation.derivative(a));
                delta = next;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = params[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[k];
                k += 1;
            }
        }
    }

    pub fn flat_gradient(grads: &[LayerGradient]) -> Vec<f64> {
        let mut out = Vec::new();
        for (dw, db) in grads {
            out.extend(dw.iter());
            out.extend(db);
        }
        out
    }

    /// Predictions in target units: regression outputs, or the critical-class
    /// probability as a single column.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let out = self.forward_output(x);
        match (&self.task, &self.target_scaler) {
            (MlpTask::Regression, Some(s)) => s.inverse_transform(&out),
            _ => out,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &MlpConfig) {
        self.t += 1;
        let lr = cfg.learning_rate * (1.0 - cfg.beta2.powi(self.t)).sqrt() / (1.0 - cfg.beta1.powi(self.t));
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * self.m[i] / (self.v[i].sqrt() + cfg.epsilon);
        }
    }
}

fn check_inputs(x: &DMatrix<f64>, target: Target<'_>, config: &MlpConfig) -> Result<(MlpTask, usize)> {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(Error::Model("empty training input".into()));
    }
    if target.len() != n {
        return Err(Error::Model("feature and target row counts differ".into()));
    }
    if config.batch_size == 0 || config.hidden.contains(&0) {
        return Err(Error::Model("batch size and hidden sizes must be positive".into()));
    }
    match target {
        Target::Regression(y) => Ok((MlpTask::Regression, y.ncols())),
        Target::Classification(y) => {
            let pos = y.iter().filter(|&&l| l == 1).count();
            if pos == 0 || pos == y.len() {
                return Err(Error::Model(
                    "classification needs at least one sample per class".into(),
                ));
            }
            Ok((MlpTask::Binary, 1))
        }
    }
}

fn init_model(x: &DMatrix<f64>, target: Target<'_>, config: &MlpConfig, rng: &mut ChaCha8Rng) -> Result<MlpModel> {
    let (task, n_out) = check_inputs(x, target, config)?;
    let mut model = MlpModel::init(x.ncols(), n_out, task, config, rng);
    if let Target::Regression(y) = target {
        model.target_scaler = Some(fit_scaler(y)?);
    }
    Ok(model)
}

/// Size of the early-stopping slice for `n` training rows.
pub fn validation_size(n: usize, fraction: f64) -> usize {
    if n >= 10 && fraction > 0.0 {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    }
}

/// Trains a network on scaled features, holding out a random validation
/// slice for early stopping. Deterministic for a given seed.
pub fn train_mlp(x: &DMatrix<f64>, target: Target<'_>, config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = init_model(x, target, config, &mut rng)?;
    let y_all = model.encode_target(target)?;
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (val_idx, fit_idx) = order.split_at(validation_size(n, config.validation_fraction));
    let x_val = x.select_rows(val_idx.iter());
    let y_val = y_all.select_rows(val_idx.iter());
    fit_loop(
        &mut model,
        x,
        &y_all,
        fit_idx.to_vec(),
        &x_val,
        &y_val,
        config,
        &mut rng,
    )?;
    Ok(model)
}

/// Trains on all of `x` and stops early on an explicit validation set.
pub fn train_mlp_with_validation(
    x: &DMatrix<f64>,
    target: Target<'_>,
    x_val: &DMatrix<f64>,
    target_val: Target<'_>,
    config: &MlpConfig,
    seed: u64,
) -> Result<MlpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = init_model(x, target, config, &mut rng)?;
    if x_val.ncols() != x.ncols() || target_val.len() != x_val.nrows() {
        return Err(Error::Model("validation set does not match the training layout".into()));
    }
    let y_all = model.encode_target(target)?;
    let y_val = model.encode_target(target_val)?;
    fit_loop(
        &mut model,
        x,
        &y_all,
        (0..x.nrows()).collect(),
        x_val,
        &y_val,
        config,
        &mut rng,
    )?;
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn fit_loop(
    model: &mut MlpModel,
    x: &DMatrix<f64>,
    y_all: &DMatrix<f64>,
    mut train_idx: Vec<usize>,
    x_val: &DMatrix<f64>,
    y_val: &DMatrix<f64>,
    config: &MlpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let has_val = x_val.nrows() > 0;
    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len());
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        train_idx.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let xb = x.select_rows(batch.iter());
            let yb = y_all.select_rows(batch.iter());
            let (loss, grads) = model.backprop(&xb, &yb);
            if !loss.is_finite() {
                return Err(Error::Model(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut params, &MlpModel::flat_gradient(&grads), config);
            model.set_flat_params(&params);
        }
        epoch_loss /= train_idx.len() as f64;
        model.log.train_loss.push(epoch_loss);

        let monitored = if has_val {
            let out = model.forward_output(x_val);
            let v = model.data_loss(&out, y_val);
            model.log.validation_loss.push(v);
            v
        } else {
            epoch_loss
        };
        if !monitored.is_finite() {
            return Err(Error::Model(format!("non-finite loss at epoch {epoch}")));
        }
        if monitored < best.0 - 1e-10 {
            best = (monitored, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.set_flat_params(&best.1);
    model.log.best_epoch = best.2;
    if model.flat_params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Model("training produced non-finite parameters".into()));
    }
    Ok(())
}
