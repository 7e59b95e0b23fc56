//! Dataset splitting, label scaling, MSE loss, the Adam optimizer with
//! decoupled weight decay, and the epoch loop with best-validation
//! checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adp::AdpMatrix;
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::{Model, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

/// Training hyperparameters. Defaults: 50 epochs, learning rate 1e-3,
/// weight decay 1e-4, 64/16/20 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// (train, validation, test) fractions; must sum to 1.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
            split: (0.64, 0.16, 0.20),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let (a, b, c) = self.split;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be nonnegative and sum to 1, got {:?}",
                self.split
            )));
        }
        Ok(())
    }
}

/// Deterministic shuffle-then-cut split. Validation and test sizes are
/// floored; the remainder goes to train. Partitions are disjoint and
/// exhaustive.
pub fn split_dataset<T: Clone>(
    samples: &[T],
    split: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::Domain(format!(
            "need at least 5 samples to split, got {n}"
        )));
    }
    let n_val = (n as f64 * split.1).floor() as usize;
    let n_test = (n as f64 * split.2).floor() as usize;
    let n_train = n - n_val - n_test;
    for (name, frac, count) in [
        ("train", split.0, n_train),
        ("validation", split.1, n_val),
        ("test", split.2, n_test),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::Domain(format!(
                "{n} samples leave the {name} partition empty"
            )));
        }
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let train = indices[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let val = indices[n_train..n_train + n_val]
        .iter()
        .map(|&i| samples[i].clone())
        .collect();
    let test = indices[n_train + n_val..]
        .iter()
        .map(|&i| samples[i].clone())
        .collect();
    Ok((train, val, test))
}

/// Per-axis min-max scaler mapping meters to [0, 1], fit on the training
/// split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl LabelScaler {
    pub fn fit(positions: &[(f64, f64)]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("cannot fit a scaler on zero positions".into()));
        }
        let mut s = Self {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &(x, y) in positions {
            s.x_min = s.x_min.min(x);
            s.x_max = s.x_max.max(x);
            s.y_min = s.y_min.min(y);
            s.y_max = s.y_max.max(y);
        }
        Ok(s)
    }

    fn span(lo: f64, hi: f64) -> f64 {
        let d = hi - lo;
        if d > 0.0 {
            d
        } else {
            1.0
        }
    }

    pub fn transform(&self, p: (f64, f64)) -> (f64, f64) {
        (
            (p.0 - self.x_min) / Self::span(self.x_min, self.x_max),
            (p.1 - self.y_min) / Self::span(self.y_min, self.y_max),
        )
    }

    pub fn inverse(&self, p: (f64, f64)) -> (f64, f64) {
        (
            p.0 * Self::span(self.x_min, self.x_max) + self.x_min,
            p.1 * Self::span(self.y_min, self.y_max) + self.y_min,
        )
    }
}

/// Mean over batch and both coordinates of squared differences, recorded
/// on the tape.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// Plain-value MSE for reporting, same reduction as [`mse_loss`].
pub fn mse_value(pred: &[(f64, f64)], target: &[(f64, f64)]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "MSE needs equal lengths, got {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("MSE of an empty batch".into()));
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target) {
        acc += (p.0 - t.0) * (p.0 - t.0) + (p.1 - t.1) * (p.1 - t.1);
    }
    Ok(acc / (2.0 * pred.len() as f64))
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment buffers, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Completed step count.
    pub t: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect(),
            v: params.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect(),
            t: 0,
        }
    }
}

/// One optimizer step. Adam moments with bias correction at step `t`,
/// plus decoupled decay `p -= lr * wd * p` applied separately to decaying
/// parameters (weights; never biases or position embeddings).
///
/// Gradients must be finite; a NaN/Inf gradient aborts the step naming
/// the offending parameter.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (entry, grad) in params.entries().iter().zip(grads) {
        if grad.shape() != entry.value.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match parameter {} {:?}",
                grad.shape(),
                entry.name,
                entry.value.shape()
            )));
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                name: entry.name.clone(),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = config.learning_rate;
    let wd = config.weight_decay;

    for (i, entry) in params.entries_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let decay = if entry.decay { lr * wd } else { 0.0 };
        for (j, p) in entry.value.data_mut().iter_mut().enumerate() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            *p -= decay * *p;
        }
        if !entry.value.all_finite() {
            return Err(Error::NonFinite {
                what: "parameter",
                name: entry.name.clone(),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One labelled training example: ADP image plus position in meters.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub adp: AdpMatrix,
    pub position_m: (f64, f64),
}

/// Train/validation inputs with the scaler fit on the training split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
    pub scaler: LabelScaler,
}

impl PreparedData {
    /// Validates shape consistency and fits the label scaler on the
    /// training split only.
    pub fn new(train: Vec<TrainSample>, val: Vec<TrainSample>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Domain("training split is empty".into()));
        }
        let shape = (train[0].adp.rows(), train[0].adp.cols());
        for (i, s) in train.iter().chain(val.iter()).enumerate() {
            if (s.adp.rows(), s.adp.cols()) != shape {
                return Err(Error::Format(format!(
                    "sample {i} has ADP shape {}x{}, expected {}x{}",
                    s.adp.rows(),
                    s.adp.cols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        let scaler = LabelScaler::fit(&train.iter().map(|s| s.position_m).collect::<Vec<_>>())?;
        Ok(Self { train, val, scaler })
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_rmse_m: f64,
}

/// Outcome of a training run. `params` holds the weights from the epoch
/// with the best validation RMSE (the model is also left holding them).
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ParamSet,
    pub best_epoch: usize,
    pub best_val_rmse_m: f64,
    pub history: Vec<EpochRecord>,
    /// Set when the loss went non-finite and training stopped early with
    /// the last good parameters.
    pub aborted: bool,
}

/// Validation RMSE in meters.
pub fn validation_rmse<M: Model>(model: &M, val: &[TrainSample], scaler: &LabelScaler) -> Result<f64> {
    let mut preds = Vec::with_capacity(val.len());
    let mut targets = Vec::with_capacity(val.len());
    for sample in val {
        let p = model.predict(&sample.adp)?;
        preds.push(scaler.inverse(p));
        targets.push(sample.position_m);
    }
    metrics::rmse(&preds, &targets)
}

/// Runs the epoch loop: shuffle, batch, forward/backward, Adam step,
/// then a validation pass. Keeps the parameters from the epoch with the
/// best validation RMSE. A non-finite loss aborts with the last good
/// parameters.
pub fn train<M: Model>(model: &mut M, data: &PreparedData, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    if data.val.is_empty() {
        return Err(Error::Domain("validation split is empty".into()));
    }

    let mut state = AdamState::new(model.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_params = model.params().clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut aborted = false;

    'epochs: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_acc = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (loss_value, grads) = run_batch(model, &batch, &data.scaler)?;
            if !loss_value.is_finite() {
                aborted = true;
                break 'epochs;
            }
            match optimizer_step(model.params_mut(), &grads, &mut state, config) {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => {
                    aborted = true;
                    break 'epochs;
                }
                Err(other) => return Err(other),
            }
            loss_acc += loss_value * batch.len() as f64;
            seen += batch.len();
        }

        let train_mse = loss_acc / seen as f64;
        let val_rmse_m = validation_rmse(model, &data.val, &data.scaler)?;
        if !val_rmse_m.is_finite() {
            aborted = true;
            break;
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_rmse_m,
        });
        if val_rmse_m < best_val {
            best_val = val_rmse_m;
            best_epoch = epoch;
            best_params = model.params().clone();
        }
    }

    // Leave the model holding the best parameters.
    *model.params_mut() = best_params.clone();
    Ok(TrainResult {
        params: best_params,
        best_epoch,
        best_val_rmse_m: best_val,
        history,
        aborted,
    })
}

fn run_batch<M: Model>(
    model: &M,
    batch: &[&TrainSample],
    scaler: &LabelScaler,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let pv = model.params().lease(&mut tape);
    let mut preds = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len() * 2);
    for sample in batch {
        preds.push(model.forward_on(&mut tape, &pv, &sample.adp)?);
        let (tx, ty) = scaler.transform(sample.position_m);
        targets.push(tx);
        targets.push(ty);
    }
    let pred = tape.concat_rows(&preds)?;
    let target_leaf = tape.leaf(&Tensor::matrix(batch.len(), 2, targets)?);
    let loss = mse_loss(&mut tape, pred, target_leaf)?;
    let loss_value = tape.scalar_value(loss)?;
    let grads = tape.backward(loss)?;
    let grad_tensors = pv.iter().map(|&v| grads.get_or_zero(v, &tape)).collect();
    Ok((loss_value, grad_tensors))
}
