use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rng, AdamState, MlpModel, STREAM_SHUFFLE, STREAM_SPLIT};
use crate::data::{FeatureFrame, MinMaxScaler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Multiplier applied once per epoch after `decay_after` epochs.
    pub lr_decay: f64,
    pub decay_after: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Share of rows held out for validation and testing.
    pub test_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            initial_lr: 0.001,
            lr_decay: 0.99,
            decay_after: 15,
            patience: 15,
            test_fraction: 0.2,
            seed: 64,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("epochs, batch size and patience must be positive");
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate must be positive and decay in (0, 1]");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test fraction must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam constants out of range");
        }
        Ok(())
    }
}

/// Learning rate used during 1-based epoch `epoch`.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch <= cfg.decay_after {
        cfg.initial_lr
    } else {
        cfg.initial_lr * cfg.lr_decay.powi((epoch - cfg.decay_after) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Scaled MSE over the training rows after the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    /// Scaled MSE on the held-out rows with the kept weights.
    pub test_mse: f64,
}

/// Seeded shuffle split; both index lists come back sorted.
pub fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed, STREAM_SPLIT));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Trains `model` on `frame` from its current weights.
///
/// The scaler is refitted on the training rows. The held-out rows double as
/// the early-stopping validation set, and the best epoch's weights are kept.
pub fn train(mut model: MlpModel, frame: &FeatureFrame, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let n = frame.len();
    if n < 2 * cfg.batch_size {
        return Err(Error::Empty(format!(
            "training needs at least {} rows, frame has {n}",
            2 * cfg.batch_size
        )));
    }
    let (train_rows, test_rows) = split_rows(n, cfg.test_fraction, cfg.seed);

    let target = model.topology.target.clone();
    let mut cols = model.topology.input_columns();
    cols.push(&target);
    let train_frame = frame.take_rows(&train_rows);
    model.scaler = MinMaxScaler::fit_allow_constant(&train_frame, &cols)?;

    let width = model.topology.input_width();
    let x = model.scaled_inputs(frame)?;
    let y: Vec<f64> = frame
        .column(&target)?
        .iter()
        .map(|&v| model.scaler.scale_value(&target, v))
        .collect::<Result<_>>()?;
    let row = |i: usize| &x[i * width..(i + 1) * width];
    let gather = |rows: &[usize]| -> (Vec<&[f64]>, Vec<f64>) { (rows.iter().map(|&i| row(i)).collect(), rows.iter().map(|&i| y[i]).collect()) };
    let (train_x, train_y) = gather(&train_rows);
    let (test_x, test_y) = gather(&test_rows);

    let n_params = model.params.len();
    let mut ws = model.workspace();
    let mut grad = vec![0.0; n_params];
    let mut order = train_rows.clone();
    let mut shuffle_rng = rng(cfg.seed, STREAM_SHUFFLE);

    let mut best_val = model.loss_with(&model.params, &test_x, &test_y);
    let mut best = (model.params.clone(), model.adam.clone());
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| row(i)).collect();
            let by: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.accumulate_gradient(&model.params, &bx, &by, &mut grad, &mut ws);
            adam_step(&mut model.params, &mut model.adam, &grad, lr, cfg);
        }
        let train_loss = model.loss_with(&model.params, &train_x, &train_y);
        let val_loss = model.loss_with(&model.params, &test_x, &test_y);
        log::debug!("epoch {epoch}: lr {lr:.6e} train {train_loss:.6e} val {val_loss:.6e}");
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = (model.params.clone(), model.adam.clone());
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }

    (model.params, model.adam) = best;
    model.history = history;
    Ok(Trained {
        model,
        train_rows,
        test_rows,
        best_epoch,
        test_mse: best_val,
    })
}

fn adam_step(params: &mut [f64], st: &mut AdamState, grad: &[f64], lr: f64, cfg: &TrainConfig) {
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, m), v), g) in params.iter_mut().zip(&mut st.m).zip(&mut st.v).zip(grad) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
    }
}
