use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{mae_gradient, mae_loss, CnnModel, Gradients};
use crate::dataio::{make_windows, TimeSeriesFrame, WindowBatch};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Samples per gradient work unit; partial sums are reduced in unit order so
/// the result does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    /// Trailing fraction of the windows (in time order) held out for early
    /// stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 433,
            learning_rate: 1e-3,
            early_stop_patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and early_stop_patience must be positive".into(),
            ));
        }
        if self.early_stop_patience > self.epochs {
            return Err(Error::InvalidArgument("patience exceeds epoch budget".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub stopped_epoch: usize,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_validation_loss(&self) -> f64 {
        self.validation_loss[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.validation_loss).enumerate() {
            out.push_str(&format!("{},{t},{v}\n", i + 1));
        }
        out
    }
}

/// Stops once the monitored loss has failed to improve for `patience`
/// consecutive epochs (min-delta 0).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    /// Records one epoch's loss; returns `(improved, should_stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Summed loss and gradients over `indices`, computed in fixed-size chunks
/// and reduced in order. Dropout masks come from per-sample streams of
/// `dropout_seed`.
fn batch_gradients(
    model: &CnnModel,
    batch: &WindowBatch,
    indices: &[usize],
    dropout_seed: u64,
    offset: usize,
) -> Result<(f64, Gradients)> {
    let partials: Vec<Result<(f64, Gradients)>> = indices
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(chunk_no, chunk)| {
            let mut grads = Gradients::zeros_like(model);
            let mut loss = 0.0;
            for (k, &i) in chunk.iter().enumerate() {
                let position = offset + chunk_no * GRAD_CHUNK + k;
                let mut rng = SplitMix64::new(derive_seed(dropout_seed, position as u64));
                let trace = model.forward(batch.input(i), Some(&mut rng))?;
                loss += mae_loss(trace.output(), batch.target(i))?;
                model.backward(&trace, &mae_gradient(trace.output(), batch.target(i)), &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// Mean inference MAE over the windows in `indices`.
pub fn evaluate_loss(model: &CnnModel, batch: &WindowBatch, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<Result<f64>> = indices
        .par_iter()
        .map(|&i| mae_loss(&model.predict(batch.input(i))?, batch.target(i)))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / indices.len() as f64)
}

/// Mini-batch Adam on MAE with early stopping; restores the parameters of the
/// best validation epoch before returning.
pub fn train(model: &mut CnnModel, batch: &WindowBatch, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("training batch is empty".into()));
    }
    if batch.window() != model.window() || batch.channels() != model.channels() {
        return Err(Error::Shape(format!(
            "batch windows are {} x {}, model expects {} x {}",
            batch.window(),
            batch.channels(),
            model.window(),
            model.channels()
        )));
    }
    let n = batch.len();
    let n_val = if n >= 2 {
        ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let train_idx: Vec<usize> = (0..n - n_val).collect();
    let val_idx: Vec<usize> = (n - n_val..n).collect();

    let mut rng = SplitMix64::new(config.seed);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
    };
    let mut best_params = model.snapshot();

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        let dropout_seed = rng.next_u64();
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (loss, mut grads) =
                batch_gradients(model, batch, chunk, dropout_seed, b * config.batch_size)?;
            grads.scale(1.0 / chunk.len() as f64);
            model.adam_step(&grads, config.learning_rate)?;
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let monitored = if val_idx.is_empty() {
            evaluate_loss(model, batch, &train_idx)?
        } else {
            evaluate_loss(model, batch, &val_idx)?
        };
        if !monitored.is_finite() {
            return Err(Error::Numeric(format!("validation loss diverged at epoch {epoch}")));
        }
        history.train_loss.push(train_loss);
        history.validation_loss.push(monitored);
        history.stopped_epoch = epoch;
        log::debug!("epoch {epoch}: train {train_loss:.6} validation {monitored:.6}");

        let (improved, stop) = stopper.observe(monitored);
        if improved {
            best_params = model.snapshot();
        }
        if stop {
            break;
        }
    }
    model.restore(best_params);
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

/// Next-step predictions for every window of a (normalized) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesForecast {
    pub channels: usize,
    /// Row-major `len x channels`.
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub target_indices: Vec<usize>,
}

impl SeriesForecast {
    pub fn len(&self) -> usize {
        self.target_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_indices.is_empty()
    }

    pub fn prediction(&self, i: usize) -> &[f64] {
        &self.predictions[i * self.channels..(i + 1) * self.channels]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.channels..(i + 1) * self.channels]
    }
}

/// Inference over all windows of `frame`; prediction `i` forecasts absolute
/// row `target_indices[i]`.
pub fn predict_series(model: &CnnModel, frame: &TimeSeriesFrame, w: usize) -> Result<SeriesForecast> {
    if w != model.window() {
        return Err(Error::Shape(format!(
            "window {w} does not match model window {}",
            model.window()
        )));
    }
    let batch = make_windows(frame, w)?;
    let rows: Vec<Result<Vec<f64>>> = (0..batch.len())
        .into_par_iter()
        .map(|i| model.predict(batch.input(i)))
        .collect();
    let c = frame.channels();
    let mut predictions = Vec::with_capacity(batch.len() * c);
    let mut targets = Vec::with_capacity(batch.len() * c);
    for (i, row) in rows.into_iter().enumerate() {
        predictions.extend(row?);
        targets.extend_from_slice(batch.target(i));
    }
    Ok(SeriesForecast {
        channels: c,
        predictions,
        targets,
        target_indices: batch.target_indices().to_vec(),
    })
}
