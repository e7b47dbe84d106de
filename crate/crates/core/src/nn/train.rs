use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_model, Adam, Mode, Network, Tensor, TrainingSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// When set, the model is written to `<dir>/epoch_NNN.rfnn` after each epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, lr: 1e-5, lr_decay: 1.0, batch_size: 8, seed: 0, checkpoint_dir: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss in normalised label units.
    pub train_loss: f64,
    /// Validation mean squared error in mm^2.
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_val_mse: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn final_val_mse(&self) -> f64 {
        self.epochs.last().map_or(self.initial_val_mse, |e| e.val_mse)
    }
}

fn batch_tensor(net: &Network, samples: &[&TrainingSample]) -> Result<Tensor> {
    let [c, d, h, w] = net.spec().input;
    let per = c * d * h * w;
    let mut data = Vec::with_capacity(per * samples.len());
    for s in samples {
        if s.input.len() != per {
            return Err(Error::shape(format!("sample has {} values, network input needs {per}", s.input.len())));
        }
        data.extend(s.input.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![samples.len(), c, d, h, w], data)
}

/// Eval-mode mean squared error in mm^2.
pub fn evaluate_mse(net: &Network, samples: &[TrainingSample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let scale = net.spec().label_scale;
    let mut sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainingSample> = chunk.iter().collect();
        let out = net.predict_batch(&batch_tensor(net, &refs)?)?;
        for (o, s) in out.iter().zip(chunk) {
            sum += (o * scale - s.label).powi(2);
        }
    }
    Ok(sum / samples.len() as f64)
}

/// One optimiser step on a batch; returns the batch loss in normalised units.
pub fn train_step(net: &mut Network, adam: &mut Adam, batch: &[&TrainingSample]) -> Result<f64> {
    let scale = net.spec().label_scale;
    let x = batch_tensor(net, batch)?;
    let cache = net.forward(&x, Mode::Train)?;
    let out = cache.output().data();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch.len());
    for (o, s) in out.iter().zip(batch) {
        let r = o - s.label / scale;
        loss += r * r / n;
        grad.push(2.0 * r / n);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss after {} steps (outputs {out:?})", adam.steps_taken())));
    }
    let grad = Tensor::new(vec![batch.len(), 1], grad)?;
    let (grads, _) = net.backward(&cache, &grad)?;
    adam.step(net, &grads);
    net.update_running_stats(&cache);
    Ok(loss)
}

/// Trains with Adam on the mean squared TRE error.
///
/// `on_epoch` sees each epoch's log line as it completes.
pub fn train(
    net: &mut Network,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainingLog> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    if !(cfg.lr > 0.0 && cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(Error::config("lr must be positive and lr_decay in (0, 1]"));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut adam = Adam::new(cfg.lr);
    let mut log = TrainingLog {
        initial_val_mse: evaluate_mse(net, val_set, cfg.batch_size)?,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            // A single-sample batch has no batch statistics to speak of.
            if idx.len() < 2 && train_set.len() >= 2 {
                continue;
            }
            let batch: Vec<&TrainingSample> = idx.iter().map(|&i| &train_set[i]).collect();
            total += train_step(net, &mut adam, &batch).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
            batches += 1;
        }
        adam.lr *= cfg.lr_decay;
        let entry = EpochLog {
            epoch,
            train_loss: total / batches.max(1) as f64,
            val_mse: evaluate_mse(net, val_set, cfg.batch_size)?,
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            save_model(dir.join(format!("epoch_{epoch:03}.rfnn")), net)?;
        }
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok(log)
}
