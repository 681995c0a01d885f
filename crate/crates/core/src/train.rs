//! Minibatch loop shared by every trained network.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Gradients, MlpModel};
use crate::rng::StreamRng;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Interpolation times are drawn from `[0, t_max)`.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_max() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1000,
            optimizer: AdamConfig::default(),
            t_max: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return Err(Error::Invalid(format!("t_max must lie in (0, 1], got {}", self.t_max)));
        }
        if !(self.optimizer.lr >= 0.0) {
            return Err(Error::Invalid("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean minibatch loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Called after every epoch with the weights the trainer would return.
pub type EpochObserver<'a, T> = dyn FnMut(&EpochRecord, &MlpModel<T>) -> Result<()> + 'a;

/// Runs `epochs` passes of shuffled minibatches over `n` items. `batch_loss`
/// maps a batch of item indices to a mean loss and its gradients.
///
/// Returns the EMA weights when EMA is enabled, otherwise the raw weights.
pub(crate) fn run_epochs<T, F>(
    model: &mut MlpModel<T>,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
    mut batch_loss: F,
    observer: &mut EpochObserver<'_, T>,
) -> Result<Vec<EpochRecord>>
where
    T: Scalar,
    F: FnMut(&MlpModel<T>, &[usize], &mut StreamRng) -> Result<(T, Gradients<T>)>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Invalid("no training items".into()));
    }
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches_per_epoch) as u64;
    let mut opt = AdamState::new(model, cfg.optimizer.clone(), total);
    let use_ema = cfg.optimizer.ema_decay > 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let lr = opt.current_lr();
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_loss(model, batch, rng)?;
            let loss = loss.as_f64();
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss,
                    last_good: model.params().iter().map(|p| p.as_f64()).collect(),
                });
            }
            opt.update(model, &grads)?;
            sum += loss * batch.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            loss: sum / n as f64,
            lr,
        };
        history.push(record);
        if use_ema {
            observer(&record, &opt.ema_model(model))?;
        } else {
            observer(&record, model)?;
        }
    }
    if use_ema && cfg.epochs > 0 {
        *model = opt.ema_model(model);
    }
    Ok(history)
}

/// Writes `epoch,loss,lr` rows.
pub fn write_loss_history<W: std::io::Write>(mut out: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,loss,lr")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.loss, r.lr)?;
    }
    Ok(())
}
