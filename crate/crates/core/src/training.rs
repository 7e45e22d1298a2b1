//! Mini-batch training with early stopping on a validation score.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, Gradients, Optimizer, OptimizerState, ParamStore};
use crate::error::{GsanError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::default(),
            epochs: 100,
            patience: 20,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(GsanError::InvalidConfig {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("training.batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("training.epochs", "must be at least 1");
        }
        let lr = match self.optimizer {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return bad("training.optimizer.lr", "must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Mean loss and mean gradients over `items`, each evaluated independently
/// (in parallel) and reduced in item order.
pub fn mean_gradients<F>(store: &ParamStore, items: &[usize], f: F) -> Result<(f64, Gradients)>
where
    F: Fn(usize) -> Result<(f64, Gradients)> + Sync,
{
    let parts: Vec<(f64, Gradients)> = items.par_iter().map(|&i| f(i)).collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(store);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g)?;
    }
    let n = items.len().max(1) as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Trains `store` in place. Each epoch shuffles `0..n_items` into batches
/// and calls `batch` for their loss and gradients; `validate` scores the
/// parameters after every epoch (higher is better). The last of the
/// best-scoring parameters are restored at the end.
pub fn fit<B, V>(
    store: &mut ParamStore,
    config: &TrainConfig,
    n_items: usize,
    rng: &mut ChaCha8Rng,
    mut batch: B,
    mut validate: V,
) -> Result<History>
where
    B: FnMut(&ParamStore, &[usize], &mut ChaCha8Rng) -> Result<(f64, Gradients)>,
    V: FnMut(&ParamStore) -> Result<f64>,
{
    config.validate()?;
    let mut state = OptimizerState::new(config.optimizer, store);
    let mut best = (store.clone(), f64::NEG_INFINITY, 0);
    let mut epochs = Vec::new();
    let mut since = 0;
    let mut order: Vec<usize> = (0..n_items).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let (loss, grads) = batch(store, chunk, rng)?;
            grads.check_finite(store)?;
            optimizer_step(store, &grads, &mut state)?;
            total += loss;
            batches += 1;
        }
        let val = validate(store)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / batches.max(1) as f64,
            val_score: val,
        });
        // Ties move the restore point forward without resetting patience.
        since = if val > best.1 { 0 } else { since + 1 };
        if val >= best.1 {
            best = (store.clone(), val, epoch);
        }
        if since >= config.patience {
            break;
        }
    }
    *store = best.0;
    Ok(History {
        epochs,
        best_epoch: best.2,
        best_val: best.1,
    })
}
