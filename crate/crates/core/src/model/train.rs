//! Minibatch training and imputation.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adam_update, AdamState, Mas2s, Sequence};
use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { local_epochs: 20, batch_size: 32 }
    }
}

/// Run `epochs` passes of shuffled minibatch Adam. Returns the mean
/// training loss of each epoch.
pub fn train_local<R: Rng + ?Sized>(
    model: &Mas2s,
    params: &mut ModelParams,
    data: &[Sequence],
    epochs: usize,
    batch_size: usize,
    state: &mut AdamState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if epochs > 0 && data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grads) = model.loss_and_grad(params, &batch)?;
            adam_update(params, &grads, state)?;
            total += loss * chunk.len() as f64;
        }
        trace.push(total / data.len() as f64);
    }
    Ok(trace)
}

/// Complete a degraded window. Channel 0 carries the target variable and the
/// last channel the missing mask (1 = missing). With `overwrite`, observed
/// positions keep their observation and only missing ones come from the model.
pub fn impute(model: &Mas2s, params: &ModelParams, inputs: &[f64], overwrite: bool) -> Result<Vec<f64>> {
    let mut out = model.predict(params, inputs)?;
    if overwrite {
        let f = model.config().input_features;
        for (t, y) in out.iter_mut().enumerate() {
            let row = &inputs[t * f..(t + 1) * f];
            if row[f - 1] == 0.0 {
                *y = row[0];
            }
        }
    }
    Ok(out)
}
