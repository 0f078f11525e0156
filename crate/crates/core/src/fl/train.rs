//! Local training (mini-batch SGD with momentum, optional proximal term) and
//! evaluation helpers.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{argmax, clip_in_place, Mlp, ModelParams};
use crate::error::Result;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalVariant {
    Plain,
    /// FedProx: adds (mu/2)·‖w − w_init‖² to the local objective.
    Prox { mu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub variant: LocalVariant,
}

impl Default for LocalTraining {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.01, momentum: 0.9, batch_size: 64, variant: LocalVariant::Plain }
    }
}

pub fn train_local(
    mlp: &Mlp,
    init: &ModelParams,
    shard: &Dataset,
    cfg: &LocalTraining,
    seed_value: u64,
) -> Result<ModelParams> {
    mlp.check(init)?;
    let mut model = init.clone();
    let mut velocity = vec![0.0; model.len()];
    let mut grad = vec![0.0; model.len()];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut rng = seed::rng(seed_value);
    let batch = cfg.batch_size.max(1);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| shard.features(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| shard.label(i)).collect();
            mlp.accumulate_grad(model.flat(), &inputs, &labels, &mut grad);
            if let LocalVariant::Prox { mu } = cfg.variant {
                for ((g, w), w0) in grad.iter_mut().zip(model.flat()).zip(init.flat()) {
                    *g += mu * (w - w0);
                }
            }
            for ((w, v), g) in model.flat_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.lr * *v;
            }
        }
    }
    clip_in_place(&mut model);
    Ok(model)
}

/// Full-batch mean gradient of the cross-entropy on `shard` (FedSGD clients).
pub fn local_gradient(mlp: &Mlp, model: &ModelParams, shard: &Dataset) -> Result<Vec<f64>> {
    mlp.check(model)?;
    let mut grad = vec![0.0; model.len()];
    let inputs: Vec<&[f64]> = (0..shard.len()).map(|i| shard.features(i)).collect();
    mlp.accumulate_grad(model.flat(), &inputs, shard.labels(), &mut grad);
    Ok(grad)
}

/// Top-1 accuracy of `model` on `ds`; 0 on an empty dataset.
pub fn eval_accuracy(mlp: &Mlp, model: &ModelParams, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let mut hidden = vec![0.0; mlp.hidden];
    let mut logits = vec![0.0; mlp.classes];
    let correct = (0..ds.len())
        .filter(|&i| {
            mlp.hidden_into(model.flat(), ds.features(i), &mut hidden);
            mlp.head_into(model.final_layer(), &hidden, &mut logits);
            argmax(&logits) == ds.label(i)
        })
        .count();
    correct as f64 / ds.len() as f64
}

pub fn mean_loss(mlp: &Mlp, model: &ModelParams, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    (0..ds.len()).map(|i| mlp.loss(model, ds.features(i), ds.label(i))).sum::<f64>() / ds.len() as f64
}
