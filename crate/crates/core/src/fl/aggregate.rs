//! Sum-based aggregation: FedAvg, FedSGD and the clustered FedMedian.
//!
//! Per-parameter sums are taken over values in a canonical (sorted) order, so
//! the result depends only on the multiset of submissions. Shuffled and
//! unshuffled submissions therefore aggregate to bit-identical models.

use super::model::ModelParams;
use crate::error::{Error, Result};

/// Σ w_i·x_i / Σ w_i with the terms summed in ascending (x, w) order.
pub fn canonical_weighted_mean(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.iter().map(|(x, w)| w * x).sum::<f64>() / total
}

/// W = Σ (N_i / N)·w_i, elementwise.
pub fn fedavg(models: &[ModelParams], sizes: &[f64]) -> Result<ModelParams> {
    ModelParams::check_layouts(models)?;
    if sizes.len() != models.len() {
        return Err(Error::LayoutMismatch(format!("{} models but {} sizes", models.len(), sizes.len())));
    }
    if sizes.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::LayoutMismatch("client sizes must be positive".into()));
    }
    let mut out = ModelParams::zeros(models[0].layout().clone());
    let mut pairs = vec![(0.0, 0.0); models.len()];
    for (i, slot) in out.flat_mut().iter_mut().enumerate() {
        for ((pair, m), &s) in pairs.iter_mut().zip(models).zip(sizes) {
            *pair = (m.flat()[i], s);
        }
        *slot = canonical_weighted_mean(&mut pairs);
    }
    Ok(out)
}

pub fn fedavg_equal(models: &[ModelParams]) -> Result<ModelParams> {
    fedavg(models, &vec![1.0; models.len()])
}

/// One FedSGD round: the size-weighted mean gradient applied to `global`.
pub fn fedsgd_step(global: &ModelParams, grads: &[Vec<f64>], sizes: &[f64], lr: f64) -> Result<ModelParams> {
    if grads.is_empty() || grads.len() != sizes.len() {
        return Err(Error::LayoutMismatch("gradient and size lists must be non-empty and aligned".into()));
    }
    if grads.iter().any(|g| g.len() != global.len()) {
        return Err(Error::LayoutMismatch("gradient length differs from the model".into()));
    }
    let mut out = global.clone();
    let mut pairs = vec![(0.0, 0.0); grads.len()];
    for (i, w) in out.flat_mut().iter_mut().enumerate() {
        for ((pair, g), &s) in pairs.iter_mut().zip(grads).zip(sizes) {
            *pair = (g[i], s);
        }
        *w -= lr * canonical_weighted_mean(&mut pairs);
    }
    Ok(out)
}

/// Groups consecutive models into clusters of `k` (the last cluster absorbs
/// any remainder), averages within clusters and takes the elementwise median
/// of the cluster means.
pub fn fedmedian_clustered(models: &[ModelParams], k: usize) -> Result<ModelParams> {
    ModelParams::check_layouts(models)?;
    let n = models.len();
    if k < 1 || k > n {
        return Err(Error::InvalidCluster { k, n });
    }
    let clusters = n / k;
    let means: Vec<ModelParams> = (0..clusters)
        .map(|c| {
            let end = if c + 1 == clusters { n } else { (c + 1) * k };
            fedavg_equal(&models[c * k..end])
        })
        .collect::<Result<_>>()?;
    let mut out = ModelParams::zeros(models[0].layout().clone());
    let mut column = vec![0.0; clusters];
    for (i, slot) in out.flat_mut().iter_mut().enumerate() {
        for (c, m) in column.iter_mut().zip(&means) {
            *c = m.flat()[i];
        }
        *slot = median(&mut column);
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
