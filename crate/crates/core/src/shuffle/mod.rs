//! Shufflers at model, layer and parameter granularity, plus the bit-level
//! RNS protocol in [`alg1`].

pub mod alg1;
pub mod mixnet;
pub mod transcript;

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitvec::BitChannelBatch;
use crate::error::Result;
use crate::fl::aggregate::canonical_weighted_mean;
use crate::fl::model::ModelParams;
use crate::seed;

pub use alg1::{
    prescale_for_weighted, run_alg1, run_alg1_rle, run_protocol, Alg1Output, ChannelShuffler, ClientEncoding,
    LocalShuffler,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Model,
    Layer,
    Parameter,
    BitRns,
    BitRnsRle,
}

impl Granularity {
    pub fn code(self) -> u8 {
        match self {
            Granularity::Model => 0,
            Granularity::Layer => 1,
            Granularity::Parameter => 2,
            Granularity::BitRns => 3,
            Granularity::BitRnsRle => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Granularity::Model,
            1 => Granularity::Layer,
            2 => Granularity::Parameter,
            3 => Granularity::BitRns,
            4 => Granularity::BitRnsRle,
            _ => return None,
        })
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Granularity::Model => "model",
            Granularity::Layer => "layer",
            Granularity::Parameter => "parameter",
            Granularity::BitRns => "bit_rns",
            Granularity::BitRnsRle => "bit_rns_rle",
        };
        f.write_str(s)
    }
}

/// What the server receives from the shuffler.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Whole models in shuffled order.
    Models(Vec<ModelParams>),
    /// `layers[l][i]`: the i-th (shuffled) copy of layer l.
    Layers(Vec<Vec<Vec<f64>>>),
    /// `params[p][i]`: the i-th (shuffled) value of parameter p.
    Parameters(Vec<Vec<f64>>),
    Bits(BitChannelBatch),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShuffledSubmission {
    pub granularity: Granularity,
    pub payload: Payload,
    /// SHA-256 of the shuffler seed, hex encoded. Lets an auditor check
    /// which randomness was used without the server learning it up front.
    pub rng_seed_commitment: String,
}

pub fn seed_commitment(seed_value: u64) -> String {
    let digest = Sha256::digest(seed_value.to_le_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn shuffle_models(models: &[ModelParams], seed_value: u64) -> ShuffledSubmission {
    let mut out = models.to_vec();
    out.shuffle(&mut seed::stream(seed_value, "model", 0));
    ShuffledSubmission {
        granularity: Granularity::Model,
        payload: Payload::Models(out),
        rng_seed_commitment: seed_commitment(seed_value),
    }
}

/// A fresh permutation per layer.
pub fn shuffle_layers(models: &[ModelParams], seed_value: u64) -> Result<ShuffledSubmission> {
    ModelParams::check_layouts(models)?;
    let layout = models[0].layout().clone();
    let layers = (0..layout.layers.len())
        .map(|l| {
            let mut copies: Vec<Vec<f64>> = models.iter().map(|m| m.layer(l).to_vec()).collect();
            copies.shuffle(&mut seed::stream(seed_value, "layer", l as u64));
            copies
        })
        .collect();
    Ok(ShuffledSubmission {
        granularity: Granularity::Layer,
        payload: Payload::Layers(layers),
        rng_seed_commitment: seed_commitment(seed_value),
    })
}

/// A fresh permutation per scalar parameter index.
pub fn shuffle_parameters(models: &[ModelParams], seed_value: u64) -> Result<ShuffledSubmission> {
    ModelParams::check_layouts(models)?;
    let params = (0..models[0].len())
        .map(|p| {
            let mut values: Vec<f64> = models.iter().map(|m| m.flat()[p]).collect();
            values.shuffle(&mut seed::stream(seed_value, "parameter", p as u64));
            values
        })
        .collect();
    Ok(ShuffledSubmission {
        granularity: Granularity::Parameter,
        payload: Payload::Parameters(params),
        rng_seed_commitment: seed_commitment(seed_value),
    })
}

/// Equal-weight FedAvg over per-layer lists.
pub fn aggregate_layers(template: &ModelParams, layers: &[Vec<Vec<f64>>]) -> ModelParams {
    let mut out = ModelParams::zeros(template.layout().clone());
    for (l, copies) in layers.iter().enumerate() {
        let dst = out.layer_mut(l);
        let mut pairs = vec![(0.0, 1.0); copies.len()];
        for (k, slot) in dst.iter_mut().enumerate() {
            for (pair, c) in pairs.iter_mut().zip(copies) {
                *pair = (c[k], 1.0);
            }
            *slot = canonical_weighted_mean(&mut pairs);
        }
    }
    out
}

/// Equal-weight FedAvg over per-parameter lists.
pub fn aggregate_parameters(template: &ModelParams, params: &[Vec<f64>]) -> ModelParams {
    let mut out = ModelParams::zeros(template.layout().clone());
    for (slot, values) in out.flat_mut().iter_mut().zip(params) {
        let mut pairs: Vec<(f64, f64)> = values.iter().map(|&v| (v, 1.0)).collect();
        *slot = canonical_weighted_mean(&mut pairs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::aggregate::fedavg_equal;
    use crate::fl::model::Mlp;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn models(n: usize, seed_value: u64) -> Vec<ModelParams> {
        let mlp = Mlp::new(3, 4, 3);
        (0..n).map(|i| mlp.init(&mut seed::rng(seed_value * 100 + i as u64))).collect()
    }

    fn order_index(perm: &[usize]) -> usize {
        // rank of a permutation of {0,1,2}
        const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        ORDERS.iter().position(|o| o == perm).unwrap()
    }

    fn chi_square_uniform(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn single_model_is_identity() {
        let ms = models(1, 1);
        let s = shuffle_models(&ms, 4);
        assert_eq!(s.payload, Payload::Models(ms));
    }

    #[test]
    fn model_shuffle_is_uniform() {
        let ms = models(3, 2);
        let mut counts = [0u64; 6];
        for t in 0..10_000u64 {
            let Payload::Models(out) = shuffle_models(&ms, t).payload else { unreachable!() };
            let perm: Vec<usize> = out.iter().map(|m| ms.iter().position(|x| x == m).unwrap()).collect();
            counts[order_index(&perm)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 6.0).abs() < 0.02);
        }
        assert!(chi_square_uniform(&counts) > 0.001);
    }

    #[test]
    fn layer_and_parameter_shuffles_preserve_fedavg_exactly() {
        let ms = models(7, 3);
        let reference = fedavg_equal(&ms).unwrap();
        let Payload::Layers(layers) = shuffle_layers(&ms, 9).unwrap().payload else { unreachable!() };
        assert_eq!(aggregate_layers(&ms[0], &layers), reference);
        let Payload::Parameters(params) = shuffle_parameters(&ms, 9).unwrap().payload else { unreachable!() };
        assert_eq!(aggregate_parameters(&ms[0], &params), reference);
        for (p, values) in params.iter().enumerate() {
            let mut got = values.clone();
            let mut want: Vec<f64> = ms.iter().map(|m| m.flat()[p]).collect();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn identical_models_shuffle_to_themselves() {
        let m = models(1, 5).remove(0);
        let ms = vec![m.clone(); 4];
        let Payload::Layers(layers) = shuffle_layers(&ms, 1).unwrap().payload else { unreachable!() };
        for (l, copies) in layers.iter().enumerate() {
            assert!(copies.iter().all(|c| c.as_slice() == m.layer(l)));
        }
    }

    #[test]
    fn layer_permutations_are_independent() {
        let ms = models(3, 6);
        let mut joint = [[0u64; 6]; 6];
        for t in 0..10_000u64 {
            let Payload::Layers(layers) = shuffle_layers(&ms, t).unwrap().payload else { unreachable!() };
            let perm = |l: usize| -> Vec<usize> {
                layers[l].iter().map(|c| ms.iter().position(|m| m.layer(l) == c.as_slice()).unwrap()).collect()
            };
            joint[order_index(&perm(0))][order_index(&perm(1))] += 1;
        }
        // chi-square test of independence on the 6×6 contingency table
        let total = 10_000.0;
        let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
        let cols: Vec<f64> = (0..6).map(|j| joint.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
        let mut stat = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let e = rows[i] * cols[j] / total;
                stat += (joint[i][j] as f64 - e).powi(2) / e;
            }
        }
        let p = 1.0 - ChiSquared::new(25.0).unwrap().cdf(stat);
        assert!(p > 0.001, "independence rejected: p = {p}");
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let a = Mlp::new(3, 4, 3).init(&mut seed::rng(1));
        let b = Mlp::new(3, 5, 3).init(&mut seed::rng(1));
        assert!(shuffle_layers(&[a.clone(), b.clone()], 0).is_err());
        assert!(shuffle_parameters(&[a, b], 0).is_err());
    }

    #[test]
    fn commitment_is_stable_hex() {
        let c = seed_commitment(42);
        assert_eq!(c.len(), 64);
        assert_eq!(c, seed_commitment(42));
        assert_ne!(c, seed_commitment(43));
    }
}
