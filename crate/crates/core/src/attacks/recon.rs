//! Reconstruction attacks: remap shuffled submissions to a target client by
//! shadow-set accuracy.
//!
//! Accuracy is compared as a count of correct predictions with a strict
//! `>`, so the first candidate wins ties.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fl::aggregate::canonical_weighted_mean;
use crate::fl::data::Dataset;
use crate::fl::model::{argmax, Layout, Mlp, ModelParams};

/// Shadow evaluations performed: whole-model accuracy computations and the
/// per-record predictions behind them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCount {
    pub models: u64,
    pub records: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub model: ModelParams,
    pub evaluations: EvalCount,
}

struct ShadowEval<'a> {
    mlp: &'a Mlp,
    shadow: &'a Dataset,
    count: EvalCount,
}

impl<'a> ShadowEval<'a> {
    fn new(mlp: &'a Mlp, shadow: &'a Dataset) -> Self {
        Self { mlp, shadow, count: EvalCount::default() }
    }

    fn tick(&mut self) {
        self.count.models += 1;
        self.count.records += self.shadow.len() as u64;
    }

    fn hidden(&self, body: &ModelParams) -> Vec<Vec<f64>> {
        (0..self.shadow.len())
            .map(|i| {
                let mut h = vec![0.0; self.mlp.hidden];
                self.mlp.hidden_into(body.flat(), self.shadow.features(i), &mut h);
                h
            })
            .collect()
    }

    fn logits(&self, hidden: &[Vec<f64>], final_layer: &[f64]) -> Vec<Vec<f64>> {
        hidden
            .iter()
            .map(|h| {
                let mut z = vec![0.0; self.mlp.classes];
                self.mlp.head_into(final_layer, h, &mut z);
                z
            })
            .collect()
    }

    fn correct_from_logits(&mut self, logits: &[Vec<f64>]) -> usize {
        self.tick();
        logits.iter().zip(self.shadow.labels()).filter(|(z, &y)| argmax(z) == y).count()
    }

    fn correct(&mut self, model: &ModelParams) -> usize {
        let logits = self.logits(&self.hidden(model), model.final_layer());
        self.correct_from_logits(&logits)
    }
}

/// Index of the first model with the highest shadow accuracy.
fn best_by_accuracy(eval: &mut ShadowEval, models: &[ModelParams]) -> usize {
    let mut best = 0;
    let mut best_correct = eval.correct(&models[0]);
    for (j, m) in models.iter().enumerate().skip(1) {
        let c = eval.correct(m);
        if c > best_correct {
            best = j;
            best_correct = c;
        }
    }
    best
}

/// R_M: the shuffled model that scores best on the shadow set.
pub fn recon_model(mlp: &Mlp, models: &[ModelParams], shadow: &Dataset) -> Result<(usize, Reconstruction)> {
    if models.is_empty() {
        return Err(Error::LayoutMismatch("no models to choose from".into()));
    }
    ModelParams::check_layouts(models)?;
    mlp.check(&models[0])?;
    let mut eval = ShadowEval::new(mlp, shadow);
    let best = best_by_accuracy(&mut eval, models);
    Ok((best, Reconstruction { model: models[best].clone(), evaluations: eval.count }))
}

/// R_L: every layer except the final one is averaged over clients; each
/// shuffled copy of the final layer is tried on top (CON) and the best kept.
pub fn recon_layer(
    mlp: &Mlp,
    layout: &Arc<Layout>,
    layers: &[Vec<Vec<f64>>],
    shadow: &Dataset,
) -> Result<Reconstruction> {
    if layers.len() != layout.layers.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} layer lists for a layout with {} layers",
            layers.len(),
            layout.layers.len()
        )));
    }
    let n = layers[0].len();
    for (l, copies) in layers.iter().enumerate() {
        let want = layout.layers[l].range.len();
        if copies.len() != n || n == 0 || copies.iter().any(|c| c.len() != want) {
            return Err(Error::LayoutMismatch(format!("inconsistent copies of layer {l}")));
        }
    }
    let last = layers.len() - 1;
    let averaged: Vec<Vec<f64>> = layers[..last].iter().map(|copies| mean_columns(copies)).collect();
    let mut parts: Vec<&[f64]> = averaged.iter().map(Vec::as_slice).collect();
    parts.push(&layers[last][0]);
    let body = ModelParams::from_layers(layout.clone(), &parts)?;
    mlp.check(&body)?;

    let mut eval = ShadowEval::new(mlp, shadow);
    let hidden = eval.hidden(&body);
    let mut best = 0;
    let mut best_correct = eval.correct_from_logits(&eval.logits(&hidden, &layers[last][0]));
    for (i, candidate) in layers[last].iter().enumerate().skip(1) {
        let c = eval.correct_from_logits(&eval.logits(&hidden, candidate));
        if c > best_correct {
            best = i;
            best_correct = c;
        }
    }
    parts.pop();
    parts.push(&layers[last][best]);
    Ok(Reconstruction { model: ModelParams::from_layers(layout.clone(), &parts)?, evaluations: eval.count })
}

/// R_P: for every final-layer index i, try each shuffled candidate value in
/// the global model (REP), keep the most accurate, and write it into the
/// result. Other indices stay at their global values while i is scored.
pub fn recon_param(
    mlp: &Mlp,
    global: &ModelParams,
    final_params: &[Vec<f64>],
    shadow: &Dataset,
) -> Result<Reconstruction> {
    mlp.check(global)?;
    let k = global.final_layer().len();
    if final_params.len() != k || final_params.iter().any(Vec::is_empty) {
        return Err(Error::LayoutMismatch(format!(
            "expected {k} non-empty candidate lists for the final layer, got {}",
            final_params.len()
        )));
    }
    let mut eval = ShadowEval::new(mlp, shadow);
    let hidden = eval.hidden(global);
    let base = eval.logits(&hidden, global.final_layer());
    let (h, classes) = (mlp.hidden, mlp.classes);
    let mut out = global.clone();
    let mut scratch = base.clone();
    for (i, candidates) in final_params.iter().enumerate() {
        let g = global.final_layer()[i];
        // A change to fc2.weight[c][j] moves logit c by Δ·hidden[j]; a change
        // to fc2.bias[c] moves it by Δ.
        let (class, unit) = if i < classes * h { (i / h, Some(i % h)) } else { (i - classes * h, None) };
        let mut score = |value: f64, eval: &mut ShadowEval| {
            let delta = value - g;
            for ((z, b), hid) in scratch.iter_mut().zip(&base).zip(&hidden) {
                z[class] = b[class] + unit.map_or(delta, |j| delta * hid[j]);
            }
            let c = eval.correct_from_logits(&scratch);
            for (z, b) in scratch.iter_mut().zip(&base) {
                z[class] = b[class];
            }
            c
        };
        let mut best = candidates[0];
        let mut best_correct = score(best, &mut eval);
        for &v in &candidates[1..] {
            let c = score(v, &mut eval);
            if c > best_correct {
                best = v;
                best_correct = c;
            }
        }
        let start = out.layout().final_layer().range.start;
        out.flat_mut()[start + i] = best;
    }
    Ok(Reconstruction { model: out, evaluations: eval.count })
}

fn mean_columns(copies: &[Vec<f64>]) -> Vec<f64> {
    let mut pairs = vec![(0.0, 1.0); copies.len()];
    (0..copies[0].len())
        .map(|k| {
            for (pair, c) in pairs.iter_mut().zip(copies) {
                *pair = (c[k], 1.0);
            }
            canonical_weighted_mean(&mut pairs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::aggregate::fedavg_equal;
    use crate::fl::data::{gen_synthetic, SyntheticSpec};
    use crate::fl::{eval_accuracy, train_local, LocalTraining};
    use crate::seed;
    use crate::shuffle::{aggregate_parameters, shuffle_layers, shuffle_parameters, Payload};

    fn setup() -> (Mlp, Dataset, Vec<ModelParams>) {
        let ds = gen_synthetic(&SyntheticSpec::new(3, 4, 300), 5).unwrap();
        let mlp = Mlp::new(4, 8, 3);
        let init = mlp.init(&mut seed::rng(1));
        let trained = train_local(&mlp, &init, &ds, &LocalTraining::default(), 2).unwrap();
        let randoms: Vec<ModelParams> = (10..14).map(|s| mlp.init(&mut seed::rng(s))).collect();
        let mut models = randoms;
        models.insert(2, trained);
        (mlp, ds, models)
    }

    // Oracle: plain full-model evaluation.
    fn exhaustive_param_oracle(mlp: &Mlp, global: &ModelParams, cands: &[Vec<f64>], shadow: &Dataset) -> ModelParams {
        let mut out = global.clone();
        for (i, zs) in cands.iter().enumerate() {
            let mut best = zs[0];
            let mut best_acc = eval_accuracy(mlp, &global.replace_final(i, zs[0]), shadow);
            for &z in &zs[1..] {
                let acc = eval_accuracy(mlp, &global.replace_final(i, z), shadow);
                if acc > best_acc {
                    best = z;
                    best_acc = acc;
                }
            }
            out = out.replace_final(i, best);
        }
        out
    }

    #[test]
    fn model_level_finds_the_trained_model() {
        let (mlp, ds, models) = setup();
        let (idx, r) = recon_model(&mlp, &models, &ds).unwrap();
        assert_eq!(idx, 2);
        assert_eq!(r.model, models[2]);
        assert_eq!(r.evaluations, EvalCount { models: 5, records: 5 * 300 });
        let (idx, _) = recon_model(&mlp, &models[..1], &ds).unwrap();
        assert_eq!(idx, 0);
        // ties keep the first
        let same = vec![models[0].clone(); 3];
        assert_eq!(recon_model(&mlp, &same, &ds).unwrap().0, 0);
    }

    #[test]
    fn layer_level_counts_and_identical_clients() {
        let (mlp, ds, models) = setup();
        let Payload::Layers(layers) = shuffle_layers(&models, 3).unwrap().payload else { unreachable!() };
        let r = recon_layer(&mlp, &models[0].layout().clone(), &layers, &ds).unwrap();
        assert_eq!(r.evaluations.models, 5);
        assert_eq!(r.evaluations.records, 5 * 300);
        assert!(layers[1].iter().any(|c| c.as_slice() == r.model.final_layer()));

        let same = vec![models[2].clone(); 4];
        let Payload::Layers(layers) = shuffle_layers(&same, 3).unwrap().payload else { unreachable!() };
        let r = recon_layer(&mlp, &same[0].layout().clone(), &layers, &ds).unwrap();
        assert_eq!(r.model, fedavg_equal(&same).unwrap());
    }

    #[test]
    fn param_level_matches_the_exhaustive_oracle() {
        let (mlp, ds, models) = setup();
        let shadow = ds.subset(&(0..40).collect::<Vec<_>>());
        let Payload::Parameters(params) = shuffle_parameters(&models, 4).unwrap().payload else { unreachable!() };
        let global = aggregate_parameters(&models[0], &params);
        let range = global.layout().final_layer().range.clone();
        let cands = params[range].to_vec();
        let r = recon_param(&mlp, &global, &cands, &shadow).unwrap();
        let k = global.final_layer().len() as u64;
        assert_eq!(r.evaluations, EvalCount { models: k * 5, records: k * 5 * 40 });
        let oracle = exhaustive_param_oracle(&mlp, &global, &cands, &shadow);
        assert_eq!(r.model, oracle);
    }

    #[test]
    fn equal_candidates_keep_the_global_value() {
        let (mlp, ds, models) = setup();
        let global = models[1].clone();
        let cands: Vec<Vec<f64>> = global.final_layer().iter().map(|&v| vec![v; 4]).collect();
        let r = recon_param(&mlp, &global, &cands, &ds).unwrap();
        assert_eq!(r.model, global);
        assert!(recon_param(&mlp, &global, &cands[1..], &ds).is_err());
    }
}
