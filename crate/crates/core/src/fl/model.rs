//! Flat parameter storage with a layout descriptor, and the two-layer
//! perceptron that interprets it.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clipping margin: parameters are kept in [−1 + ε, 1 − ε].
pub const CLIP_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A layer groups consecutive tensors (weight then bias) under one name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub layers: Vec<LayerSpec>,
    pub total: usize,
}

impl Layout {
    /// Builds a layout from `(tensor name, shape)` pairs; tensors named
    /// `<layer>.<part>` are grouped into layers.
    pub fn new<S: Into<String>>(tensors: Vec<(S, Vec<usize>)>) -> Self {
        let mut specs = Vec::new();
        let mut layers: Vec<LayerSpec> = Vec::new();
        let mut offset = 0;
        for (name, shape) in tensors {
            let name = name.into();
            let spec = TensorSpec { name: name.clone(), shape, offset };
            let len = spec.len();
            let layer = name.split('.').next().unwrap_or(&name).to_string();
            match layers.last_mut() {
                Some(last) if last.name == layer => last.range.end = offset + len,
                _ => layers.push(LayerSpec { name: layer, range: offset..offset + len }),
            }
            offset += len;
            specs.push(spec);
        }
        Self { tensors: specs, layers, total: offset }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn final_layer(&self) -> &LayerSpec {
        self.layers.last().expect("layout has at least one layer")
    }
}

/// A model's parameters: one flat vector interpreted through a shared layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total];
        Self { layout, values }
    }

    pub fn from_flat(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensor(name).map(|t| &self.values[t.range()])
    }

    pub fn layer(&self, idx: usize) -> &[f64] {
        &self.values[self.layout.layers[idx].range.clone()]
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut [f64] {
        let range = self.layout.layers[idx].range.clone();
        &mut self.values[range]
    }

    pub fn final_layer(&self) -> &[f64] {
        &self.values[self.layout.final_layer().range.clone()]
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layouts(models: &[ModelParams]) -> Result<()> {
        let Some(first) = models.first() else {
            return Err(Error::LayoutMismatch("no models given".into()));
        };
        if models.iter().all(|m| m.same_layout(first)) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch("models use different layouts".into()))
        }
    }

    /// CON: a model assembled from one slice per layer.
    pub fn from_layers(layout: Arc<Layout>, layers: &[&[f64]]) -> Result<Self> {
        if layers.len() != layout.layers.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} layers given, layout has {}",
                layers.len(),
                layout.layers.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.total);
        for (spec, data) in layout.layers.iter().zip(layers) {
            if data.len() != spec.range.len() {
                return Err(Error::LayoutMismatch(format!("layer {} has wrong length", spec.name)));
            }
            values.extend_from_slice(data);
        }
        Ok(Self { layout, values })
    }

    /// REP: copy with the `i`-th final-layer parameter replaced.
    pub fn replace_final(&self, i: usize, value: f64) -> Self {
        let mut out = self.clone();
        let start = self.layout.final_layer().range.start;
        out.values[start + i] = value;
        out
    }
}

pub fn clip_params(m: &ModelParams) -> ModelParams {
    let mut out = m.clone();
    clip_in_place(&mut out);
    out
}

pub fn clip_value(p: f64) -> f64 {
    if p.is_nan() {
        return 0.0;
    }
    p.clamp(-1.0 + CLIP_EPSILON, 1.0 - CLIP_EPSILON)
}

pub fn clip_in_place(m: &mut ModelParams) {
    for p in m.flat_mut() {
        *p = clip_value(*p);
    }
}

/// d → h (ReLU) → C perceptron over a [`ModelParams`] with layers `fc1`, `fc2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Self {
        Self { input, hidden, classes }
    }

    pub fn layout(&self) -> Arc<Layout> {
        Arc::new(Layout::new(vec![
            ("fc1.weight", vec![self.hidden, self.input]),
            ("fc1.bias", vec![self.hidden]),
            ("fc2.weight", vec![self.classes, self.hidden]),
            ("fc2.bias", vec![self.classes]),
        ]))
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    /// Uniform(±1/√fan_in) initialization, which stays inside (−1, 1).
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let layout = self.layout();
        let mut m = ModelParams::zeros(layout);
        let b1 = 1.0 / (self.input as f64).sqrt();
        let b2 = 1.0 / (self.hidden as f64).sqrt();
        let split = self.hidden * self.input + self.hidden;
        for (i, p) in m.flat_mut().iter_mut().enumerate() {
            let bound = if i < split { b1 } else { b2 };
            *p = rng.random_range(-bound..bound);
        }
        m
    }

    pub fn check(&self, m: &ModelParams) -> Result<()> {
        if m.len() != self.param_count() {
            return Err(Error::LayoutMismatch(format!(
                "model has {} parameters, perceptron needs {}",
                m.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn split<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (w1, rest) = w.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.classes * self.hidden);
        (w1, b1, w2, b2)
    }

    /// Hidden activations (post-ReLU) for one input.
    pub fn hidden_into(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let (w1, b1, _, _) = self.split(w);
        for (j, o) in out.iter_mut().enumerate() {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z = b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            *o = z.max(0.0);
        }
    }

    /// Output logits from hidden activations using only the final layer.
    pub fn head_into(&self, final_layer: &[f64], hidden: &[f64], out: &mut [f64]) {
        let (w2, b2) = final_layer.split_at(self.classes * self.hidden);
        for (c, o) in out.iter_mut().enumerate() {
            let row = &w2[c * self.hidden..(c + 1) * self.hidden];
            *o = b2[c] + row.iter().zip(hidden).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn logits(&self, m: &ModelParams, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        self.hidden_into(m.flat(), x, &mut hidden);
        self.head_into(m.final_layer(), &hidden, &mut logits);
        logits
    }

    pub fn predict(&self, m: &ModelParams, x: &[f64]) -> usize {
        argmax(&self.logits(m, x))
    }

    pub fn loss(&self, m: &ModelParams, x: &[f64], label: usize) -> f64 {
        cross_entropy(&self.logits(m, x), label)
    }

    /// Accumulates the gradient of the mean cross-entropy over `batch` into
    /// `grad` and returns the summed loss.
    pub fn accumulate_grad(
        &self,
        w: &[f64],
        inputs: &[&[f64]],
        labels: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        let (_, _, w2, _) = self.split(w);
        let (h, d, c) = (self.hidden, self.input, self.classes);
        let scale = 1.0 / inputs.len().max(1) as f64;
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut dz1 = vec![0.0; h];
        let mut total = 0.0;
        let final_start = h * d + h;
        for (x, &y) in inputs.iter().zip(labels) {
            self.hidden_into(w, x, &mut hidden);
            self.head_into(&w[final_start..], &hidden, &mut logits);
            let probs = softmax(&logits);
            total += -probs[y].max(f64::MIN_POSITIVE).ln();

            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            dz1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                let dz2 = (probs[k] - if k == y { 1.0 } else { 0.0 }) * scale;
                gb2[k] += dz2;
                let row = &mut gw2[k * h..(k + 1) * h];
                let wrow = &w2[k * h..(k + 1) * h];
                for j in 0..h {
                    row[j] += dz2 * hidden[j];
                    dz1[j] += dz2 * wrow[j];
                }
            }
            for j in 0..h {
                if hidden[j] <= 0.0 {
                    continue;
                }
                let g = dz1[j];
                gb1[j] += g;
                let row = &mut gw1[j * d..(j + 1) * d];
                for (r, xi) in row.iter_mut().zip(x.iter()) {
                    *r += g * xi;
                }
            }
        }
        total
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
