//! Synthetic Gaussian-blob classification data and Dirichlet label-skew
//! partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Class means and isotropic noise of the blob generator. Kept with the
/// dataset so that fresh records from the same distribution can be drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub means: Vec<Vec<f64>>,
    pub noise_std: f64,
}

impl GeneratorParams {
    pub fn sample<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> Vec<f64> {
        let noise = Normal::new(0.0, self.noise_std).expect("noise std is finite and non-negative");
        self.means[label].iter().map(|mu| mu + noise.sample(rng)).collect()
    }
}

pub const DEFAULT_CLASS_SEP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    /// Distance between the two closest class means. Means are drawn as
    /// standard Gaussians and rescaled so the closest pair sits exactly this
    /// far apart.
    pub class_sep: f64,
    pub noise_std: f64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, dim: usize, samples: usize) -> Self {
        Self { classes, dim, samples, class_sep: DEFAULT_CLASS_SEP, noise_std: 1.0 }
    }
}

/// Row-major features with one label per record.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    generator: Option<GeneratorParams>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, records: Vec<Record>) -> Result<Self> {
        let mut ds = Dataset { dim, classes, features: Vec::new(), labels: Vec::new(), generator: None };
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn with_generator(mut self, generator: GeneratorParams) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn push(&mut self, r: Record) -> Result<()> {
        if r.features.len() != self.dim {
            return Err(Error::Format(format!(
                "record has dimension {}, dataset has {}",
                r.features.len(),
                self.dim
            )));
        }
        if r.label >= self.classes {
            return Err(Error::Format(format!("label {} out of {} classes", r.label, self.classes)));
        }
        self.features.extend_from_slice(&r.features);
        self.labels.push(r.label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn record(&self, i: usize) -> Record {
        Record { features: self.features(i).to_vec(), label: self.labels[i] }
    }

    pub fn generator(&self) -> Option<&GeneratorParams> {
        self.generator.as_ref()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset {
            dim: self.dim,
            classes: self.classes,
            features: Vec::with_capacity(indices.len() * self.dim),
            labels: Vec::with_capacity(indices.len()),
            generator: self.generator.clone(),
        };
        for &i in indices {
            out.features.extend_from_slice(self.features(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub(crate) fn raw_parts(&self) -> (&[f64], &[usize]) {
        (&self.features, &self.labels)
    }
}

/// Gaussian class blobs. Labels cycle through the classes so every class is
/// present whenever `samples ≥ classes`; record order is then shuffled.
pub fn gen_synthetic(spec: &SyntheticSpec, seed_value: u64) -> Result<Dataset> {
    if spec.classes < 2 || spec.dim < 2 {
        return Err(Error::ConfigInvalid("synthetic data needs at least 2 classes and 2 dimensions".into()));
    }
    if !(spec.class_sep > 0.0 && spec.noise_std >= 0.0) {
        return Err(Error::ConfigInvalid("class_sep must be positive and noise_std non-negative".into()));
    }
    let mut rng = seed::stream(seed_value, "synthetic", 0);
    let coord = Normal::new(0.0, 1.0).unwrap();
    let mut means: Vec<Vec<f64>> =
        (0..spec.classes).map(|_| (0..spec.dim).map(|_| coord.sample(&mut rng)).collect()).collect();
    let closest = min_pairwise_distance(&means);
    if closest > 0.0 {
        let scale = spec.class_sep / closest;
        means.iter_mut().flatten().for_each(|v| *v *= scale);
    }
    let generator = GeneratorParams { means, noise_std: spec.noise_std };
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let mut ds = Dataset::new(spec.dim, spec.classes, Vec::new())?;
    for label in labels {
        let features = generator.sample(label, &mut rng);
        ds.push(Record { features, label })?;
    }
    Ok(ds.with_generator(generator))
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub alpha: f64,
    /// Record indices owned by each client, ascending.
    pub client_shards: Vec<Vec<usize>>,
    /// Owner of each record (the source ground truth).
    pub owners: Vec<usize>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.client_shards.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.client_shards.iter().map(Vec::len).collect()
    }

    pub fn from_owners(alpha: f64, n_clients: usize, owners: Vec<usize>) -> Result<Self> {
        let mut shards = vec![Vec::new(); n_clients];
        for (i, &o) in owners.iter().enumerate() {
            let shard = shards
                .get_mut(o)
                .ok_or_else(|| Error::Format(format!("owner {o} out of {n_clients} clients")))?;
            shard.push(i);
        }
        Ok(Self { alpha, client_shards: shards, owners })
    }
}

const MAX_RESAMPLES: usize = 1000;

fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha is positive and finite");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Splits each class's records over `n` clients with Dirichlet(α) proportions.
///
/// If an allocation leaves some client empty, every class vector is redrawn;
/// after `MAX_RESAMPLES` rounds the remaining empty clients take
/// one record each from the largest shards.
pub fn dirichlet_partition(ds: &Dataset, n: usize, alpha: f64, seed_value: u64) -> Result<Partition> {
    if n < 2 {
        return Err(Error::ConfigInvalid("a partition needs at least 2 clients".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::ConfigInvalid(format!("alpha must be positive and finite, got {alpha}")));
    }
    if ds.len() < n {
        return Err(Error::ConfigInvalid(format!("{} records cannot cover {n} clients", ds.len())));
    }
    let mut rng = seed::stream(seed_value, "partition", 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let mut owners = vec![0usize; ds.len()];
    let mut counts = vec![0usize; n];
    for _ in 0..MAX_RESAMPLES {
        counts.iter_mut().for_each(|c| *c = 0);
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let props = dirichlet(alpha, n, &mut rng);
            let mut cum = 0.0;
            let mut start = 0;
            for (client, p) in props.iter().enumerate() {
                cum += p;
                let end = if client + 1 == n {
                    members.len()
                } else {
                    ((cum * members.len() as f64).round() as usize).clamp(start, members.len())
                };
                for &rec in &members[start..end] {
                    owners[rec] = client;
                }
                counts[client] += end - start;
                start = end;
            }
        }
        if counts.iter().all(|&c| c > 0) {
            return Partition::from_owners(alpha, n, owners);
        }
    }

    // Fallback: donate one record from the largest shard to each empty one.
    for empty in 0..n {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..n).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let rec = owners.iter().position(|&o| o == donor).unwrap();
        owners[rec] = empty;
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    Partition::from_owners(alpha, n, owners)
}
