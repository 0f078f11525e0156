//! Shadow datasets: fresh records from the target's class mix.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::data::{Dataset, Partition, Record};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Additive isotropic Gaussian noise on every feature.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowProvenance {
    CleanFraction(f64),
    Noisy { fraction: f64, kind: NoiseKind, level: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowDataset {
    pub target_client: usize,
    pub records: Dataset,
    pub provenance: ShadowProvenance,
}

/// ⌈fraction · |shard|⌉ with a little slack for representation error.
pub fn shadow_size(shard_len: usize, fraction: f64) -> usize {
    let raw = fraction * shard_len as f64;
    (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize
}

/// Draws ⌈fraction·|shard|⌉ new records whose labels follow the target's
/// label frequencies, with features from the dataset's generator. Fresh
/// draws are disjoint from the shard by construction.
pub fn build_shadow(
    train: &Dataset,
    partition: &Partition,
    target: usize,
    fraction: f64,
    noise: Option<f64>,
    seed_value: u64,
) -> Result<ShadowDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::ConfigInvalid(format!("shadow fraction {fraction} not in (0, 1]")));
    }
    let generator = train
        .generator()
        .ok_or_else(|| Error::ConfigInvalid("shadow sampling needs a dataset with generator parameters".into()))?;
    let shard = partition
        .client_shards
        .get(target)
        .ok_or_else(|| Error::ConfigInvalid(format!("no client {target}")))?;
    let size = shadow_size(shard.len(), fraction);
    let mut rng = seed::stream(seed_value, "shadow", target as u64);
    let mut noise_rng = seed::stream(seed_value, "shadow-noise", target as u64);
    let jitter = match noise {
        Some(level) if level > 0.0 => Some(
            Normal::new(0.0, level).map_err(|_| Error::ConfigInvalid(format!("bad noise level {level}")))?,
        ),
        Some(level) if level < 0.0 || level.is_nan() => {
            return Err(Error::ConfigInvalid(format!("bad noise level {level}")));
        }
        _ => None,
    };
    let mut records = Dataset::new(train.dim(), train.classes(), Vec::new())?.with_generator(generator.clone());
    for _ in 0..size {
        let label = train.label(shard[rng.random_range(0..shard.len())]);
        let mut features = generator.sample(label, &mut rng);
        if let Some(j) = &jitter {
            features.iter_mut().for_each(|f| *f += j.sample(&mut noise_rng));
        }
        records.push(Record { features, label })?;
    }
    let provenance = match noise {
        Some(level) => ShadowProvenance::Noisy { fraction, kind: NoiseKind::Gaussian, level },
        None => ShadowProvenance::CleanFraction(fraction),
    };
    Ok(ShadowDataset { target_client: target, records, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::{dirichlet_partition, gen_synthetic, SyntheticSpec};

    #[test]
    fn sizes_round_up() {
        assert_eq!(shadow_size(400, 0.05), 20);
        assert_eq!(shadow_size(401, 0.05), 21);
        assert_eq!(shadow_size(10, 1.0), 10);
        assert_eq!(shadow_size(3, 0.01), 1);
    }

    #[test]
    fn shadow_follows_the_target_classes() {
        let ds = gen_synthetic(&SyntheticSpec::new(5, 4, 2000), 3).unwrap();
        let p = dirichlet_partition(&ds, 5, 0.1, 3).unwrap();
        for target in 0..5 {
            let s = build_shadow(&ds, &p, target, 0.2, None, 8).unwrap();
            assert_eq!(s.records.len(), shadow_size(p.client_shards[target].len(), 0.2));
            let owned = ds.subset(&p.client_shards[target]).class_counts();
            for (c, &k) in s.records.class_counts().iter().enumerate() {
                if k > 0 {
                    assert!(owned[c] > 0, "shadow class {c} absent from target shard");
                }
            }
            for i in 0..s.records.len() {
                assert!(p.client_shards[target].iter().all(|&r| ds.features(r) != s.records.features(i)));
            }
        }
    }

    #[test]
    fn noise_moves_features_and_is_recorded() {
        let ds = gen_synthetic(&SyntheticSpec::new(3, 4, 300), 1).unwrap();
        let p = dirichlet_partition(&ds, 3, 1.0, 1).unwrap();
        let clean = build_shadow(&ds, &p, 0, 0.5, None, 2).unwrap();
        let noisy = build_shadow(&ds, &p, 0, 0.5, Some(2.0), 2).unwrap();
        assert_eq!(clean.records.labels(), noisy.records.labels());
        assert_ne!(clean.records.features(0), noisy.records.features(0));
        assert!(matches!(noisy.provenance, ShadowProvenance::Noisy { level, .. } if level == 2.0));
        assert!(build_shadow(&ds, &p, 0, 0.0, None, 2).is_err());
        assert!(build_shadow(&ds, &p, 9, 0.5, None, 2).is_err());
    }
}
