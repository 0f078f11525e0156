//! Source inference and the reconstruction attacks that undo shuffling.

pub mod recon;
pub mod shadow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fl::model::{cross_entropy, Mlp, ModelParams};

pub use recon::{recon_layer, recon_model, recon_param, EvalCount, Reconstruction};
pub use shadow::{build_shadow, shadow_size, NoiseKind, ShadowDataset, ShadowProvenance};

/// The attacker's candidate models, one per client label.
///
/// When there is a single candidate, or every candidate is bit-identical,
/// the losses carry no information about the owner and guesses are uniform
/// over the clients.
pub struct SiaCandidates<'a> {
    mlp: &'a Mlp,
    models: &'a [ModelParams],
    n_clients: usize,
    degenerate: bool,
}

impl<'a> SiaCandidates<'a> {
    pub fn new(mlp: &'a Mlp, models: &'a [ModelParams], n_clients: usize) -> Self {
        assert!(!models.is_empty() && n_clients > 0);
        let degenerate = models.len() == 1 || models.iter().all(|m| m.flat() == models[0].flat());
        Self { mlp, models, n_clients, degenerate }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Candidate with the lowest cross-entropy on the record; ties go to the
    /// lowest index.
    pub fn guess<R: Rng + ?Sized>(&self, features: &[f64], label: usize, rng: &mut R) -> usize {
        if self.degenerate {
            return rng.random_range(0..self.n_clients);
        }
        let mut best = 0;
        let mut best_loss = f64::INFINITY;
        for (j, m) in self.models.iter().enumerate() {
            let loss = cross_entropy(&self.mlp.logits(m, features), label);
            if loss < best_loss {
                best = j;
                best_loss = loss;
            }
        }
        best
    }
}

pub fn sia_attack<R: Rng + ?Sized>(
    mlp: &Mlp,
    candidates: &[ModelParams],
    n_clients: usize,
    features: &[f64],
    label: usize,
    rng: &mut R,
) -> usize {
    SiaCandidates::new(mlp, candidates, n_clients).guess(features, label, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub round: usize,
    pub record_id: usize,
    pub true_owner: usize,
    pub guess: usize,
}

impl Probe {
    pub fn correct(&self) -> bool {
        self.guess == self.true_owner
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub probes: Vec<Probe>,
    /// #correct / #probed over all rounds.
    pub success_rate: f64,
    pub baseline_random: f64,
    /// Success rate of each round, in round order.
    pub per_round: Vec<f64>,
    /// Highest per-round success rate and the round it came from.
    pub best_round: Option<(usize, f64)>,
}

impl AttackOutcome {
    pub fn from_probes(probes: Vec<Probe>, n_clients: usize) -> Self {
        let rounds = probes.iter().map(|p| p.round + 1).max().unwrap_or(0);
        let mut hits = vec![(0usize, 0usize); rounds];
        for p in &probes {
            hits[p.round].1 += 1;
            if p.correct() {
                hits[p.round].0 += 1;
            }
        }
        let per_round: Vec<f64> =
            hits.iter().map(|&(c, t)| if t == 0 { 0.0 } else { c as f64 / t as f64 }).collect();
        let mut best_round: Option<(usize, f64)> = None;
        for (r, &rate) in per_round.iter().enumerate() {
            if hits[r].1 > 0 && best_round.is_none_or(|(_, b)| rate > b) {
                best_round = Some((r, rate));
            }
        }
        let correct = probes.iter().filter(|p| p.correct()).count();
        let success_rate = if probes.is_empty() { 0.0 } else { correct as f64 / probes.len() as f64 };
        Self { probes, success_rate, baseline_random: 1.0 / n_clients as f64, per_round, best_round }
    }

    pub fn correct(&self) -> usize {
        self.probes.iter().filter(|p| p.correct()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::stats::binomial_acceptance_interval;

    fn candidates() -> (Mlp, Vec<ModelParams>) {
        let mlp = Mlp::new(2, 3, 2);
        let models = (0..4).map(|s| mlp.init(&mut seed::rng(s))).collect();
        (mlp, models)
    }

    #[test]
    fn memorizing_candidate_wins() {
        let (mlp, mut models) = candidates();
        // candidate 3 puts a huge logit on class 1 regardless of input
        let start = models[3].layout().final_layer().range.start;
        let bias1 = start + 2 * 3 + 1;
        models[3].flat_mut()[bias1] = 50.0;
        let mut rng = seed::rng(0);
        assert_eq!(sia_attack(&mlp, &models, 4, &[0.3, -0.2], 1, &mut rng), 3);
    }

    #[test]
    fn relabeling_candidates_relabels_the_guess() {
        let (mlp, models) = candidates();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<ModelParams> = perm.iter().map(|&i| models[i].clone()).collect();
        let mut rng = seed::rng(0);
        for t in 0..50 {
            let x = [t as f64 / 10.0 - 2.5, 1.0 - t as f64 / 25.0];
            let a = sia_attack(&mlp, &models, 4, &x, t % 2, &mut rng);
            let b = sia_attack(&mlp, &permuted, 4, &x, t % 2, &mut rng);
            assert_eq!(perm[b], a);
        }
    }

    #[test]
    fn identical_candidates_degrade_to_random_guessing() {
        let (mlp, models) = candidates();
        let same = vec![models[0].clone(); 10];
        let c = SiaCandidates::new(&mlp, &same, 10);
        assert!(c.is_degenerate());
        let single = SiaCandidates::new(&mlp, &same[..1], 10);
        assert!(single.is_degenerate());
        let mut rng = seed::rng(5);
        let hits = (0..1000).filter(|&i| c.guess(&[0.0, 1.0], 0, &mut rng) == i % 10).count();
        let (lo, hi) = binomial_acceptance_interval(1000, 0.1, 0.99);
        let rate = hits as f64 / 1000.0;
        assert!(lo <= rate && rate <= hi, "{rate} outside [{lo}, {hi}]");
    }

    #[test]
    fn outcome_bookkeeping() {
        let probes = vec![
            Probe { round: 0, record_id: 1, true_owner: 0, guess: 0 },
            Probe { round: 0, record_id: 2, true_owner: 1, guess: 0 },
            Probe { round: 1, record_id: 3, true_owner: 1, guess: 1 },
            Probe { round: 1, record_id: 4, true_owner: 2, guess: 2 },
        ];
        let o = AttackOutcome::from_probes(probes, 4);
        assert_eq!(o.success_rate, 0.75);
        assert_eq!(o.per_round, vec![0.5, 1.0]);
        assert_eq!(o.best_round, Some((1, 1.0)));
        assert_eq!(o.baseline_random, 0.25);
        assert_eq!(o.correct(), 3);
        let empty = AttackOutcome::from_probes(Vec::new(), 2);
        assert_eq!(empty.success_rate, 0.0);
        assert_eq!(empty.best_round, None);
    }
}
