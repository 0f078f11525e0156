//! Static configuration checks. Nothing is trained or written.

use std::fmt;

use super::config::{Aggregation, AttackKind, Defense, ExperimentConfig, SCHEMA_VERSION};
use crate::cost::CostReport;
use crate::fl::LocalVariant;
use crate::rns::{select_moduli, MAX_PRECISION};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Validation {
    pub errors: Vec<Diagnostic>,
    /// Informational lines, e.g. the selected moduli and their cost.
    pub notes: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn check(&mut self, ok: bool, field: &'static str, message: impl Into<String>) {
        if !ok {
            self.errors.push(Diagnostic { field, message: message.into() });
        }
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Validation {
    let mut v = Validation::default();
    let n = cfg.n_clients;
    v.check(cfg.schema_version == SCHEMA_VERSION, "schema_version", format!("must be {SCHEMA_VERSION}"));
    v.check(n >= 2, "n_clients", "must be at least 2");
    v.check(cfg.alpha > 0.0 && cfg.alpha.is_finite(), "alpha", "must be positive and finite");

    let d = &cfg.dataset;
    v.check(d.classes >= 2, "dataset.classes", "must be at least 2");
    v.check(d.dim >= 2, "dataset.dim", "must be at least 2");
    v.check(d.samples >= n.max(1), "dataset.samples", "must be at least n_clients");
    v.check(d.test_samples >= 1, "dataset.test_samples", "must be at least 1");
    v.check(d.class_sep > 0.0 && d.class_sep.is_finite(), "dataset.class_sep", "must be positive");
    v.check(d.noise_std >= 0.0 && d.noise_std.is_finite(), "dataset.noise_std", "must be non-negative");
    v.check(cfg.model.hidden >= 1, "model.hidden", "must be at least 1");

    let t = &cfg.training;
    v.check(t.global_rounds >= 1, "training.global_rounds", "must be at least 1");
    v.check(t.local_epochs >= 1, "training.local_epochs", "must be at least 1");
    v.check(t.lr > 0.0 && t.lr.is_finite(), "training.lr", "must be positive");
    v.check((0.0..1.0).contains(&t.momentum), "training.momentum", "must lie in [0, 1)");
    v.check(t.batch_size >= 1, "training.batch_size", "must be at least 1");
    if let LocalVariant::Prox { mu } = t.variant {
        v.check(mu >= 0.0 && mu.is_finite(), "training.variant.mu", "must be non-negative");
    }
    match t.aggregation {
        Aggregation::FedAvg => {}
        Aggregation::FedSgd { lr } => {
            v.check(lr > 0.0 && lr.is_finite(), "training.aggregation.lr", "must be positive");
            v.check(
                cfg.attack.kind == AttackKind::None,
                "attack.kind",
                "attacks compare client models; use fed_avg or fed_median aggregation",
            );
        }
        Aggregation::FedMedian { cluster } => {
            v.check((1..=n).contains(&cluster), "training.aggregation.cluster", "must lie in 1..=n_clients");
        }
    }

    if let Some((r, strategy)) = cfg.defense.rns() {
        if !(1..=MAX_PRECISION).contains(&r) {
            v.check(false, "defense.r", format!("must lie in 1..={MAX_PRECISION}"));
        } else if n >= 1 {
            match select_moduli(n as u64, r, strategy).and_then(|ctx| CostReport::for_context(&ctx, strategy)) {
                Ok(c) => v.notes.push(format!(
                    "moduli {:?} (M admissible for n = {n}, r = {r}): {} bits unary, {} bits RLE, {} shuffle rounds",
                    c.moduli, c.alg1.bits, c.alg1_rle.bits, c.shuffle_rounds
                )),
                Err(e) => v.check(false, "defense.r", e.to_string()),
            }
        }
    }

    let a = &cfg.attack;
    if a.kind != AttackKind::None {
        v.check(a.probes_per_round >= 1, "attack.probes_per_round", "must be at least 1");
    }
    match (a.kind, cfg.defense) {
        (AttackKind::ReconM, Defense::LayerShuffle | Defense::ParamShuffle) => {
            v.check(false, "attack.kind", "recon_m needs whole models; the server only sees shuffled layers or parameters")
        }
        (AttackKind::ReconL, Defense::ParamShuffle) => {
            v.check(false, "attack.kind", "recon_l needs whole layers; the server only sees shuffled parameters")
        }
        _ => {}
    }
    v.check(
        cfg.shadow.fraction > 0.0 && cfg.shadow.fraction <= 1.0,
        "shadow.fraction",
        "must lie in (0, 1]",
    );
    if let Some(noise) = cfg.shadow.noise {
        v.check(noise >= 0.0 && noise.is_finite(), "shadow.noise", "must be non-negative");
    }
    v.check(cfg.mixnet.servers >= 1, "mixnet.servers", "must be at least 1");
    v.check(
        cfg.mixnet.trap_fraction > 0.0 && cfg.mixnet.trap_fraction <= 1.0,
        "mixnet.trap_fraction",
        "must lie in (0, 1]",
    );
    v
}
