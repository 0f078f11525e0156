//! Experiment configuration (TOML, schema version 1).
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! n_clients = 10
//! alpha = 0.1
//! trust = "full"            # full | semi | malicious
//! output_dir = "runs/demo"  # optional, not part of the config hash
//!
//! [dataset]
//! classes = 10
//! dim = 20
//! samples = 4000
//! test_samples = 1000
//! class_sep = 4.0
//! noise_std = 1.0
//!
//! [model]
//! hidden = 32
//!
//! [training]
//! global_rounds = 10
//! local_epochs = 10
//! lr = 0.01
//! momentum = 0.9
//! batch_size = 64
//! variant = { kind = "plain" }            # or { kind = "prox", mu = 0.01 }
//! aggregation = { kind = "fed_avg" }      # fed_sgd { lr } | fed_median { cluster }
//!
//! [defense]
//! kind = "alg1"                           # none | model_shuffle | layer_shuffle
//! r = 4                                   # | param_shuffle | alg1 | alg1_rle
//! strategy = "min_sum_search"
//!
//! [attack]
//! kind = "sia"                            # none | sia | recon_m | recon_l | recon_p
//! probes_per_round = 100
//!
//! [shadow]
//! fraction = 0.05
//! noise = 0.5                             # optional Gaussian feature noise
//!
//! [mixnet]
//! servers = 3
//! trap_fraction = 0.01
//! ```
//!
//! Every section and most fields have defaults; see [`ExperimentConfig::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fl::LocalVariant;
use crate::rns::ModuliStrategy;
use crate::shuffle::mixnet::TrustLevel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub n_clients: usize,
    pub alpha: f64,
    pub trust: TrustLevel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub defense: Defense,
    pub attack: AttackConfig,
    pub shadow: ShadowConfig,
    pub mixnet: MixnetSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            n_clients: 10,
            alpha: 0.1,
            trust: TrustLevel::FullyTrusted,
            output_dir: None,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            defense: Defense::None,
            attack: AttackConfig::default(),
            shadow: ShadowConfig::default(),
            mixnet: MixnetSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub class_sep: f64,
    pub noise_std: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { classes: 10, dim: 20, samples: 4000, test_samples: 1000, class_sep: 4.0, noise_std: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregation {
    FedAvg,
    /// One full-batch local gradient per client, applied with `lr`.
    FedSgd { lr: f64 },
    /// Median over means of consecutive clusters of `cluster` clients.
    FedMedian { cluster: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub global_rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub variant: LocalVariant,
    pub aggregation: Aggregation,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            global_rounds: 10,
            local_epochs: 10,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            variant: LocalVariant::Plain,
            aggregation: Aggregation::FedAvg,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    ModelShuffle,
    LayerShuffle,
    ParamShuffle,
    Alg1 {
        r: u32,
        #[serde(default = "default_strategy")]
        strategy: ModuliStrategy,
    },
    Alg1Rle {
        r: u32,
        #[serde(default = "default_strategy")]
        strategy: ModuliStrategy,
    },
}

fn default_strategy() -> ModuliStrategy {
    ModuliStrategy::MinSumSearch
}

impl Defense {
    pub fn rns(&self) -> Option<(u32, ModuliStrategy)> {
        match *self {
            Defense::Alg1 { r, strategy } | Defense::Alg1Rle { r, strategy } => Some((r, strategy)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::ModelShuffle => "model_shuffle",
            Defense::LayerShuffle => "layer_shuffle",
            Defense::ParamShuffle => "param_shuffle",
            Defense::Alg1 { .. } => "alg1",
            Defense::Alg1Rle { .. } => "alg1_rle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Sia,
    ReconM,
    ReconL,
    ReconP,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub probes_per_round: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { kind: AttackKind::Sia, probes_per_round: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowConfig {
    pub fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self { fraction: 0.05, noise: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixnetSettings {
    pub servers: usize,
    pub trap_fraction: f64,
}

impl Default for MixnetSettings {
    fn default() -> Self {
        Self { servers: 3, trap_fraction: 0.01 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::ConfigInvalid(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 over the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes to JSON");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
