use shufflab::harness::{self, Aggregation, AttackKind, Defense, ExperimentConfig, SweepAxis};
use shufflab::rns::ModuliStrategy;
use shufflab::shuffle::mixnet::TrustLevel;
use shufflab::Error;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 3, n_clients: 4, alpha: 0.5, ..Default::default() };
    cfg.dataset.samples = 600;
    cfg.dataset.test_samples = 200;
    cfg.model.hidden = 8;
    cfg.training.global_rounds = 2;
    cfg.training.local_epochs = 2;
    cfg.attack.probes_per_round = 30;
    cfg
}

fn alg1(r: u32) -> Defense {
    Defense::Alg1 { r, strategy: ModuliStrategy::MinSumSearch }
}

#[test]
fn documented_example_parses() {
    let text = r#"
schema_version = 1
seed = 7
n_clients = 10
alpha = 0.1
trust = "full"
output_dir = "runs/demo"

[dataset]
classes = 10
dim = 20
samples = 4000
test_samples = 1000
class_sep = 4.0
noise_std = 1.0

[model]
hidden = 32

[training]
global_rounds = 10
local_epochs = 10
lr = 0.01
momentum = 0.9
batch_size = 64
variant = { kind = "plain" }
aggregation = { kind = "fed_avg" }

[defense]
kind = "alg1"
r = 4
strategy = "min_sum_search"

[attack]
kind = "sia"
probes_per_round = 100

[shadow]
fraction = 0.05
noise = 0.5

[mixnet]
servers = 3
trap_fraction = 0.01
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.defense, alg1(4));
    assert_eq!(cfg.shadow.noise, Some(0.5));
    assert!(harness::validate(&cfg).is_ok());
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn output_dir_does_not_change_the_hash() {
    let a = small();
    let b = ExperimentConfig { output_dir: Some("elsewhere".into()), ..small() };
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), ExperimentConfig { seed: 4, ..small() }.hash());
}

#[test]
fn run_writes_all_report_files() {
    let cfg = ExperimentConfig { defense: alg1(3), ..small() };
    let dir = tempfile::tempdir().unwrap();
    let report = harness::run(&cfg, dir.path()).unwrap();

    let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + cfg.training.global_rounds);
    assert!(rounds.starts_with("round,model_accuracy,sia_success,bits_per_param\n"));

    let attack = std::fs::read_to_string(dir.path().join("attack.csv")).unwrap();
    assert_eq!(attack.lines().count(), 1 + report.attack.as_ref().unwrap().probes.len());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], cfg.hash());
    assert_eq!(summary["sia"]["probes"], 60);
    assert!(summary["cost"]["alg1"]["bits"].as_u64().unwrap() > 0);
    assert!(dir.path().join("timing.json").exists());
}

#[test]
fn shuffler_trust_level_does_not_change_the_model() {
    let base = ExperimentConfig { defense: alg1(4), attack: Default::default(), ..small() };
    let full = harness::execute(&base).unwrap();
    for trust in [TrustLevel::SemiHonest, TrustLevel::PartiallyMalicious] {
        let other = harness::execute(&ExperimentConfig { trust, ..base.clone() }).unwrap();
        let acc = |r: &harness::ExperimentReport| r.rounds.iter().map(|x| x.model_accuracy).collect::<Vec<_>>();
        assert_eq!(acc(&full), acc(&other), "{trust}");
    }
}

#[test]
fn aggregation_rules_and_variants_run() {
    let median = ExperimentConfig {
        defense: alg1(3),
        training: shufflab::harness::config::TrainingConfig {
            aggregation: Aggregation::FedMedian { cluster: 2 },
            ..small().training
        },
        ..small()
    };
    assert!(harness::execute(&median).unwrap().final_accuracy > 0.0);

    let mut sgd = ExperimentConfig { defense: Defense::Alg1Rle { r: 3, strategy: ModuliStrategy::ConsecutivePrimes }, ..small() };
    sgd.training.aggregation = Aggregation::FedSgd { lr: 0.5 };
    sgd.attack.kind = AttackKind::None;
    let report = harness::execute(&sgd).unwrap();
    assert!(report.attack.is_none());
    assert!(report.rounds.iter().all(|r| r.sia_success.is_none()));
}

#[test]
fn reconstruction_attacks_run_under_their_defenses() {
    for (defense, kind) in [
        (Defense::ModelShuffle, AttackKind::ReconM),
        (Defense::LayerShuffle, AttackKind::ReconL),
        (Defense::ParamShuffle, AttackKind::ReconP),
    ] {
        let mut cfg = ExperimentConfig { defense, ..small() };
        cfg.attack.kind = kind;
        let outcome = harness::execute(&cfg).unwrap().attack.unwrap();
        assert_eq!(outcome.probes.len(), 60);
        assert!((0.0..=1.0).contains(&outcome.success_rate));
    }
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let cfg = ExperimentConfig { n_clients: 1, ..small() };
    assert!(matches!(harness::execute(&cfg), Err(Error::ConfigInvalid(_))));
    assert!(matches!(ExperimentConfig::from_toml("schema_version = 2"), Err(Error::ConfigInvalid(_))));
    assert!(matches!(ExperimentConfig::from_toml("sede = 1"), Err(Error::ConfigInvalid(_))));
}

#[test]
fn sweep_writes_one_directory_per_point_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { defense: alg1(2), ..small() };
    let reports = harness::sweep(&cfg, SweepAxis::R, &[2.0, 3.0], dir.path()).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(dir.path().join("r_2/summary.json").exists());
    assert!(dir.path().join("r_3/summary.json").exists());
    let table = std::fs::read_to_string(dir.path().join(harness::SWEEP_FILE)).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with(harness::SWEEP_HEADER));

    assert!(harness::sweep_point(&small(), SweepAxis::R, 3.0).is_err());
    assert!(harness::sweep_point(&small(), SweepAxis::NClients, 2.5).is_err());
    assert_eq!(harness::sweep_point(&small(), SweepAxis::Alpha, 10.0).unwrap().alpha, 10.0);
}
