//! The experiment loop: train, defend, attack, aggregate, evaluate.

use std::ops::Range;
use std::sync::Arc;

use rand::seq::index;
use serde::Serialize;

use super::config::{Aggregation, AttackKind, Defense, ExperimentConfig};
use super::validate::{validate, Validation};
use crate::attacks::{build_shadow, recon_layer, recon_model, recon_param, AttackOutcome, Probe, SiaCandidates};
use crate::bitvec::rle_width;
use crate::cost::{CostReport, VANILLA_BITS};
use crate::error::{Error, Result};
use crate::fl::aggregate::{fedavg_equal, fedmedian_clustered, fedsgd_step};
use crate::fl::data::{dirichlet_partition, gen_synthetic, Dataset, Partition, Record, SyntheticSpec};
use crate::fl::model::{clip_in_place, Layout, Mlp, ModelParams};
use crate::fl::{eval_accuracy, local_gradient, train_local, LocalTraining};
use crate::rns::{select_moduli, RnsContext};
use crate::seed;
use crate::shuffle::alg1::{run_protocol, ChannelShuffler, ClientEncoding, LocalShuffler};
use crate::shuffle::mixnet::{select_traps, MixnetConfig, MixnetShuffler, TrustLevel};
use crate::shuffle::{shuffle_layers, shuffle_models, shuffle_parameters, Payload};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRow {
    pub round: usize,
    pub model_accuracy: f64,
    pub sia_success: Option<f64>,
    pub bits_per_param: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rounds: Vec<RoundRow>,
    pub attack: Option<AttackOutcome>,
    pub final_accuracy: f64,
    pub cost: Option<CostReport>,
    pub wall_seconds: f64,
}

/// What the server holds after the shuffler (or protocol) has run.
enum ServerView {
    /// Submissions with their senders, no defense.
    Labeled(Vec<ModelParams>),
    Models(Vec<ModelParams>),
    Layers(Vec<Vec<Vec<f64>>>),
    Params(Vec<Vec<f64>>),
    /// Protocol outputs: one decoded mean per aggregation group.
    GroupMeans(Vec<(Range<usize>, ModelParams)>),
}

struct Federation {
    mlp: Mlp,
    train: Dataset,
    test: Dataset,
    partition: Partition,
    shards: Vec<Dataset>,
}

fn build_federation(cfg: &ExperimentConfig) -> Result<Federation> {
    let d = &cfg.dataset;
    let spec = SyntheticSpec {
        classes: d.classes,
        dim: d.dim,
        samples: d.samples,
        class_sep: d.class_sep,
        noise_std: d.noise_std,
    };
    let train = gen_synthetic(&spec, seed::derive(cfg.seed, "data", 0))?;
    let generator = train.generator().expect("synthetic data carries its generator").clone();
    let mut rng = seed::stream(cfg.seed, "test", 0);
    let mut test = Dataset::new(d.dim, d.classes, Vec::new())?;
    for i in 0..d.test_samples {
        let label = i % d.classes;
        test.push(Record { features: generator.sample(label, &mut rng), label })?;
    }
    let partition = dirichlet_partition(&train, cfg.n_clients, cfg.alpha, seed::derive(cfg.seed, "partition", 0))?;
    let shards = partition.client_shards.iter().map(|s| train.subset(s)).collect();
    Ok(Federation { mlp: Mlp::new(d.dim, cfg.model.hidden, d.classes), train, test, partition, shards })
}

/// Runs the experiment in memory. No files are touched.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = std::time::Instant::now();
    let Validation { errors, .. } = validate(cfg);
    if !errors.is_empty() {
        let joined: Vec<String> = errors.iter().map(ToString::to_string).collect();
        return Err(Error::ConfigInvalid(joined.join("; ")));
    }
    let fed = build_federation(cfg)?;
    let n = cfg.n_clients;
    let mlp = fed.mlp;
    let local = LocalTraining {
        epochs: cfg.training.local_epochs,
        lr: cfg.training.lr,
        momentum: cfg.training.momentum,
        batch_size: cfg.training.batch_size,
        variant: cfg.training.variant,
    };
    let rns = match cfg.defense.rns() {
        Some((r, strategy)) => {
            let groups = groups(cfg.training.aggregation, n);
            let mut contexts = Vec::new();
            for g in &groups {
                if !contexts.iter().any(|c: &RnsContext| c.n_clients() == g.len() as u64) {
                    contexts.push(select_moduli(g.len() as u64, r, strategy)?);
                }
            }
            Some((contexts, strategy))
        }
        None => None,
    };
    let bits_per_param = match (&cfg.defense, &rns) {
        (Defense::Alg1 { .. }, Some((c, _))) => c[0].moduli().iter().sum(),
        (Defense::Alg1Rle { .. }, Some((c, _))) => c[0].moduli().iter().map(|&m| rle_width(m) as u64).sum(),
        _ => VANILLA_BITS,
    };
    let cost = match &rns {
        Some((contexts, strategy)) => Some(CostReport::for_context(&contexts[0], *strategy)?),
        None => None,
    };

    let attacking = cfg.attack.kind != AttackKind::None;
    let shadows = if attacking && cfg.attack.kind != AttackKind::Sia {
        (0..n)
            .map(|t| {
                build_shadow(&fed.train, &fed.partition, t, cfg.shadow.fraction, cfg.shadow.noise, cfg.seed)
                    .map(|s| s.records)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut global = mlp.init(&mut seed::stream(cfg.seed, "init", 0));
    let mut rows = Vec::with_capacity(cfg.training.global_rounds);
    let mut probes = Vec::new();
    for round in 0..cfg.training.global_rounds {
        let submissions = (0..n)
            .map(|i| {
                let s = seed::derive(cfg.seed, "train", (round * n + i) as u64);
                match cfg.training.aggregation {
                    Aggregation::FedSgd { .. } => {
                        let g = local_gradient(&mlp, &global, &fed.shards[i])?;
                        let mut sub = ModelParams::from_flat(global.layout().clone(), g)?;
                        clip_in_place(&mut sub);
                        Ok(sub)
                    }
                    _ => train_local(&mlp, &global, &fed.shards[i], &local, s),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let shuffle_seed = seed::derive(cfg.seed, "shuffle", round as u64);
        let (view, aggregate) = defend(cfg, &submissions, rns.as_ref().map(|r| &r.0[..]), shuffle_seed)?;

        let mut sia_success = None;
        if attacking {
            let candidates = attack_candidates(cfg, &mlp, &view, &aggregate, &shadows)?;
            let sia = SiaCandidates::new(&mlp, &candidates, n);
            let mut rng = seed::stream(cfg.seed, "sia", round as u64);
            let count = cfg.attack.probes_per_round.min(fed.train.len());
            let picked = index::sample(&mut seed::stream(cfg.seed, "probes", round as u64), fed.train.len(), count);
            let mut ids = picked.into_vec();
            ids.sort_unstable();
            let mut hits = 0;
            for id in ids {
                let guess = sia.guess(fed.train.features(id), fed.train.label(id), &mut rng);
                let probe = Probe { round, record_id: id, true_owner: fed.partition.owners[id], guess };
                hits += probe.correct() as usize;
                probes.push(probe);
            }
            sia_success = Some(if count == 0 { 0.0 } else { hits as f64 / count as f64 });
        }

        global = match cfg.training.aggregation {
            Aggregation::FedSgd { lr } => {
                let mut g = fedsgd_step(&global, &[aggregate.flat().to_vec()], &[1.0], lr)?;
                clip_in_place(&mut g);
                g
            }
            _ => aggregate,
        };
        rows.push(RoundRow {
            round,
            model_accuracy: eval_accuracy(&mlp, &global, &fed.test),
            sia_success,
            bits_per_param,
        });
    }

    let attack = attacking.then(|| AttackOutcome::from_probes(probes, n));
    let final_accuracy = rows.last().map_or(0.0, |r| r.model_accuracy);
    Ok(ExperimentReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        rounds: rows,
        attack,
        final_accuracy,
        cost,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Consecutive client groups that are aggregated together.
fn groups(aggregation: Aggregation, n: usize) -> Vec<Range<usize>> {
    match aggregation {
        Aggregation::FedMedian { cluster } => {
            let count = n / cluster;
            (0..count).map(|c| c * cluster..if c + 1 == count { n } else { (c + 1) * cluster }).collect()
        }
        _ => std::iter::once(0..n).collect(),
    }
}

fn combine(cfg: &ExperimentConfig, models: &[ModelParams]) -> Result<ModelParams> {
    match cfg.training.aggregation {
        Aggregation::FedMedian { cluster } => fedmedian_clustered(models, cluster),
        _ => fedavg_equal(models),
    }
}

/// Pseudo-model i built from the i-th entry of every shuffled list.
fn pseudo_models(layout: &Arc<Layout>, n: usize, value: impl Fn(usize, usize) -> f64) -> Result<Vec<ModelParams>> {
    (0..n)
        .map(|i| ModelParams::from_flat(layout.clone(), (0..layout.total).map(|p| value(i, p)).collect()))
        .collect()
}

fn defend(
    cfg: &ExperimentConfig,
    subs: &[ModelParams],
    contexts: Option<&[RnsContext]>,
    shuffle_seed: u64,
) -> Result<(ServerView, ModelParams)> {
    let layout = subs[0].layout().clone();
    let n = subs.len();
    Ok(match cfg.defense {
        Defense::None => (ServerView::Labeled(subs.to_vec()), combine(cfg, subs)?),
        Defense::ModelShuffle => {
            let Payload::Models(models) = shuffle_models(subs, shuffle_seed).payload else { unreachable!() };
            let agg = combine(cfg, &models)?;
            (ServerView::Models(models), agg)
        }
        Defense::LayerShuffle => {
            let Payload::Layers(layers) = shuffle_layers(subs, shuffle_seed)?.payload else { unreachable!() };
            let starts: Vec<usize> = layout.layers.iter().map(|l| l.range.start).collect();
            let pseudo = pseudo_models(&layout, n, |i, p| {
                let l = starts.iter().rposition(|&s| s <= p).unwrap();
                layers[l][i][p - starts[l]]
            })?;
            (ServerView::Layers(layers), combine(cfg, &pseudo)?)
        }
        Defense::ParamShuffle => {
            let Payload::Parameters(params) = shuffle_parameters(subs, shuffle_seed)?.payload else { unreachable!() };
            let pseudo = pseudo_models(&layout, n, |i, p| params[p][i])?;
            (ServerView::Params(params), combine(cfg, &pseudo)?)
        }
        Defense::Alg1 { .. } | Defense::Alg1Rle { .. } => {
            let encoding =
                if matches!(cfg.defense, Defense::Alg1 { .. }) { ClientEncoding::Unary } else { ClientEncoding::Rle };
            let contexts = contexts.expect("RNS contexts prepared for protocol defenses");
            let mut means = Vec::new();
            for (g, range) in groups(cfg.training.aggregation, n).into_iter().enumerate() {
                let ctx = contexts.iter().find(|c| c.n_clients() == range.len() as u64).unwrap();
                let group_seed = seed::derive(shuffle_seed, "group", g as u64);
                let mut shuffler = make_shuffler(cfg, layout.total, group_seed)?;
                let out = run_protocol(&subs[range.clone()], ctx, encoding, shuffler.as_mut())?;
                means.push((range, out.aggregate));
            }
            let agg = if means.len() == 1 {
                means[0].1.clone()
            } else {
                let only: Vec<ModelParams> = means.iter().map(|(_, m)| m.clone()).collect();
                // the median of group means; each group mean is already a protocol output
                let mut out = ModelParams::zeros(layout.clone());
                let mut column = vec![0.0; only.len()];
                for (p, slot) in out.flat_mut().iter_mut().enumerate() {
                    for (c, m) in column.iter_mut().zip(&only) {
                        *c = m.flat()[p];
                    }
                    *slot = median(&mut column);
                }
                out
            };
            (ServerView::GroupMeans(means), agg)
        }
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

fn make_shuffler(cfg: &ExperimentConfig, param_count: usize, seed_value: u64) -> Result<Box<dyn ChannelShuffler>> {
    if cfg.trust == TrustLevel::FullyTrusted {
        return Ok(Box::new(LocalShuffler::new(seed_value)));
    }
    let traps = select_traps(param_count, cfg.mixnet.trap_fraction, seed::derive(seed_value, "traps", 0))?;
    let mix = MixnetConfig::honest(cfg.mixnet.servers, cfg.trust, seed::derive(seed_value, "mixnet", 0)).with_traps(traps);
    mix.validate(Some(param_count))?;
    Ok(Box::new(MixnetShuffler::new(mix, seed_value)?))
}

/// One candidate model per client label, as the configured attacker would
/// assemble it from the server's view.
fn attack_candidates(
    cfg: &ExperimentConfig,
    mlp: &Mlp,
    view: &ServerView,
    aggregate: &ModelParams,
    shadows: &[Dataset],
) -> Result<Vec<ModelParams>> {
    let n = cfg.n_clients;
    let layout = aggregate.layout().clone();
    let as_models = |view: &ServerView| -> Option<Vec<ModelParams>> {
        match view {
            ServerView::Labeled(m) | ServerView::Models(m) => Some(m.clone()),
            ServerView::GroupMeans(g) => Some(g.iter().map(|(_, m)| m.clone()).collect()),
            _ => None,
        }
    };
    let as_layers = |view: &ServerView| -> Option<Vec<Vec<Vec<f64>>>> {
        if let ServerView::Layers(l) = view {
            return Some(l.clone());
        }
        let models = as_models(view)?;
        Some((0..layout.layers.len()).map(|l| models.iter().map(|m| m.layer(l).to_vec()).collect()).collect())
    };
    let final_lists = |view: &ServerView| -> Vec<Vec<f64>> {
        let range = layout.final_layer().range.clone();
        match view {
            ServerView::Params(p) => p[range].to_vec(),
            ServerView::Layers(l) => {
                let last = l.len() - 1;
                (0..range.len()).map(|k| l[last].iter().map(|c| c[k]).collect()).collect()
            }
            other => {
                let models = as_models(other).expect("model-level view");
                range.map(|p| models.iter().map(|m| m.flat()[p]).collect()).collect()
            }
        }
    };

    match cfg.attack.kind {
        AttackKind::None => Ok(vec![aggregate.clone(); n]),
        AttackKind::Sia => Ok(match view {
            ServerView::Labeled(m) | ServerView::Models(m) => m.clone(),
            ServerView::Layers(layers) => {
                let starts: Vec<usize> = layout.layers.iter().map(|l| l.range.start).collect();
                pseudo_models(&layout, n, |i, p| {
                    let l = starts.iter().rposition(|&s| s <= p).unwrap();
                    layers[l][i][p - starts[l]]
                })?
            }
            ServerView::Params(params) => pseudo_models(&layout, n, |i, p| params[p][i])?,
            ServerView::GroupMeans(groups) => (0..n)
                .map(|i| groups.iter().find(|(r, _)| r.contains(&i)).unwrap().1.clone())
                .collect(),
        }),
        AttackKind::ReconM => {
            let models = as_models(view)
                .ok_or_else(|| Error::ConfigInvalid("recon_m needs a model-level server view".into()))?;
            shadows.iter().map(|s| Ok(recon_model(mlp, &models, s)?.1.model)).collect()
        }
        AttackKind::ReconL => {
            let layers = as_layers(view)
                .ok_or_else(|| Error::ConfigInvalid("recon_l needs a layer-level server view".into()))?;
            shadows.iter().map(|s| Ok(recon_layer(mlp, &layout, &layers, s)?.model)).collect()
        }
        AttackKind::ReconP => {
            let lists = final_lists(view);
            shadows.iter().map(|s| Ok(recon_param(mlp, aggregate, &lists, s)?.model)).collect()
        }
    }
}
