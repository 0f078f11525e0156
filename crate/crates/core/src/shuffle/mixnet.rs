//! Simulated MixNet: a chain of servers, each stripping one onion layer and
//! shuffling. Cryptography is simulated.
//!
//! Sealing is a keyed XOR keystream with a fresh nonce per layer, so a
//! message looks different on every hop. It is pluggable through [`Sealer`]
//! and provides no secrecy against anyone who knows the construction.
//!
//! In `PartiallyMalicious` mode every hop is followed by a trap check that
//! stands in for a zero-knowledge proof: the next hop (or, after the last
//! server, the recipient) compares an order-independent digest of the
//! server's trap-labeled outputs with the digest of its correctly opened
//! trap inputs. Honest shuffling cannot be proved this way, so a server that
//! skips the shuffle goes unnoticed. Any single honest server still makes
//! the overall permutation uniform.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::alg1::ChannelShuffler;
use crate::bitvec::PackedBits;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrustLevel {
    /// A single trusted party: no sealing, no checks.
    #[serde(rename = "full", alias = "fully_trusted")]
    FullyTrusted,
    /// Servers follow the protocol but are curious: sealed, unchecked.
    #[serde(rename = "semi", alias = "semi_honest")]
    SemiHonest,
    /// Servers may deviate: sealed, with trap checks after every hop.
    #[serde(rename = "malicious", alias = "partially_malicious")]
    PartiallyMalicious,
}

impl FromStr for TrustLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "fully_trusted" => Ok(TrustLevel::FullyTrusted),
            "semi" | "semi_honest" => Ok(TrustLevel::SemiHonest),
            "malicious" | "partially_malicious" => Ok(TrustLevel::PartiallyMalicious),
            other => Err(Error::MixnetConfig(format!("unknown trust level {other:?}"))),
        }
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustLevel::FullyTrusted => "full",
            TrustLevel::SemiHonest => "semi",
            TrustLevel::PartiallyMalicious => "malicious",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ServerBehavior {
    Honest,
    /// Strips its layer but forwards messages in arrival order.
    SkipShuffle,
    /// Shuffles, then flips one bit of the first message labeled `param`.
    Tamper { param: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixServer {
    pub id: usize,
    pub key: u64,
    pub behavior: ServerBehavior,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixnetConfig {
    pub servers: Vec<MixServer>,
    pub trust: TrustLevel,
    pub trap_indices: BTreeSet<usize>,
}

impl MixnetConfig {
    /// `count` honest servers with keys derived from `seed_value`.
    pub fn honest(count: usize, trust: TrustLevel, seed_value: u64) -> Self {
        let servers = (0..count)
            .map(|id| MixServer { id, key: seed::derive(seed_value, "mix-key", id as u64), behavior: ServerBehavior::Honest })
            .collect();
        Self { servers, trust, trap_indices: BTreeSet::new() }
    }

    pub fn with_behavior(mut self, server: usize, behavior: ServerBehavior) -> Self {
        self.servers[server].behavior = behavior;
        self
    }

    pub fn with_traps(mut self, traps: BTreeSet<usize>) -> Self {
        self.trap_indices = traps;
        self
    }

    pub fn validate(&self, param_count: Option<usize>) -> Result<()> {
        if self.servers.is_empty() {
            return Err(Error::MixnetConfig("at least one server is required".into()));
        }
        if !self.servers.iter().any(|s| s.behavior == ServerBehavior::Honest) {
            return Err(Error::MixnetConfig("at least one server must be honest".into()));
        }
        if let (Some(count), Some(&max)) = (param_count, self.trap_indices.last()) {
            if max >= count {
                return Err(Error::MixnetConfig(format!("trap index {max} out of range for {count} parameters")));
            }
        }
        Ok(())
    }
}

/// A message as seen on the wire. `label` is (parameter, residue); it is
/// visible to every hop and carries no client identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MixMessage {
    pub label: (usize, usize),
    pub body: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    ServerFlagged(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteOutcome {
    pub output: Vec<MixMessage>,
    pub verdict: Verdict,
}

pub trait Sealer {
    fn seal(&self, key: u64, nonce: u64, plaintext: &[u8]) -> Vec<u8>;
    fn open(&self, key: u64, sealed: &[u8]) -> Result<Vec<u8>>;
}

/// `nonce ‖ plaintext ⊕ splitmix64(key, nonce)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeystreamSealer;

impl KeystreamSealer {
    fn apply(key: u64, nonce: u64, data: &mut [u8]) {
        let mut state = key ^ nonce.rotate_left(32);
        for chunk in data.chunks_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            for (b, k) in chunk.iter_mut().zip(z.to_le_bytes()) {
                *b ^= k;
            }
        }
    }
}

impl Sealer for KeystreamSealer {
    fn seal(&self, key: u64, nonce: u64, plaintext: &[u8]) -> Vec<u8> {
        let mut out = nonce.to_le_bytes().to_vec();
        let mut body = plaintext.to_vec();
        Self::apply(key, nonce, &mut body);
        out.extend(body);
        out
    }

    fn open(&self, key: u64, sealed: &[u8]) -> Result<Vec<u8>> {
        if sealed.len() < 8 {
            return Err(Error::Format("sealed envelope shorter than its nonce".into()));
        }
        let nonce = u64::from_le_bytes(sealed[..8].try_into().unwrap());
        let mut body = sealed[8..].to_vec();
        Self::apply(key, nonce, &mut body);
        Ok(body)
    }
}

/// Client side: wraps each plaintext in one layer per server, innermost
/// layer for the last server.
pub fn seal_onion(
    messages: Vec<MixMessage>,
    cfg: &MixnetConfig,
    sealer: &dyn Sealer,
    seed_value: u64,
) -> Vec<MixMessage> {
    if cfg.trust == TrustLevel::FullyTrusted {
        return messages;
    }
    let hops = cfg.servers.len() as u64;
    messages
        .into_iter()
        .enumerate()
        .map(|(i, mut m)| {
            for (s, server) in cfg.servers.iter().enumerate().rev() {
                let nonce = seed::derive(seed_value, "nonce", i as u64 * hops + s as u64);
                m.body = sealer.seal(server.key, nonce, &m.body);
            }
            m
        })
        .collect()
}

/// Order-independent digest of the trap-labeled messages: lane-wise wrapping
/// sum of SHA-256 over (label, body).
pub fn multiset_digest(messages: &[MixMessage], traps: &BTreeSet<usize>) -> [u64; 4] {
    let mut acc = [0u64; 4];
    for m in messages.iter().filter(|m| traps.contains(&m.label.0)) {
        let mut h = Sha256::new();
        h.update((m.label.0 as u64).to_le_bytes());
        h.update((m.label.1 as u64).to_le_bytes());
        h.update(&m.body);
        let d = h.finalize();
        for (lane, chunk) in acc.iter_mut().zip(d.chunks(8)) {
            *lane = lane.wrapping_add(u64::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    acc
}

pub fn mixnet_route(messages: Vec<MixMessage>, cfg: &MixnetConfig, seed_value: u64) -> Result<RouteOutcome> {
    route_with(messages, cfg, &KeystreamSealer, seed_value)
}

pub fn route_with(
    messages: Vec<MixMessage>,
    cfg: &MixnetConfig,
    sealer: &dyn Sealer,
    seed_value: u64,
) -> Result<RouteOutcome> {
    cfg.validate(None)?;
    let sealed = cfg.trust != TrustLevel::FullyTrusted;
    let checked = cfg.trust == TrustLevel::PartiallyMalicious;
    let mut batch = seal_onion(messages, cfg, sealer, seed::derive(seed_value, "onion", 0));
    for (hop, server) in cfg.servers.iter().enumerate() {
        let mut output = batch.clone();
        if sealed {
            for m in &mut output {
                m.body = sealer.open(server.key, &m.body)?;
            }
        }
        let expected = checked.then(|| multiset_digest(&output, &cfg.trap_indices));
        if server.behavior != ServerBehavior::SkipShuffle {
            output.shuffle(&mut seed::stream(seed_value, "mix-hop", hop as u64));
        }
        if let ServerBehavior::Tamper { param } = server.behavior {
            if let Some(m) = output.iter_mut().find(|m| m.label.0 == param) {
                match m.body.first_mut() {
                    Some(b) => *b ^= 1,
                    None => m.body.push(1),
                }
            }
        }
        // next hop (or recipient) checks this server's trap proof
        if let Some(expected) = expected {
            if multiset_digest(&output, &cfg.trap_indices) != expected {
                return Ok(RouteOutcome { output, verdict: Verdict::ServerFlagged(server.id) });
            }
        }
        batch = output;
    }
    Ok(RouteOutcome { output: batch, verdict: Verdict::Ok })
}

/// ⌈fraction · param_count⌉ distinct indices, uniformly at random.
pub fn select_traps(param_count: usize, fraction: f64, seed_value: u64) -> Result<BTreeSet<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::MixnetConfig(format!("trap fraction {fraction} not in (0, 1]")));
    }
    // tolerate representation error so that 0.01 · 940362 rounds to 9404
    let raw = fraction * param_count as f64;
    let count = ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).min(param_count);
    let mut rng = seed::stream(seed_value, "traps", 0);
    Ok(rand::seq::index::sample(&mut rng, param_count, count).into_iter().collect())
}

/// Runs every RNS bit channel through the MixNet, one bit per message.
/// A flagged server aborts the protocol.
pub struct MixnetShuffler {
    pub config: MixnetConfig,
    seed: u64,
}

impl MixnetShuffler {
    pub fn new(config: MixnetConfig, seed_value: u64) -> Result<Self> {
        config.validate(None)?;
        Ok(Self { config, seed: seed_value })
    }
}

impl ChannelShuffler for MixnetShuffler {
    fn shuffle_channel(&mut self, param: usize, residue: usize, bits: &mut PackedBits) -> Result<()> {
        let messages = bits.iter().map(|b| MixMessage { label: (param, residue), body: vec![b as u8] }).collect();
        let channel_seed = seed::derive(seed::derive(self.seed, "channel", param as u64), "residue", residue as u64);
        let outcome = mixnet_route(messages, &self.config, channel_seed)?;
        if let Verdict::ServerFlagged(id) = outcome.verdict {
            return Err(Error::ServerFlagged(id));
        }
        let mut out = PackedBits::with_capacity(bits.len());
        for m in outcome.output {
            match m.body.as_slice() {
                [b @ (0 | 1)] => out.push(*b == 1),
                _ => return Err(Error::Format(format!("corrupt mixnet payload for channel ({param}, {residue})"))),
            }
        }
        *bits = out;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn messages(n: usize) -> Vec<MixMessage> {
        (0..n).map(|i| MixMessage { label: (0, 0), body: vec![i as u8] }).collect()
    }

    fn order_counts(cfg: &MixnetConfig, trials: u64) -> [u64; 6] {
        const ORDERS: [[u8; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut counts = [0u64; 6];
        for t in 0..trials {
            let out = mixnet_route(messages(3), cfg, t).unwrap();
            assert_eq!(out.verdict, Verdict::Ok);
            let order: Vec<u8> = out.output.iter().map(|m| m.body[0]).collect();
            counts[ORDERS.iter().position(|o| o[..] == order[..]).unwrap()] += 1;
        }
        counts
    }

    fn uniform_p(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        let e = total as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn sealing_roundtrips_and_changes_bytes() {
        let s = KeystreamSealer;
        let sealed = s.seal(7, 11, b"hello");
        assert_eq!(sealed.len(), 13);
        assert_ne!(&sealed[8..], b"hello");
        assert_eq!(s.open(7, &sealed).unwrap(), b"hello");
        assert_ne!(s.open(8, &sealed).unwrap(), b"hello");
        assert!(s.open(7, &[1, 2]).is_err());
    }

    #[test]
    fn all_trust_levels_preserve_the_multiset() {
        for trust in [TrustLevel::FullyTrusted, TrustLevel::SemiHonest, TrustLevel::PartiallyMalicious] {
            let cfg = MixnetConfig::honest(3, trust, 5).with_traps([0].into());
            let input = messages(40);
            let out = mixnet_route(input.clone(), &cfg, 9).unwrap();
            assert_eq!(out.verdict, Verdict::Ok);
            let mut got = out.output.clone();
            got.sort();
            assert_eq!(got, input);
            assert_ne!(out.output, input);
        }
    }

    #[test]
    fn honest_routing_is_uniform() {
        let cfg = MixnetConfig::honest(3, TrustLevel::SemiHonest, 1);
        assert!(uniform_p(&order_counts(&cfg, 10_000)) > 0.001);
    }

    #[test]
    fn one_honest_server_suffices() {
        let cfg = MixnetConfig::honest(3, TrustLevel::PartiallyMalicious, 1)
            .with_behavior(0, ServerBehavior::SkipShuffle)
            .with_behavior(2, ServerBehavior::SkipShuffle);
        let counts = order_counts(&cfg, 10_000);
        assert!(uniform_p(&counts) > 0.001, "{counts:?}");
    }

    #[test]
    fn tampering_on_a_trap_is_flagged() {
        for server in 0..3 {
            let cfg = MixnetConfig::honest(3, TrustLevel::PartiallyMalicious, 2)
                .with_traps([4].into())
                .with_behavior(server, ServerBehavior::Tamper { param: 4 });
            for t in 0..50 {
                let input: Vec<MixMessage> =
                    (0..30).map(|i| MixMessage { label: (i % 6, 0), body: vec![i as u8, 1] }).collect();
                assert_eq!(mixnet_route(input, &cfg, t).unwrap().verdict, Verdict::ServerFlagged(server));
            }
        }
    }

    #[test]
    fn tampering_off_trap_or_unchecked_goes_through() {
        let input: Vec<MixMessage> = (0..12).map(|i| MixMessage { label: (i % 3, 0), body: vec![0] }).collect();
        let off_trap = MixnetConfig::honest(2, TrustLevel::PartiallyMalicious, 3)
            .with_traps([0].into())
            .with_behavior(1, ServerBehavior::Tamper { param: 1 });
        let out = mixnet_route(input.clone(), &off_trap, 0).unwrap();
        assert_eq!(out.verdict, Verdict::Ok);
        assert_eq!(out.output.iter().filter(|m| m.body == [1]).count(), 1);
        let unchecked = MixnetConfig { trust: TrustLevel::SemiHonest, ..off_trap }.with_traps([1].into());
        assert_eq!(mixnet_route(input, &unchecked, 0).unwrap().verdict, Verdict::Ok);
    }

    #[test]
    fn config_validation() {
        assert!(MixnetConfig::honest(0, TrustLevel::SemiHonest, 0).validate(None).is_err());
        let all_bad = MixnetConfig::honest(1, TrustLevel::SemiHonest, 0).with_behavior(0, ServerBehavior::SkipShuffle);
        assert!(mixnet_route(messages(3), &all_bad, 0).is_err());
        let traps = MixnetConfig::honest(1, TrustLevel::SemiHonest, 0).with_traps([10].into());
        assert!(traps.validate(Some(10)).is_err());
        assert!(traps.validate(Some(11)).is_ok());
        assert_eq!("malicious".parse::<TrustLevel>().unwrap(), TrustLevel::PartiallyMalicious);
        assert!("paranoid".parse::<TrustLevel>().is_err());
    }

    #[test]
    fn trap_selection() {
        assert_eq!(select_traps(940_362, 0.01, 1).unwrap().len(), 9404);
        assert_eq!(select_traps(50, 1.0, 1).unwrap(), (0..50).collect());
        assert_eq!(select_traps(1000, 0.1, 7).unwrap(), select_traps(1000, 0.1, 7).unwrap());
        assert_eq!(select_traps(1000, 0.1, 7).unwrap().len(), 100);
        assert!(select_traps(10, 0.0, 1).is_err());
        assert!(select_traps(10, 1.5, 1).is_err());
    }

    #[test]
    fn alg1_over_the_mixnet_matches_the_plain_aggregate() {
        use crate::fl::model::{Layout, ModelParams};
        use crate::rns::{select_moduli, ModuliStrategy};
        use crate::shuffle::alg1::{run_alg1, run_protocol, ClientEncoding};
        use std::sync::Arc;
        let layout = Arc::new(Layout::new(vec![("w.weight", vec![3])]));
        let models: Vec<ModelParams> = [[0.31, -0.2, 0.05], [0.12, 0.4, -0.77], [-0.5, 0.0, 0.66]]
            .iter()
            .map(|v| ModelParams::from_flat(layout.clone(), v.to_vec()).unwrap())
            .collect();
        let ctx = select_moduli(3, 2, ModuliStrategy::ConsecutivePrimes).unwrap();
        let cfg = MixnetConfig::honest(3, TrustLevel::PartiallyMalicious, 4).with_traps([1].into());
        let mut mix = MixnetShuffler::new(cfg.clone(), 4).unwrap();
        let out = run_protocol(&models, &ctx, ClientEncoding::Unary, &mut mix).unwrap();
        assert_eq!(out.aggregate, run_alg1(&models, &ctx, 4).unwrap().aggregate);

        let bad = cfg.with_behavior(1, ServerBehavior::Tamper { param: 1 });
        let mut mix = MixnetShuffler::new(bad, 4).unwrap();
        let err = run_protocol(&models, &ctx, ClientEncoding::Unary, &mut mix).unwrap_err();
        assert!(matches!(err, Error::ServerFlagged(1)));
    }
}
