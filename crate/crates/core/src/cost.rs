//! Per-parameter, per-client upload cost of each aggregation scheme.

use serde::{Deserialize, Serialize};

use crate::bitvec::rle_width;
use crate::error::{Error, Result};
use crate::rns::{select_moduli, ModuliStrategy, RnsContext};

/// Bits of the plain floating-point encoding.
pub const VANILLA_BITS: u64 = 32;

/// Unary RNS: one m_i-bit block per modulus.
pub fn cost_alg1(ctx: &RnsContext) -> u64 {
    ctx.moduli().iter().sum()
}

/// Counts sent to a trusted shuffler: ⌈log2 m_i⌉ bits per modulus.
pub fn cost_alg1_rle(ctx: &RnsContext) -> u64 {
    ctx.moduli().iter().map(|&m| rle_width(m) as u64).sum()
}

/// Share width C: the fewest bits that hold any sum of n signed values of
/// magnitude at most 10^r − 1, i.e. ⌈log2(2·n·(10^r − 1) + 1)⌉.
pub fn secure_agg_share_bits(n_clients: u64, precision: u32) -> Result<u64> {
    if n_clients < 2 {
        return Err(Error::InvalidParameters("secure aggregation needs at least 2 clients".into()));
    }
    let v = 10u128
        .checked_pow(precision)
        .map(|p| p - 1)
        .ok_or_else(|| Error::InvalidParameters(format!("precision {precision} too large")))?;
    let span = (n_clients as u128)
        .checked_mul(v)
        .and_then(|x| x.checked_mul(2))
        .ok_or_else(|| Error::InvalidParameters("2·n·(10^r − 1) overflows".into()))?;
    // ⌈log2(span + 1)⌉ = bit length of span
    Ok((u128::BITS - span.leading_zeros()) as u64)
}

/// One share of width C for each of the other n − 1 clients.
pub fn cost_secure_agg(n_clients: u64, precision: u32) -> Result<u64> {
    Ok(secure_agg_share_bits(n_clients, precision)? * (n_clients - 1))
}

pub fn expansion_factor(bits: u64) -> f64 {
    bits as f64 / VANILLA_BITS as f64
}

/// Channels each parameter needs shuffled, one per modulus.
pub fn shuffle_rounds(ctx: &RnsContext) -> usize {
    ctx.moduli().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeCost {
    pub bits: u64,
    pub expansion: f64,
}

impl SchemeCost {
    fn new(bits: u64) -> Self {
        Self { bits, expansion: expansion_factor(bits) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n_clients: u64,
    pub precision: u32,
    pub strategy: ModuliStrategy,
    pub moduli: Vec<u64>,
    pub alg1: SchemeCost,
    pub alg1_rle: SchemeCost,
    pub vanilla: SchemeCost,
    pub secure_agg: SchemeCost,
    pub shuffle_rounds: usize,
}

impl CostReport {
    pub fn for_context(ctx: &RnsContext, strategy: ModuliStrategy) -> Result<Self> {
        let n = ctx.n_clients();
        let sa = if n >= 2 { cost_secure_agg(n, ctx.precision())? } else { 0 };
        Ok(Self {
            n_clients: n,
            precision: ctx.precision(),
            strategy,
            moduli: ctx.moduli().to_vec(),
            alg1: SchemeCost::new(cost_alg1(ctx)),
            alg1_rle: SchemeCost::new(cost_alg1_rle(ctx)),
            vanilla: SchemeCost::new(VANILLA_BITS),
            secure_agg: SchemeCost::new(sa),
            shuffle_rounds: shuffle_rounds(ctx),
        })
    }

    pub fn compute(n_clients: u64, precision: u32, strategy: ModuliStrategy) -> Result<Self> {
        Self::for_context(&select_moduli(n_clients, precision, strategy)?, strategy)
    }

    pub const CSV_HEADER: &'static str =
        "n_clients,r,strategy,moduli,alg1_bits,alg1_rle_bits,vanilla_bits,secure_agg_bits,alg1_expansion,alg1_rle_expansion,shuffle_rounds";

    pub fn csv_row(&self) -> String {
        let moduli: Vec<String> = self.moduli.iter().map(u64::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{},{:.4},{:.4},{}",
            self.n_clients,
            self.precision,
            self.strategy,
            moduli.join(" "),
            self.alg1.bits,
            self.alg1_rle.bits,
            self.vanilla.bits,
            self.secure_agg.bits,
            self.alg1.expansion,
            self.alg1_rle.expansion,
            self.shuffle_rounds
        )
    }
}
