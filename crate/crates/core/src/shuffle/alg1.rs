//! Parameter-level shuffling with RNS and unary encoding.
//!
//! Clients quantize each parameter to ⌊p·10^r⌋, encode it in RNS and send
//! one unary block per residue (or, to a fully trusted shuffler, just the
//! residue count). The shuffler concatenates the blocks of all clients into
//! one channel per (parameter, residue) and permutes each channel bit by
//! bit. The server can only count ones: popcounts reduced mod m_j are the
//! residues of the sum, which CRT decodes.

use crate::bitvec::{rle_compress, rle_decompress, unary_encode, BitChannelBatch, PackedBits, UnaryBits};
use crate::error::{Error, Result};
use crate::fl::model::ModelParams;
use crate::rns::{scale_quantize, RnsContext};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientEncoding {
    /// Clients send U(x_j, m_j) for every residue.
    Unary,
    /// Clients send the count x_j in ⌈log2 m_j⌉ bits; the shuffler expands it.
    Rle,
}

/// Permutes one channel. Implementations must keep length and popcount.
pub trait ChannelShuffler {
    fn shuffle_channel(&mut self, param: usize, residue: usize, bits: &mut PackedBits) -> Result<()>;
}

/// In-process shuffler: Fisher–Yates per channel, with an independent stream
/// per (parameter, residue).
#[derive(Clone, Copy, Debug)]
pub struct LocalShuffler {
    seed: u64,
}

impl LocalShuffler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ChannelShuffler for LocalShuffler {
    fn shuffle_channel(&mut self, param: usize, residue: usize, bits: &mut PackedBits) -> Result<()> {
        let param_seed = seed::derive(self.seed, "channel", param as u64);
        bits.shuffle(&mut seed::stream(param_seed, "residue", residue as u64));
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alg1Output {
    /// Σ_i ⌊p_i·10^r⌋ / 10^r / n for every parameter.
    pub aggregate: ModelParams,
    /// The decoded integer sums Σ_i ⌊p_i·10^r⌋.
    pub quantized_sums: Vec<i128>,
    /// The shuffled channels as the server received them.
    pub transcript: BitChannelBatch,
    /// Bits each client uploaded.
    pub uplink_bits_per_client: u64,
}

pub fn run_alg1(models: &[ModelParams], ctx: &RnsContext, seed_value: u64) -> Result<Alg1Output> {
    run_protocol(models, ctx, ClientEncoding::Unary, &mut LocalShuffler::new(seed_value))
}

pub fn run_alg1_rle(models: &[ModelParams], ctx: &RnsContext, seed_value: u64) -> Result<Alg1Output> {
    run_protocol(models, ctx, ClientEncoding::Rle, &mut LocalShuffler::new(seed_value))
}

pub fn run_protocol(
    models: &[ModelParams],
    ctx: &RnsContext,
    encoding: ClientEncoding,
    shuffler: &mut dyn ChannelShuffler,
) -> Result<Alg1Output> {
    ModelParams::check_layouts(models)?;
    if models.len() as u64 != ctx.n_clients() {
        return Err(Error::ContextMismatch);
    }
    let moduli = ctx.moduli();
    let basis = ctx.basis();

    // Client side.
    let mut residues: Vec<Vec<Vec<u64>>> = Vec::with_capacity(models.len());
    for model in models {
        let rows = model
            .flat()
            .iter()
            .map(|&p| {
                let q = scale_quantize(p, ctx.precision())?;
                Ok(basis.encode(q as i128)?.residues().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        residues.push(rows);
    }

    // Transport: what each client uploads, and what the shuffler holds.
    let (submissions, uplink) = match encoding {
        ClientEncoding::Unary => {
            let subs = residues
                .iter()
                .map(|rows| {
                    rows.iter()
                        .map(|row| {
                            row.iter().zip(moduli).map(|(&x, &m)| unary_encode(x, m)).collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            (subs, moduli.iter().sum::<u64>())
        }
        ClientEncoding::Rle => {
            let mut width = 0u64;
            let subs = residues
                .iter()
                .map(|rows| {
                    rows.iter()
                        .map(|row| {
                            row.iter()
                                .zip(moduli)
                                .map(|(&x, &m)| rle_decompress(rle_compress(x, m)?, m))
                                .collect::<Result<Vec<UnaryBits>>>()
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            for &m in moduli {
                width += rle_compress(0, m)?.width as u64;
            }
            (subs, width)
        }
    };
    let param_count = models[0].len() as u64;

    // Shuffler side.
    let mut batch = BitChannelBatch::from_unary(moduli, &submissions)?;
    drop(submissions);
    let mut failure = None;
    batch.permute_channels(|p, j, ch| {
        if failure.is_none() {
            if let Err(e) = shuffler.shuffle_channel(p, j, ch) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    // Server side.
    let (aggregate, quantized_sums) = decode_transcript(models[0].layout().clone(), &batch, ctx)?;
    Ok(Alg1Output { aggregate, quantized_sums, transcript: batch, uplink_bits_per_client: uplink * param_count })
}

/// Server decoding: popcounts mod m_j → CRT (signed) → / 10^r / n.
pub fn decode_transcript(
    layout: std::sync::Arc<crate::fl::model::Layout>,
    batch: &BitChannelBatch,
    ctx: &RnsContext,
) -> Result<(ModelParams, Vec<i128>)> {
    if batch.moduli() != ctx.moduli() || batch.n_clients() as u64 != ctx.n_clients() {
        return Err(Error::ContextMismatch);
    }
    let basis = ctx.basis();
    let sums = batch
        .reduced_sums()
        .into_iter()
        .map(|row| Ok(basis.residues(row)?.decode_signed()))
        .collect::<Result<Vec<i128>>>()?;
    let scale = ctx.scale();
    let n = ctx.n_clients() as f64;
    let values = sums.iter().map(|&s| (s as f64 / scale) / n).collect();
    Ok((ModelParams::from_flat(layout, values)?, sums))
}

/// Pre-scales each client's parameters by n·N_i/N so the unweighted
/// protocol mean equals the size-weighted FedAvg. Fails if a scaled
/// parameter leaves (−1, 1).
pub fn prescale_for_weighted(models: &[ModelParams], sizes: &[f64]) -> Result<Vec<ModelParams>> {
    if sizes.len() != models.len() {
        return Err(Error::LayoutMismatch(format!("{} models but {} sizes", models.len(), sizes.len())));
    }
    let total: f64 = sizes.iter().sum();
    let n = models.len() as f64;
    models
        .iter()
        .zip(sizes)
        .map(|(m, &s)| {
            let factor = n * s / total;
            let mut out = m.clone();
            for p in out.flat_mut() {
                *p *= factor;
                if p.is_nan() || p.abs() >= 1.0 {
                    return Err(Error::OutOfRange(*p));
                }
            }
            Ok(out)
        })
        .collect()
}
