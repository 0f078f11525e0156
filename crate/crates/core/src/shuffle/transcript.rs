//! Binary dump of a shuffled bit transcript.
//!
//! Little-endian throughout:
//! ```text
//! magic "SLTX"  version:u16  granularity:u8  reserved:u8
//! n_clients:u64  precision:u32  u:u32  moduli:u64 × u  param_count:u64
//! param_count × ⌈n·Σm_j / 8⌉ bytes
//! ```
//! Each parameter block is the concatenation of its channels (residue
//! order) packed LSB-first, zero-padded to a byte boundary.

use std::io::{Read, Write};

use super::Granularity;
use crate::bitvec::{BitChannelBatch, PackedBits};
use crate::error::{Error, Result};
use crate::fl::dump::{read_u16, read_u32, read_u64, read_u8};

pub const TRANSCRIPT_MAGIC: &[u8; 4] = b"SLTX";
pub const TRANSCRIPT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub granularity: Granularity,
    pub precision: u32,
    pub batch: BitChannelBatch,
}

/// Bytes per parameter block: ⌈n·Σm_j / 8⌉.
pub fn block_bytes(n_clients: usize, moduli: &[u64]) -> usize {
    (n_clients * moduli.iter().sum::<u64>() as usize).div_ceil(8)
}

pub fn header_bytes(u: usize) -> usize {
    4 + 2 + 1 + 1 + 8 + 4 + 4 + 8 * u + 8
}

pub fn write_transcript<W: Write>(t: &Transcript, w: &mut W) -> Result<()> {
    let b = &t.batch;
    w.write_all(TRANSCRIPT_MAGIC)?;
    w.write_all(&TRANSCRIPT_VERSION.to_le_bytes())?;
    w.write_all(&[t.granularity.code(), 0])?;
    w.write_all(&(b.n_clients() as u64).to_le_bytes())?;
    w.write_all(&t.precision.to_le_bytes())?;
    w.write_all(&(b.moduli().len() as u32).to_le_bytes())?;
    for &m in b.moduli() {
        w.write_all(&m.to_le_bytes())?;
    }
    w.write_all(&(b.param_count() as u64).to_le_bytes())?;
    for p in 0..b.param_count() {
        w.write_all(&b.parameter_bits(p).to_bytes())?;
    }
    Ok(())
}

pub fn read_transcript<R: Read>(r: &mut R) -> Result<Transcript> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRANSCRIPT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u16(r)?;
    if version != TRANSCRIPT_VERSION {
        return Err(Error::Format(format!("unsupported transcript version {version}")));
    }
    let code = read_u8(r)?;
    let granularity = Granularity::from_code(code).ok_or_else(|| Error::Format(format!("bad granularity {code}")))?;
    read_u8(r)?;
    let n = read_u64(r)? as usize;
    let precision = read_u32(r)?;
    let u = read_u32(r)? as usize;
    let moduli = (0..u).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
    let params = read_u64(r)? as usize;
    let mut channels = Vec::with_capacity(params * u);
    let mut block = vec![0u8; block_bytes(n, &moduli)];
    for _ in 0..params {
        r.read_exact(&mut block)?;
        let total = n * moduli.iter().sum::<u64>() as usize;
        let bits = PackedBits::from_bytes(&block, total)?;
        let mut offset = 0;
        for &m in &moduli {
            let len = n * m as usize;
            let mut ch = PackedBits::with_capacity(len);
            for i in offset..offset + len {
                ch.push(bits.get(i));
            }
            offset += len;
            channels.push(ch);
        }
    }
    let batch = BitChannelBatch::from_channels(n, moduli, channels)?;
    Ok(Transcript { granularity, precision, batch })
}
