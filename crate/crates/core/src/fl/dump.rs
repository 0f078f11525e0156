//! Binary dumps of datasets and partitions for attack replay.
//!
//! All integers and floats are little-endian.
//!
//! Dataset (`SLDS`, version 1):
//! ```text
//! magic[4] version:u16 reserved:u16 classes:u32 dim:u32 count:u64
//! has_generator:u8  [noise_std:f64 means:f64 × classes·dim]
//! count × (features:f64 × dim, label:u32)
//! ```
//!
//! Partition (`SLPT`, version 1):
//! ```text
//! magic[4] version:u16 reserved:u16 n_clients:u32 alpha:f64 count:u64
//! count × owner:u32
//! ```

use std::io::{Read, Write};

use super::data::{Dataset, GeneratorParams, Partition, Record};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"SLDS";
pub const PARTITION_MAGIC: &[u8; 4] = b"SLPT";
pub const DUMP_VERSION: u16 = 1;

pub fn write_dataset<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(ds.classes() as u32).to_le_bytes())?;
    w.write_all(&(ds.dim() as u32).to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    match ds.generator() {
        None => w.write_all(&[0])?,
        Some(g) => {
            w.write_all(&[1])?;
            w.write_all(&g.noise_std.to_le_bytes())?;
            for mean in &g.means {
                for v in mean {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    let (features, labels) = ds.raw_parts();
    for (row, &label) in features.chunks(ds.dim()).zip(labels) {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(label as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    expect_header(r, DATASET_MAGIC)?;
    let classes = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let count = read_u64(r)? as usize;
    let generator = match read_u8(r)? {
        0 => None,
        1 => {
            let noise_std = read_f64(r)?;
            let mut means = Vec::with_capacity(classes);
            for _ in 0..classes {
                means.push((0..dim).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?);
            }
            Some(GeneratorParams { means, noise_std })
        }
        flag => return Err(Error::Format(format!("bad generator flag {flag}"))),
    };
    let mut ds = Dataset::new(dim, classes, Vec::new())?;
    for _ in 0..count {
        let features = (0..dim).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let label = read_u32(r)? as usize;
        ds.push(Record { features, label })?;
    }
    Ok(match generator {
        Some(g) => ds.with_generator(g),
        None => ds,
    })
}

pub fn write_partition<W: Write>(p: &Partition, w: &mut W) -> Result<()> {
    w.write_all(PARTITION_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(p.n_clients() as u32).to_le_bytes())?;
    w.write_all(&p.alpha.to_le_bytes())?;
    w.write_all(&(p.owners.len() as u64).to_le_bytes())?;
    for &o in &p.owners {
        w.write_all(&(o as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_partition<R: Read>(r: &mut R) -> Result<Partition> {
    expect_header(r, PARTITION_MAGIC)?;
    let n = read_u32(r)? as usize;
    let alpha = read_f64(r)?;
    let count = read_u64(r)? as usize;
    let owners = (0..count).map(|_| read_u32(r).map(|o| o as usize)).collect::<Result<Vec<_>>>()?;
    Partition::from_owners(alpha, n, owners)
}

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!("bad magic {got:?}, expected {magic:?}")));
    }
    let version = read_u16(r)?;
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    read_u16(r)?;
    Ok(())
}

macro_rules! reader {
    ($name:ident, $ty:ty) => {
        pub(crate) fn $name<R: Read>(r: &mut R) -> Result<$ty> {
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            r.read_exact(&mut buf)?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

reader!(read_u8, u8);
reader!(read_u16, u16);
reader!(read_u32, u32);
reader!(read_u64, u64);
reader!(read_f64, f64);
