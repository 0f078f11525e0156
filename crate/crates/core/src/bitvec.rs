//! Packed bit vectors, unary encoding and the run-length counts sent to a
//! fully trusted shuffler.
//!
//! Bits are stored least-significant first inside `u64` words: bit `i` lives
//! in word `i / 64` at position `i % 64`. Serialized words are little-endian,
//! so the byte stream is LSB-first as well.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

const WORD: usize = 64;

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct PackedBits {
    words: Vec<u64>,
    len: usize,
}

impl PackedBits {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(WORD)], len }
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self { words: Vec::with_capacity(bits.div_ceil(WORD)), len: 0 }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = PackedBits::default();
        for b in bits {
            out.push(b);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of bounds for length {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of bounds for length {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    pub fn swap(&mut self, i: usize, j: usize) {
        let (a, b) = (self.get(i), self.get(j));
        if a != b {
            self.set(i, b);
            self.set(j, a);
        }
    }

    pub fn push(&mut self, value: bool) {
        if self.len.is_multiple_of(WORD) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, value);
    }

    /// Appends `count` ones.
    pub fn push_ones(&mut self, count: usize) {
        self.push_run(count, true);
    }

    pub fn push_zeros(&mut self, count: usize) {
        self.push_run(count, false);
    }

    fn push_run(&mut self, count: usize, value: bool) {
        let mut remaining = count;
        // Fill the current partial word bit by bit, then whole words.
        while remaining > 0 && !self.len.is_multiple_of(WORD) {
            self.push(value);
            remaining -= 1;
        }
        while remaining >= WORD {
            self.words.push(if value { u64::MAX } else { 0 });
            self.len += WORD;
            remaining -= WORD;
        }
        for _ in 0..remaining {
            self.push(value);
        }
    }

    pub fn extend_from(&mut self, other: &PackedBits) {
        if self.len.is_multiple_of(WORD) {
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
        } else {
            for b in other.iter() {
                self.push(b);
            }
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Uniform in-place bit permutation (Fisher–Yates).
    pub fn shuffle<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in (1..self.len).rev() {
            let j = rng.random_range(0..=i);
            self.swap(i, j);
        }
    }

    /// LSB-first bytes, `⌈len / 8⌉` of them; trailing pad bits are zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let mut words = vec![0u64; len.div_ceil(WORD)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        let tail = len % WORD;
        if tail != 0 {
            let last = words.last_mut().unwrap();
            if *last >> tail != 0 {
                return Err(Error::Format("non-zero padding bits".into()));
            }
        }
        Ok(Self { words, len })
    }
}

impl fmt::Debug for PackedBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackedBits(")?;
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        write!(f, ")")
    }
}

/// U(x, k): `x` ones followed by `k − x` zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnaryBits {
    bits: PackedBits,
}

impl UnaryBits {
    pub fn bits(&self) -> &PackedBits {
        &self.bits
    }

    pub fn into_bits(self) -> PackedBits {
        self.bits
    }

    pub fn capacity(&self) -> usize {
        self.bits.len()
    }
}

pub fn unary_encode(x: u64, k: u64) -> Result<UnaryBits> {
    if x > k {
        return Err(Error::Overflow { value: x, capacity: k });
    }
    let mut bits = PackedBits::with_capacity(k as usize);
    bits.push_ones(x as usize);
    bits.push_zeros((k - x) as usize);
    Ok(UnaryBits { bits })
}

/// The only thing a shuffled unary vector reveals: its number of ones.
pub fn unary_sum(bits: &PackedBits) -> u64 {
    bits.count_ones()
}

/// A residue sent as a fixed-width count instead of its unary expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RleCount {
    pub value: u64,
    pub width: u32,
}

/// Bits needed for a count in [0, m − 1]: ⌈log2 m⌉.
pub fn rle_width(m: u64) -> u32 {
    assert!(m >= 1);
    if m == 1 {
        0
    } else {
        u64::BITS - (m - 1).leading_zeros()
    }
}

pub fn rle_compress(x: u64, m: u64) -> Result<RleCount> {
    if x >= m {
        return Err(Error::Overflow { value: x, capacity: m.saturating_sub(1) });
    }
    Ok(RleCount { value: x, width: rle_width(m) })
}

pub fn rle_decompress(count: RleCount, m: u64) -> Result<UnaryBits> {
    if count.value >= m {
        return Err(Error::Overflow { value: count.value, capacity: m.saturating_sub(1) });
    }
    unary_encode(count.value, m)
}

/// Per-parameter, per-residue concatenated channels B_{p,j}.
///
/// Channel `(p, j)` holds one `m_j`-bit unary block per client. Before
/// shuffling, client `i` occupies bits `[i·m_j, (i+1)·m_j)` and
/// `origin_spans` records those offsets; a shuffled batch carries none.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitChannelBatch {
    n_clients: usize,
    moduli: Vec<u64>,
    channels: Vec<PackedBits>,
    origin_spans: Option<Vec<Vec<usize>>>,
}

impl BitChannelBatch {
    /// Builds the batch from per-client residue submissions:
    /// `residues[client][param][j]`.
    pub fn from_residues(moduli: &[u64], residues: &[Vec<Vec<u64>>]) -> Result<Self> {
        let n = residues.len();
        let params = residues.first().map_or(0, Vec::len);
        let u = moduli.len();
        let mut channels = Vec::with_capacity(params * u);
        for p in 0..params {
            for (j, &m) in moduli.iter().enumerate() {
                let mut channel = PackedBits::with_capacity(n * m as usize);
                for client in residues {
                    let row = client.get(p).ok_or_else(|| {
                        Error::LayoutMismatch("clients submitted different parameter counts".into())
                    })?;
                    if row.len() != u {
                        return Err(Error::ContextMismatch);
                    }
                    let x = row[j];
                    if x >= m {
                        return Err(Error::Overflow { value: x, capacity: m - 1 });
                    }
                    channel.push_ones(x as usize);
                    channel.push_zeros((m - x) as usize);
                }
                channels.push(channel);
            }
        }
        if residues.iter().any(|c| c.len() != params) {
            return Err(Error::LayoutMismatch("clients submitted different parameter counts".into()));
        }
        let spans = moduli
            .iter()
            .map(|&m| (0..n).map(|i| i * m as usize).collect())
            .collect();
        Ok(Self { n_clients: n, moduli: moduli.to_vec(), channels, origin_spans: Some(spans) })
    }

    /// Shuffler-side concatenation of client submissions:
    /// `submissions[client][param][j]` is the unary block for residue j.
    pub fn from_unary(moduli: &[u64], submissions: &[Vec<Vec<UnaryBits>>]) -> Result<Self> {
        let n = submissions.len();
        let params = submissions.first().map_or(0, Vec::len);
        if submissions.iter().any(|c| c.len() != params) {
            return Err(Error::LayoutMismatch("clients submitted different parameter counts".into()));
        }
        let mut channels = Vec::with_capacity(params * moduli.len());
        for p in 0..params {
            for (j, &m) in moduli.iter().enumerate() {
                let mut channel = PackedBits::with_capacity(n * m as usize);
                for client in submissions {
                    let block = client[p].get(j).ok_or(Error::ContextMismatch)?;
                    if block.capacity() as u64 != m {
                        return Err(Error::ContextMismatch);
                    }
                    channel.extend_from(block.bits());
                }
                channels.push(channel);
            }
        }
        let spans = moduli.iter().map(|&m| (0..n).map(|i| i * m as usize).collect()).collect();
        Ok(Self { n_clients: n, moduli: moduli.to_vec(), channels, origin_spans: Some(spans) })
    }

    pub fn from_channels(n_clients: usize, moduli: Vec<u64>, channels: Vec<PackedBits>) -> Result<Self> {
        let u = moduli.len();
        if u == 0 || !channels.len().is_multiple_of(u) {
            return Err(Error::Format("channel count is not a multiple of the modulus count".into()));
        }
        for (idx, ch) in channels.iter().enumerate() {
            let expected = n_clients * moduli[idx % u] as usize;
            if ch.len() != expected {
                return Err(Error::Format(format!(
                    "channel {idx} has {} bits, expected {expected}",
                    ch.len()
                )));
            }
        }
        Ok(Self { n_clients, moduli, channels, origin_spans: None })
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn param_count(&self) -> usize {
        self.channels.len() / self.moduli.len().max(1)
    }

    pub fn channel(&self, param: usize, residue: usize) -> &PackedBits {
        &self.channels[param * self.moduli.len() + residue]
    }

    pub fn channels(&self) -> &[PackedBits] {
        &self.channels
    }

    pub fn origin_spans(&self) -> Option<&[Vec<usize>]> {
        self.origin_spans.as_deref()
    }

    /// Applies `f(param, residue, channel)` to every channel and drops origin
    /// information.
    pub fn permute_channels<F>(&mut self, mut f: F)
    where
        F: FnMut(usize, usize, &mut PackedBits),
    {
        let u = self.moduli.len();
        for (idx, ch) in self.channels.iter_mut().enumerate() {
            f(idx / u, idx % u, ch);
        }
        self.origin_spans = None;
    }

    /// Residue sums per parameter: popcount of each channel reduced mod m_j.
    pub fn reduced_sums(&self) -> Vec<Vec<u64>> {
        let u = self.moduli.len();
        self.channels
            .chunks(u)
            .map(|chs| chs.iter().zip(&self.moduli).map(|(c, &m)| unary_sum(c) % m).collect())
            .collect()
    }

    /// Raw popcounts, one row per parameter.
    pub fn popcounts(&self) -> Vec<Vec<u64>> {
        let u = self.moduli.len();
        self.channels.chunks(u).map(|chs| chs.iter().map(unary_sum).collect()).collect()
    }

    /// All channels of one parameter concatenated bitwise (j ascending).
    pub fn parameter_bits(&self, param: usize) -> PackedBits {
        let u = self.moduli.len();
        let mut out = PackedBits::with_capacity(self.n_clients * self.moduli.iter().sum::<u64>() as usize);
        for ch in &self.channels[param * u..(param + 1) * u] {
            out.extend_from(ch);
        }
        out
    }
}
