//! Residue number system codec.
//!
//! Integers are represented by their remainders under a set of pairwise
//! coprime moduli. Addition is componentwise; decoding goes through the
//! Chinese remainder theorem. Products of moduli are carried in `u128`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported precision (decimal digits kept after scaling).
pub const MAX_PRECISION: u32 = 18;

/// Prime powers above this value are not considered by [`ModuliStrategy::MinSumSearch`].
pub const MIN_SUM_CAP: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuliStrategy {
    /// Primes 2, 3, 5, ... until the admissibility bound holds.
    ConsecutivePrimes,
    /// Pairwise-coprime prime powers (each at most [`MIN_SUM_CAP`]) with the smallest sum.
    MinSumSearch,
}

impl fmt::Display for ModuliStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModuliStrategy::ConsecutivePrimes => f.write_str("consecutive_primes"),
            ModuliStrategy::MinSumSearch => f.write_str("min_sum_search"),
        }
    }
}

/// A validated set of moduli: sorted, duplicate-free, pairwise coprime.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RnsBasis {
    moduli: Vec<u64>,
    product: u128,
    terms: Vec<CrtTerm>,
    /// Largest unreduced Σ M_i·a_i·y_i (each term is below M·m_i), if it
    /// fits in 64 bits. Decoding then needs a single reduction.
    lazy_bound: Option<u64>,
    /// Decoding fits entirely in 32-bit arithmetic.
    narrow_crt: bool,
    /// M < 2^32, so residues of in-range values need only 32-bit division.
    narrow: bool,
    min: i128,
    max: i128,
}

impl RnsBasis {
    pub fn new(mut moduli: Vec<u64>) -> Result<Self> {
        if moduli.is_empty() {
            return Err(Error::InvalidModuli("empty moduli list".into()));
        }
        moduli.sort_unstable();
        if let Some(&m) = moduli.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidModuli(format!("modulus {m} is smaller than 2")));
        }
        for (i, &a) in moduli.iter().enumerate() {
            for &b in &moduli[i + 1..] {
                if gcd(a, b) != 1 {
                    return Err(Error::InvalidModuli(format!("{a} and {b} are not coprime")));
                }
            }
        }
        let product = moduli
            .iter()
            .try_fold(1u128, |acc, &m| acc.checked_mul(m as u128))
            .ok_or_else(|| Error::InvalidModuli("product of moduli overflows 128 bits".into()))?;
        let terms = moduli
            .iter()
            .map(|&m| {
                let partial = product / m as u128;
                let inverse = mod_inverse((partial % m as u128) as u64, m).expect("moduli are pairwise coprime");
                CrtTerm { modulus: m, partial, inverse }
            })
            .collect();
        let max_m = *moduli.last().unwrap() as u128;
        let lazy_bound = product
            .checked_mul(max_m)
            .and_then(|b| b.checked_mul(moduli.len() as u128))
            .and_then(|b| u64::try_from(b).ok());
        Ok(Self {
            moduli,
            product,
            terms,
            lazy_bound,
            narrow_crt: lazy_bound.is_some_and(|b| b <= u32::MAX as u64),
            narrow: product <= u32::MAX as u128,
            min: -((product / 2) as i128),
            max: ((product - 1) / 2) as i128,
        })
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    /// M, the product of all moduli.
    pub fn product(&self) -> u128 {
        self.product
    }

    /// Number of moduli (u).
    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    /// ⌊M/2⌋, the magnitude of the most negative encodable value.
    #[inline]
    pub fn signed_min(&self) -> i128 {
        self.min
    }

    /// ⌊(M−1)/2⌋, the largest encodable value.
    #[inline]
    pub fn signed_max(&self) -> i128 {
        self.max
    }

    pub fn encode(&self, x: i128) -> Result<ResidueVector<'_>> {
        let (min, max) = (self.signed_min(), self.signed_max());
        if x < min || x > max {
            return Err(Error::RangeExceeded { value: x, min, max });
        }
        Ok(ResidueVector { residues: self.encode_raw(x), basis: self })
    }

    /// Encodes a value from the unsigned range [0, M).
    pub fn encode_unsigned(&self, x: u128) -> Result<ResidueVector<'_>> {
        if x >= self.product {
            return Err(Error::RangeExceeded {
                value: x.min(i128::MAX as u128) as i128,
                min: 0,
                max: (self.product - 1).min(i128::MAX as u128) as i128,
            });
        }
        let residues = self.moduli.iter().map(|&m| (x % m as u128) as u64).collect();
        Ok(ResidueVector { residues, basis: self })
    }

    /// Residues of `x` without the range check. Values outside the signed
    /// range alias modulo M.
    pub fn encode_raw(&self, x: i128) -> Vec<u64> {
        let mut out = vec![0; self.moduli.len()];
        self.residues_into(x, &mut out);
        out
    }

    /// Range-checked encoding into a caller-provided buffer, for hot loops.
    #[inline]
    pub fn encode_into(&self, x: i128, out: &mut [u64]) -> Result<()> {
        let (min, max) = (self.signed_min(), self.signed_max());
        if x < min || x > max {
            return Err(Error::RangeExceeded { value: x, min, max });
        }
        if out.len() != self.moduli.len() {
            return Err(Error::ContextMismatch);
        }
        self.residues_into(x, out);
        Ok(())
    }

    #[inline]
    fn residues_into(&self, x: i128, out: &mut [u64]) {
        // any non-negative representative of x mod M has the same residues
        let y: u128 = if x >= 0 {
            x as u128
        } else if x.unsigned_abs() <= self.product {
            self.product - x.unsigned_abs()
        } else {
            x.rem_euclid(self.product as i128) as u128
        };
        if self.narrow && y <= u32::MAX as u128 {
            // moduli never exceed M, so they fit too
            let v = y as u32;
            out.iter_mut().zip(&self.moduli).for_each(|(o, &m)| *o = (v % m as u32) as u64);
            return;
        }
        match u64::try_from(y) {
            Ok(v) => out.iter_mut().zip(&self.moduli).for_each(|(o, &m)| *o = v % m),
            Err(_) => out.iter_mut().zip(&self.moduli).for_each(|(o, &m)| *o = (y % m as u128) as u64),
        }
    }

    /// Wraps externally produced residues (for example popcounts reduced by
    /// the server) after checking them against the moduli.
    pub fn residues(&self, residues: Vec<u64>) -> Result<ResidueVector<'_>> {
        if residues.len() != self.moduli.len() {
            return Err(Error::ContextMismatch);
        }
        for (&r, &m) in residues.iter().zip(&self.moduli) {
            if r >= m {
                return Err(Error::Overflow { value: r, capacity: m - 1 });
            }
        }
        Ok(ResidueVector { residues, basis: self })
    }

    /// Unique y in [0, M) congruent to each residue, via the textbook CRT
    /// formula y = Σ a_i·M_i·y_i mod M with y_i = M_i⁻¹ mod m_i.
    #[inline]
    pub fn crt(&self, residues: &[u64]) -> u128 {
        let big_m = self.product;
        if self.narrow_crt {
            let mut acc = 0u32;
            for (&a, term) in residues.iter().zip(&self.terms) {
                let a = if a < term.modulus { a as u32 } else { (a % term.modulus) as u32 };
                acc += term.partial as u32 * a * term.inverse as u32;
            }
            return (acc % big_m as u32) as u128;
        }
        if self.lazy_bound.is_some() {
            let mut acc = 0u64;
            for (&a, term) in residues.iter().zip(&self.terms) {
                let a = if a < term.modulus { a } else { a % term.modulus };
                acc += term.partial as u64 * a * term.inverse;
            }
            return (acc % big_m as u64) as u128;
        }
        if big_m <= u32::MAX as u128 {
            // each term M_i·c_i is below M < 2^32, so the sum cannot overflow
            let mut acc = 0u64;
            for (&a, term) in residues.iter().zip(&self.terms) {
                let a = if a < term.modulus { a } else { a % term.modulus };
                acc += term.partial as u64 * (a * term.inverse % term.modulus);
            }
            return (acc % big_m as u64) as u128;
        }
        let mut acc = 0u128;
        for (&a, term) in residues.iter().zip(&self.terms) {
            let m = term.modulus as u128;
            let coeff = ((a as u128 % m) * term.inverse as u128) % m;
            // M_i·c < M·m_i fits in 128 bits whenever M does in 64
            let t = if big_m <= u64::MAX as u128 { term.partial * coeff % big_m } else { mul_mod(term.partial, coeff, big_m) };
            acc = add_mod(acc, t, big_m);
        }
        acc
    }

    /// The per-modulus constants M_i = M / m_i and y_i = M_i⁻¹ mod m_i.
    pub fn crt_terms(&self) -> &[CrtTerm] {
        &self.terms
    }

    /// Maps an unsigned CRT value onto the symmetric range.
    #[inline]
    pub fn to_signed(&self, y: u128) -> i128 {
        if y <= self.max as u128 {
            y as i128
        } else {
            y as i128 - self.product as i128
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CrtTerm {
    pub modulus: u64,
    pub partial: u128,
    pub inverse: u64,
}

/// Moduli together with the precision r and client count n they must serve.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ContextRecord", into = "ContextRecord")]
pub struct RnsContext {
    basis: RnsBasis,
    precision: u32,
    n_clients: u64,
}

/// Flat serialized form of an [`RnsContext`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub moduli: Vec<u64>,
    pub r: u32,
    pub n: u64,
}

impl TryFrom<ContextRecord> for RnsContext {
    type Error = Error;

    fn try_from(rec: ContextRecord) -> Result<Self> {
        RnsContext::new(rec.moduli, rec.r, rec.n)
    }
}

impl From<RnsContext> for ContextRecord {
    fn from(ctx: RnsContext) -> Self {
        ContextRecord { moduli: ctx.basis.moduli, r: ctx.precision, n: ctx.n_clients }
    }
}

impl RnsContext {
    /// Builds a context and checks n·(10^r − 1) < ⌊(M−1)/2⌋.
    pub fn new(moduli: Vec<u64>, precision: u32, n_clients: u64) -> Result<Self> {
        let v = check_parameters(n_clients, precision)?;
        let basis = RnsBasis::new(moduli)?;
        let budget = n_clients as u128 * v;
        if budget >= (basis.product - 1) / 2 {
            return Err(Error::Inadmissible { n: n_clients, v, product: basis.product });
        }
        Ok(Self { basis, precision, n_clients })
    }

    pub fn basis(&self) -> &RnsBasis {
        &self.basis
    }

    pub fn moduli(&self) -> &[u64] {
        self.basis.moduli()
    }

    pub fn product(&self) -> u128 {
        self.basis.product()
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn n_clients(&self) -> u64 {
        self.n_clients
    }

    /// v = 10^r − 1, the largest magnitude a single client contributes.
    pub fn v_max(&self) -> u128 {
        10u128.pow(self.precision) - 1
    }

    pub fn scale(&self) -> f64 {
        10f64.powi(self.precision as i32)
    }
}

fn check_parameters(n_clients: u64, precision: u32) -> Result<u128> {
    if n_clients == 0 {
        return Err(Error::InvalidParameters("client count must be at least 1".into()));
    }
    if precision == 0 || precision > MAX_PRECISION {
        return Err(Error::InvalidParameters(format!(
            "precision r = {precision} must lie in 1..={MAX_PRECISION}"
        )));
    }
    Ok(10u128.pow(precision) - 1)
}

/// An element of Z_{m_1} × ... × Z_{m_u}, tied to the basis that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidueVector<'a> {
    residues: Vec<u64>,
    basis: &'a RnsBasis,
}

impl<'a> ResidueVector<'a> {
    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn basis(&self) -> &'a RnsBasis {
        self.basis
    }

    pub fn crt_solve(&self) -> u128 {
        self.basis.crt(&self.residues)
    }

    pub fn decode_signed(&self) -> i128 {
        self.basis.to_signed(self.crt_solve())
    }

    pub fn add(&self, other: &ResidueVector<'_>) -> Result<ResidueVector<'a>> {
        if self.basis != other.basis {
            return Err(Error::ContextMismatch);
        }
        let residues = self
            .residues
            .iter()
            .zip(&other.residues)
            .zip(self.basis.moduli())
            .map(|((&a, &b), &m)| ((a as u128 + b as u128) % m as u128) as u64)
            .collect();
        Ok(ResidueVector { residues, basis: self.basis })
    }
}

/// ⌊p · 10^r⌋ for p ∈ (−1, 1), rounding toward −∞.
pub fn scale_quantize(p: f64, precision: u32) -> Result<i64> {
    if p.is_nan() || p.abs() >= 1.0 {
        return Err(Error::OutOfRange(p));
    }
    if precision > MAX_PRECISION {
        return Err(Error::InvalidParameters(format!("precision {precision} too large")));
    }
    Ok((p * 10f64.powi(precision as i32)).floor() as i64)
}

/// Chooses moduli for `n` clients at precision `r`.
pub fn select_moduli(n_clients: u64, precision: u32, strategy: ModuliStrategy) -> Result<RnsContext> {
    let v = check_parameters(n_clients, precision)?;
    let budget = (n_clients as u128)
        .checked_mul(v)
        .filter(|b| *b < u128::MAX / 4)
        .ok_or_else(|| Error::InvalidParameters("n·(10^r − 1) too large".into()))?;
    // ⌊(M−1)/2⌋ > budget  ⇔  M ≥ 2·budget + 3
    let need = 2 * budget + 3;
    let moduli = match strategy {
        ModuliStrategy::ConsecutivePrimes => consecutive_primes(need),
        ModuliStrategy::MinSumSearch => min_sum_search(need),
    };
    RnsContext::new(moduli, precision, n_clients)
}

fn consecutive_primes(need: u128) -> Vec<u64> {
    let mut moduli = Vec::new();
    let mut product = 1u128;
    let mut primes = Primes::default();
    while product < need {
        let p = primes.next().expect("infinite");
        moduli.push(p);
        product *= p as u128;
    }
    moduli
}

struct Candidate {
    prime: u64,
    powers: Vec<u64>,
}

#[derive(Default)]
struct Search {
    best: Option<(u64, Vec<u64>)>,
}

impl Search {
    fn offer(&mut self, sum: u64, chosen: &[u64]) {
        let mut sorted = chosen.to_vec();
        sorted.sort_unstable();
        let better = match &self.best {
            None => true,
            Some((best_sum, best)) => {
                (sum, sorted.len(), &sorted) < (*best_sum, best.len(), best)
            }
        };
        if better {
            self.best = Some((sum, sorted));
        }
    }
}

fn min_sum_search(need: u128) -> Vec<u64> {
    let candidates: Vec<Candidate> = Primes::default()
        .take_while(|&p| p <= MIN_SUM_CAP)
        .map(|prime| {
            let mut powers = Vec::new();
            let mut q = prime;
            while q <= MIN_SUM_CAP {
                powers.push(q);
                q *= prime;
            }
            Candidate { prime, powers }
        })
        .collect();

    // suffix[i] = product of the largest power of every candidate from i on
    let mut suffix = vec![1u128; candidates.len() + 1];
    for i in (0..candidates.len()).rev() {
        suffix[i] = suffix[i + 1] * *candidates[i].powers.last().unwrap() as u128;
    }

    if suffix[0] < need {
        // The capped pool cannot reach the bound: take every maximal power and
        // extend with consecutive primes above the cap.
        let mut moduli: Vec<u64> = candidates.iter().map(|c| *c.powers.last().unwrap()).collect();
        let mut product = suffix[0];
        let mut primes = Primes::default().skip_while(|&p| p <= MIN_SUM_CAP);
        while product < need {
            let p = primes.next().expect("infinite");
            moduli.push(p);
            product *= p as u128;
        }
        return moduli;
    }

    let mut search = Search::default();
    let mut chosen = Vec::new();
    dfs(&candidates, &suffix, 0, 1, 0, need, &mut chosen, &mut search);
    search.best.expect("capped pool reaches the bound").1
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    candidates: &[Candidate],
    suffix: &[u128],
    idx: usize,
    product: u128,
    sum: u64,
    need: u128,
    chosen: &mut Vec<u64>,
    search: &mut Search,
) {
    if let Some((best_sum, _)) = &search.best {
        if sum > *best_sum {
            return;
        }
    }
    if product >= need {
        search.offer(sum, chosen);
        return;
    }
    if idx == candidates.len() || product * suffix[idx] < need {
        return;
    }
    let cand = &candidates[idx];
    debug_assert!(cand.prime >= 2);
    for &q in &cand.powers {
        chosen.push(q);
        dfs(candidates, suffix, idx + 1, product * q as u128, sum + q, need, chosen, search);
        chosen.pop();
    }
    dfs(candidates, suffix, idx + 1, product, sum, need, chosen, search);
}

/// Unbounded prime iterator by trial division; moduli are small.
#[derive(Default)]
struct Primes {
    found: Vec<u64>,
}

impl Iterator for Primes {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        let mut candidate = match self.found.last() {
            None => 2,
            Some(2) => 3,
            Some(&p) => p + 2,
        };
        loop {
            if self
                .found
                .iter()
                .take_while(|&&p| p * p <= candidate)
                .all(|&p| candidate % p != 0)
            {
                self.found.push(candidate);
                return Some(candidate);
            }
            candidate += if candidate == 2 { 1 } else { 2 };
        }
    }
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn mod_inverse(a: u64, m: u64) -> Option<u64> {
    let (mut old_r, mut r) = (a as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 && m != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u64)
}

fn add_mod(a: u128, b: u128, m: u128) -> u128 {
    if a >= m - b {
        a - (m - b)
    } else {
        a + b
    }
}

fn mul_mod(a: u128, b: u128, m: u128) -> u128 {
    if let Some(p) = a.checked_mul(b) {
        return p % m;
    }
    let (mut a, mut b, mut acc) = (a % m, b, 0u128);
    while b > 0 {
        if b & 1 == 1 {
            acc = add_mod(acc, a, m);
        }
        a = add_mod(a, a, m);
        b >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(m: &[u64]) -> RnsBasis {
        RnsBasis::new(m.to_vec()).unwrap()
    }

    // Independent oracle: scan [0, M) for the value matching every congruence.
    fn brute_force_crt(residues: &[u64], moduli: &[u64]) -> u128 {
        let big_m: u128 = moduli.iter().map(|&m| m as u128).product();
        (0..big_m)
            .find(|y| residues.iter().zip(moduli).all(|(&r, &m)| y % m as u128 == r as u128))
            .unwrap()
    }

    fn is_prime(p: u64) -> bool {
        p >= 2 && (2..p).take_while(|d| d * d <= p).all(|d| !p.is_multiple_of(d))
    }

    #[test]
    fn worked_example_encodes_and_solves() {
        let b = basis(&[3, 5, 7]);
        let rv = b.encode_unsigned(55).unwrap();
        assert_eq!(rv.residues(), &[1, 0, 6]);
        assert!(b.encode(55).is_err());
        assert_eq!(b.residues(vec![1, 0, 6]).unwrap().crt_solve(), 55);
        // 55 > ⌊104/2⌋ so the symmetric reading is negative
        assert_eq!(b.residues(vec![1, 0, 6]).unwrap().decode_signed(), -50);
    }

    #[test]
    fn negative_encoding_matches_direct_modular_arithmetic() {
        let b = basis(&[3, 5, 7]);
        let expected: Vec<u64> = [3i64, 5, 7].iter().map(|&m| (-50i64).rem_euclid(m) as u64).collect();
        assert_eq!(expected, vec![1, 0, 6]);
        assert_eq!(b.encode(-50).unwrap().residues(), expected.as_slice());
        // degenerate case: |x| mod m = 0 must give 0, not m
        assert_eq!(b.encode(-15).unwrap().residues(), &[0, 0, 6]);
    }

    #[test]
    fn zero_encodes_to_zero() {
        for m in [&[2u64, 3, 5][..], &[3, 5, 7], &[4, 9, 25, 49]] {
            let b = basis(m);
            let rv = b.encode(0).unwrap();
            assert!(rv.residues().iter().all(|&r| r == 0));
            assert_eq!(rv.crt_solve(), 0);
            assert_eq!(rv.decode_signed(), 0);
        }
    }

    #[test]
    fn crt_matches_brute_force_on_known_value() {
        assert_eq!(brute_force_crt(&[2, 2, 3], &[3, 5, 7]), 17);
        assert_eq!(basis(&[3, 5, 7]).residues(vec![2, 2, 3]).unwrap().crt_solve(), 17);
    }

    #[test]
    fn residue_addition() {
        let b = basis(&[3, 5, 7]);
        let sum = b.encode(17).unwrap().add(&b.encode(25).unwrap()).unwrap();
        assert_eq!(sum.residues(), &[0, 2, 0]);
        assert_eq!(brute_force_crt(&[0, 2, 0], &[3, 5, 7]), 42);
        assert_eq!(sum.decode_signed(), 42);

        let x = b.encode(-31).unwrap();
        assert_eq!(x.add(&b.encode(0).unwrap()).unwrap(), x);

        // 100 exceeds ⌊104/2⌋ and wraps to 100 − 105
        let wrapped = b.encode(50).unwrap().add(&b.encode(50).unwrap()).unwrap();
        assert_eq!(wrapped.decode_signed(), -5);
    }

    #[test]
    fn addition_across_bases_is_rejected() {
        let a = basis(&[3, 5, 7]);
        let b = basis(&[2, 3, 5]);
        let err = a.encode(1).unwrap().add(&b.encode(1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ContextMismatch));
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let b = basis(&[3, 5, 7]);
        assert!(b.encode(52).is_ok());
        assert!(b.encode(-52).is_ok());
        assert!(matches!(b.encode(53), Err(Error::RangeExceeded { .. })));
        assert!(matches!(b.encode(-53), Err(Error::RangeExceeded { .. })));
        // even M: ⌊M/2⌋ on the negative side, ⌊(M−1)/2⌋ on the positive side
        let even = basis(&[2, 3, 5]);
        assert!(even.encode(-15).is_ok());
        assert!(even.encode(15).is_err());
        assert!(even.encode(14).is_ok());
    }

    #[test]
    fn basis_validation() {
        assert!(RnsBasis::new(vec![]).is_err());
        assert!(RnsBasis::new(vec![1, 3]).is_err());
        assert!(RnsBasis::new(vec![4, 6]).is_err());
        assert!(RnsBasis::new(vec![5, 5]).is_err());
        assert_eq!(basis(&[7, 3, 5]).moduli(), &[3, 5, 7]);
        assert!(RnsBasis::new(vec![u64::MAX, u64::MAX - 1, u64::MAX - 2]).is_err());
    }

    #[test]
    fn quantization() {
        assert_eq!(scale_quantize(0.55, 2).unwrap(), 55);
        assert_eq!(scale_quantize(0.0, 7).unwrap(), 0);
        assert_eq!(scale_quantize(-0.557, 2).unwrap(), -56);
        assert!(matches!(scale_quantize(1.0, 2), Err(Error::OutOfRange(_))));
        assert!(scale_quantize(-1.0, 2).is_err());
        assert!(scale_quantize(f64::NAN, 2).is_err());
    }

    // Independent oracle for consecutive-prime selection.
    fn consecutive_oracle(n: u64, r: u32) -> Vec<u64> {
        let v = 10u128.pow(r) - 1;
        let mut moduli = Vec::new();
        let mut product = 1u128;
        let mut p = 1u64;
        while (n as u128 * v) >= product.saturating_sub(1) / 2 {
            p += 1;
            while !is_prime(p) {
                p += 1;
            }
            moduli.push(p);
            product *= p as u128;
        }
        moduli
    }

    #[test]
    fn consecutive_primes_selection() {
        let ctx = select_moduli(2, 2, ModuliStrategy::ConsecutivePrimes).unwrap();
        assert_eq!(ctx.moduli(), &[2, 3, 5, 7, 11]);
        assert_eq!(consecutive_oracle(2, 2), vec![2, 3, 5, 7, 11]);
        let ctx = select_moduli(1, 1, ModuliStrategy::ConsecutivePrimes).unwrap();
        assert_eq!(ctx.moduli(), &[2, 3, 5]);
        for n in [1u64, 2, 3, 10, 57, 1000, 10_000] {
            for r in 1..=8 {
                let ctx = select_moduli(n, r, ModuliStrategy::ConsecutivePrimes).unwrap();
                assert_eq!(ctx.moduli(), consecutive_oracle(n, r).as_slice(), "n={n} r={r}");
            }
        }
        let ctx = select_moduli(10, 5, ModuliStrategy::ConsecutivePrimes).unwrap();
        assert_eq!(ctx.moduli(), &[2, 3, 5, 7, 11, 13, 17, 19]);
    }

    #[test]
    fn worked_example_context_is_admissible_for_small_precision() {
        let ctx = RnsContext::new(vec![3, 5, 7], 1, 2).unwrap();
        assert_eq!(ctx.product(), 105);
        assert!(matches!(RnsContext::new(vec![3, 5, 7], 2, 2), Err(Error::Inadmissible { .. })));
    }

    // Exhaustive oracle over all pairwise-coprime subsets of prime powers ≤ cap.
    fn min_sum_oracle(need: u128) -> u64 {
        let pool: Vec<u64> = (2..=MIN_SUM_CAP)
            .filter(|&q| {
                let p = (2..=q).find(|d| q % d == 0).unwrap();
                let mut x = q;
                while x % p == 0 {
                    x /= p;
                }
                x == 1
            })
            .collect();
        let mut best = u64::MAX;
        fn go(pool: &[u64], i: usize, prod: u128, sum: u64, chosen: &mut Vec<u64>, need: u128, best: &mut u64) {
            if sum >= *best {
                return;
            }
            if prod >= need {
                *best = sum;
                return;
            }
            if i == pool.len() {
                return;
            }
            let q = pool[i];
            if chosen.iter().all(|&c| gcd(c, q) == 1) {
                chosen.push(q);
                go(pool, i + 1, prod * q as u128, sum + q, chosen, need, best);
                chosen.pop();
            }
            go(pool, i + 1, prod, sum, chosen, need, best);
        }
        go(&pool, 0, 1, 0, &mut Vec::new(), need, &mut best);
        best
    }

    #[test]
    fn min_sum_search_is_optimal_on_small_bounds() {
        for (n, r) in [(1u64, 1u32), (2, 1), (2, 2), (3, 2), (10, 2), (10, 3), (5, 4), (20, 3)] {
            let ctx = select_moduli(n, r, ModuliStrategy::MinSumSearch).unwrap();
            let need = 2 * n as u128 * (10u128.pow(r) - 1) + 3;
            let sum: u64 = ctx.moduli().iter().sum();
            assert_eq!(sum, min_sum_oracle(need), "n={n} r={r}");
            let cp = select_moduli(n, r, ModuliStrategy::ConsecutivePrimes).unwrap();
            assert!(sum <= cp.moduli().iter().sum::<u64>());
        }
    }

    #[test]
    fn min_sum_search_handles_large_bounds() {
        let ctx = select_moduli(10_000, 18, ModuliStrategy::MinSumSearch).unwrap();
        assert!(ctx.n_clients() as u128 * ctx.v_max() < (ctx.product() - 1) / 2);
    }

    #[test]
    fn selection_rejects_bad_parameters() {
        assert!(select_moduli(0, 2, ModuliStrategy::ConsecutivePrimes).is_err());
        assert!(select_moduli(2, 0, ModuliStrategy::ConsecutivePrimes).is_err());
        assert!(select_moduli(2, MAX_PRECISION + 1, ModuliStrategy::MinSumSearch).is_err());
    }

    // Garner's mixed-radix reconstruction, independent of the CRT sum.
    fn garner(residues: &[u64], moduli: &[u64]) -> u128 {
        fn inv(a: u128, m: u128) -> u128 {
            (1..m).find(|t| a * t % m == 1).unwrap()
        }
        let (mut x, mut radix) = (0u128, 1u128);
        for (&a, &m) in residues.iter().zip(moduli) {
            let m = m as u128;
            let need = (a as u128 + m - x % m) % m;
            let t = need * inv(radix % m, m) % m;
            x += radix * t;
            radix *= m;
        }
        x
    }

    #[test]
    fn crt_paths_agree_with_garner() {
        // lazy, 32-bit, 64-bit and wide products respectively
        let sets: [&[u64]; 4] = [&[7, 9, 11], &[65_519, 65_521], &[65_497, 65_519, 65_521], &[65_449, 65_479, 65_497, 65_519, 65_521]];
        let mut rng = crate::seed::rng(5);
        for moduli in sets {
            let b = basis(moduli);
            for _ in 0..200 {
                let residues: Vec<u64> = moduli.iter().map(|&m| rand::Rng::random_range(&mut rng, 0..m)).collect();
                assert_eq!(b.crt(&residues), garner(&residues, moduli), "{moduli:?}");
            }
        }
    }

    #[test]
    fn encode_into_matches_encode() {
        let b = basis(&[4, 9, 25]);
        let mut buf = [0u64; 3];
        for x in [-450i128, -449, -1, 0, 1, 449] {
            b.encode_into(x, &mut buf).unwrap();
            assert_eq!(&buf[..], b.encode(x).unwrap().residues());
        }
        assert!(matches!(b.encode_into(450, &mut buf), Err(Error::RangeExceeded { .. })));
        assert!(matches!(b.encode_into(0, &mut [0; 2]), Err(Error::ContextMismatch)));
        // out-of-range values alias modulo M
        assert_eq!(b.encode_raw(-900 - 7), b.encode_raw(-7));
    }

    #[test]
    fn wide_products_decode() {
        let ctx = select_moduli(10_000, 16, ModuliStrategy::ConsecutivePrimes).unwrap();
        assert!(ctx.product() > u64::MAX as u128);
        let b = ctx.basis();
        for x in [b.signed_max(), b.signed_min(), 0, 1, -1, 123_456_789_012_345_678_901] {
            assert_eq!(b.encode(x).unwrap().decode_signed(), x);
        }
    }

    #[test]
    fn context_serializes_as_flat_record() {
        let ctx = RnsContext::new(vec![3, 5, 7], 1, 2).unwrap();
        let json = serde_json::to_string(&ctx).unwrap();
        assert_eq!(json, r#"{"moduli":[3,5,7],"r":1,"n":2}"#);
        let back: RnsContext = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ctx);
        assert!(serde_json::from_str::<RnsContext>(r#"{"moduli":[3,5,7],"r":2,"n":2}"#).is_err());
    }

    #[test]
    fn exhaustive_crt_for_small_products() {
        for m in [&[3u64, 5, 7][..], &[4, 9, 5], &[2, 3, 5, 7], &[8, 27, 25]] {
            let b = basis(m);
            for y in 0..b.product() {
                let res = b.encode_raw(y as i128);
                assert_eq!(b.crt(&res), y);
                assert_eq!(brute_force_crt(&res, b.moduli()), y);
            }
        }
    }

    fn moduli_sets() -> impl Strategy<Value = Vec<u64>> {
        prop::sample::subsequence(vec![2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53], 1..=16)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn signed_roundtrip(moduli in moduli_sets(), seed in any::<u128>()) {
            let b = RnsBasis::new(moduli).unwrap();
            let span = (b.signed_max() - b.signed_min()) as u128 + 1;
            let x = b.signed_min() + (seed % span) as i128;
            prop_assert_eq!(b.encode(x).unwrap().decode_signed(), x);
        }

        #[test]
        fn addition_is_homomorphic(moduli in moduli_sets(), a in any::<u128>(), c in any::<u128>()) {
            let b = RnsBasis::new(moduli).unwrap();
            let half = (b.signed_max() / 2).max(0) as u128 + 1;
            let x = (a % half) as i128 - (half as i128 / 2);
            let y = (c % half) as i128 - (half as i128 / 2);
            let sum = b.encode(x).unwrap().add(&b.encode(y).unwrap()).unwrap();
            prop_assert_eq!(sum.decode_signed(), x + y);
        }

        #[test]
        fn quantization_error_is_below_one_quantum(p in -0.999_999f64..0.999_999, r in 1u32..=8) {
            let q = scale_quantize(p, r).unwrap() as f64;
            let scaled = p * 10f64.powi(r as i32);
            prop_assert!(scaled - q >= 0.0 && scaled - q < 1.0);
        }

        #[test]
        fn selected_contexts_are_admissible(n in 1u64..20_000, r in 1u32..=12, min_sum in any::<bool>()) {
            let strategy = if min_sum { ModuliStrategy::MinSumSearch } else { ModuliStrategy::ConsecutivePrimes };
            let ctx = select_moduli(n, r, strategy).unwrap();
            prop_assert!(n as u128 * ctx.v_max() < (ctx.product() - 1) / 2);
        }
    }
}
