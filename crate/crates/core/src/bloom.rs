//! Bloom filter over message ids.
//!
//! Indices come from enhanced double hashing of the 32-byte id: the first
//! two 8-byte words are seeds `a` and `b`, and index `i` is
//! `(a + i*b + (i^3 - i)/6) mod m`. The cubic term keeps small filters, whose
//! `m` shares factors with most `b`, close to the analytic false-positive
//! rate.

use std::fmt;

use thiserror::Error;

use crate::codec::{self, DecodeError, Reader};
use crate::crypto::Hash;

/// Upper bound on `k` accepted from the wire.
const MAX_HASHES: u32 = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BloomError {
    #[error("malformed filter: {0}")]
    Malformed(#[from] DecodeError),
}

/// Sizing for filters built by a replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BloomParams {
    pub bits_per_entry: u32,
    pub hashes: u32,
}

impl Default for BloomParams {
    fn default() -> Self {
        BloomParams { bits_per_entry: 10, hashes: 7 }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    m: u32,
    k: u32,
}

impl BloomFilter {
    /// Filter containing `ids`, sized at `bits_per_entry` bits per id with a
    /// minimum of 8 bits, rounded up to whole bytes.
    pub fn build<'a>(ids: impl IntoIterator<Item = &'a Hash>, params: BloomParams) -> Self {
        let ids: Vec<&Hash> = ids.into_iter().collect();
        let k = params.hashes.max(1);
        let wanted = (params.bits_per_entry as usize).saturating_mul(ids.len()).max(8);
        let m = wanted.div_ceil(8) * 8;
        let mut filter = BloomFilter { bits: vec![0; m / 8], m: m as u32, k };
        for id in ids {
            for i in filter.indices(id) {
                filter.bits[i / 8] |= 1 << (i % 8);
            }
        }
        filter
    }

    /// An empty 8-bit filter.
    pub fn empty(params: BloomParams) -> Self {
        Self::build([], params)
    }

    /// Raw constructor, used to model corrupted filters.
    pub fn from_bits(bits: Vec<u8>, k: u32) -> Self {
        assert!(!bits.is_empty() && k >= 1);
        BloomFilter { m: bits.len() as u32 * 8, bits, k }
    }

    fn indices(&self, id: &Hash) -> impl Iterator<Item = usize> {
        let a = u64::from_be_bytes(id.0[0..8].try_into().unwrap());
        let b = u64::from_be_bytes(id.0[8..16].try_into().unwrap());
        let m = self.m as u64;
        let (a, b) = (a % m, b % m);
        (0..self.k as u64).map(move |i| ((a + i * b + (i * i * i - i) / 6 % m) % m) as usize)
    }

    /// True if every derived bit is set. May report false positives, never
    /// false negatives.
    pub fn contains(&self, id: &Hash) -> bool {
        self.indices(id).all(|i| self.bits[i / 8] & (1 << (i % 8)) != 0)
    }

    /// Number of bits.
    pub fn m(&self) -> u32 {
        self.m
    }

    /// Number of index functions.
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Size of the bit array in bytes.
    pub fn byte_len(&self) -> usize {
        self.bits.len()
    }

    pub fn encoded_len(&self) -> usize {
        8 + self.bits.len()
    }

    /// `k` (u32), `m` (u32), then the `ceil(m/8)` bytes of the bit array.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        codec::put_u32(out, self.k);
        codec::put_u32(out, self.m);
        out.extend_from_slice(&self.bits);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let k = r.u32()?;
        let m = r.u32()?;
        if k == 0 || k > MAX_HASHES {
            return Err(DecodeError::Invalid("bloom hash count"));
        }
        if m < 8 {
            return Err(DecodeError::Invalid("bloom bit count"));
        }
        let bits = r.bytes((m as usize).div_ceil(8))?.to_vec();
        Ok(BloomFilter { bits, m, k })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BloomError> {
        let mut r = Reader::new(bytes);
        let f = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(f)
    }
}

impl fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ones: u32 = self.bits.iter().map(|b| b.count_ones()).sum();
        write!(f, "BloomFilter(m={}, k={}, set={})", self.m, self.k, ones)
    }
}
