//! Deterministic pseudorandom stream.
//!
//! Every randomized operation in the crate draws from a `PrgStream`, a
//! ChaCha20 stream keyed by the framed hash of `(seed, label)`. Identical
//! `(seed, label)` pairs replay identical sequences; distinct labels give
//! independent streams from one seed.

use super::{hash, BitString, NumError};
use num_bigint::BigUint;
use num_traits::Zero;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

pub struct PrgStream {
    rng: ChaCha20Rng,
}

impl PrgStream {
    pub fn new(seed: &[u8], label: &[u8]) -> Self {
        let key = hash(&[b"prg-stream", seed, label]);
        PrgStream {
            rng: ChaCha20Rng::from_seed(*key.as_bytes()),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        self.rng.fill_bytes(buf);
    }

    /// Uniform draw from `[lo, hi)` by rejection.
    pub fn draw_range(&mut self, lo: u64, hi: u64) -> Result<u64, NumError> {
        if lo >= hi {
            return Err(NumError::EmptyRange);
        }
        let span = hi - lo;
        if span.is_power_of_two() {
            return Ok(lo + (self.next_u64() & (span - 1)));
        }
        // Reject draws beyond the largest multiple of span to stay unbiased.
        let zone = u64::MAX - u64::MAX % span;
        loop {
            let v = self.next_u64();
            if v < zone {
                return Ok(lo + v % span);
            }
        }
    }

    /// Uniform draw from `[0, n)` by rejection on fixed-width candidates.
    pub fn draw_below(&mut self, n: &BigUint) -> Result<BigUint, NumError> {
        if n.is_zero() {
            return Err(NumError::EmptyRange);
        }
        let bits = n.bits();
        loop {
            let cand = self.draw_bits(bits as u32);
            if &cand < n {
                return Ok(cand);
            }
        }
    }

    /// Uniform draw from `[1, n)`; the nonzero residues used for exponents.
    pub fn draw_nonzero_below(&mut self, n: &BigUint) -> Result<BigUint, NumError> {
        let span = n - 1u32;
        Ok(self.draw_below(&span)? + 1u32)
    }

    /// Uniform integer of at most `bits` bits (i.e. in `[0, 2^bits)`).
    pub fn draw_bits(&mut self, bits: u32) -> BigUint {
        let nbytes = (bits as usize).div_ceil(8);
        let mut buf = vec![0u8; nbytes];
        self.fill_bytes(&mut buf);
        let excess = (nbytes * 8) as u32 - bits;
        if excess > 0 {
            buf[0] &= 0xffu8 >> excess;
        }
        BigUint::from_bytes_be(&buf)
    }

    pub fn draw_bitstring(&mut self, width_b: u32) -> BitString {
        BitString::new(width_b, self.draw_bits(width_b)).expect("masked to width")
    }

    /// Bernoulli draw with success probability `p` (clamped to [0, 1]).
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u < p
    }
}
