//! Number-theoretic and symmetric primitives.
//!
//! Everything here is deterministic: group generation and random draws are
//! pure functions of an explicit seed, hashing is SHA-256 with unambiguous
//! length-prefixed framing, and the keyed permutation is a balanced Feistel
//! network that is bijective for every key and every even width.

mod feistel;
mod prg;
mod prime;

pub use feistel::{permute, Direction};
pub use prg::PrgStream;
pub use prime::is_probable_prime;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

/// Length of every digest produced by [`hash`], in octets.
pub const DIGEST_LEN: usize = 32;

/// Miller-Rabin rounds used for all probabilistic primality testing.
pub const MILLER_RABIN_ROUNDS: u32 = 40;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumError {
    #[error("modulus must be at least 2")]
    InvalidModulus,
    #[error("bit length must be at least 16, got {0}")]
    BitLenTooSmall(u32),
    #[error("permutation width must be even and at least 8, got {0}")]
    InvalidWidth(u32),
    #[error("bit string width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: u32, got: u32 },
    #[error("value does not fit in {width} bits")]
    ValueTooWide { width: u32 },
    #[error("empty draw range")]
    EmptyRange,
}

/// A 32-octet digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        let arr: [u8; DIGEST_LEN] = raw.try_into().ok()?;
        Some(Digest(arr))
    }

    /// The digest interpreted as a big-endian integer, reduced mod `m`.
    pub fn to_uint_mod(&self, m: &BigUint) -> BigUint {
        BigUint::from_bytes_be(&self.0) % m
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// Hash an ordered sequence of octet strings into a 32-octet digest.
///
/// Each part is framed as `len_be_u64 || part` before being fed to SHA-256,
/// so `hash(["x","y"]) != hash(["xy"])` and the empty sequence has a
/// well-defined digest.
pub fn hash(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    Digest(h.finalize().into())
}

/// Big-endian encoding of `x` padded to exactly `len` octets.
///
/// Panics if the value needs more than `len` octets; callers bound their
/// values by the owning group's modulus first.
pub fn int_to_fixed_bytes(x: &BigUint, len: usize) -> Vec<u8> {
    let raw = x.to_bytes_be();
    assert!(
        raw.len() <= len,
        "integer of {} octets does not fit in {} octets",
        raw.len(),
        len
    );
    let mut out = vec![0u8; len - raw.len()];
    out.extend_from_slice(&raw);
    out
}

/// Octets needed for a fixed-width encoding of residues in a `bit_len` group.
pub fn group_byte_len(bit_len: u32) -> usize {
    (bit_len as usize).div_ceil(8)
}

/// Lowercase hex of `x` padded to `byte_len` octets; the canonical integer
/// encoding used in every JSON interface.
pub fn uint_to_hex(x: &BigUint, byte_len: usize) -> String {
    hex::encode(int_to_fixed_bytes(x, byte_len))
}

pub fn uint_from_hex(s: &str) -> Option<BigUint> {
    if s.is_empty() || s.len() % 2 != 0 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    Some(BigUint::from_bytes_be(&hex::decode(s).ok()?))
}

/// An integer constrained to `[0, 2^width_b)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    width_b: u32,
    value: BigUint,
}

impl BitString {
    pub fn new(width_b: u32, value: BigUint) -> Result<Self, NumError> {
        if value.bits() > width_b as u64 {
            return Err(NumError::ValueTooWide { width: width_b });
        }
        Ok(BitString { width_b, value })
    }

    pub fn zero(width_b: u32) -> Self {
        BitString {
            width_b,
            value: BigUint::zero(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width_b
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn into_value(self) -> BigUint {
        self.value
    }

    /// Fixed-width big-endian octets (`ceil(width_b / 8)` of them).
    pub fn to_bytes(&self) -> Vec<u8> {
        int_to_fixed_bytes(&self.value, (self.width_b as usize).div_ceil(8))
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, NumError> {
        if self.width_b != other.width_b {
            return Err(NumError::WidthMismatch {
                expected: self.width_b,
                got: other.width_b,
            });
        }
        Ok(BitString {
            width_b: self.width_b,
            value: &self.value ^ &other.value,
        })
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({}b, {})", self.width_b, self.value)
    }
}

/// Discrete-log group parameters: primes `p`, `q` with `q | p - 1` and a
/// generator `g` of the order-`q` subgroup of `(Z/pZ)*`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GroupParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
    bit_len: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupInvalid {
    #[error("p is not prime")]
    CompositeP,
    #[error("q is not prime")]
    CompositeQ,
    #[error("q does not divide p - 1")]
    OrderDoesNotDivide,
    #[error("g does not generate an order-q subgroup")]
    BadGenerator,
    #[error("p has {actual} bits, declared {declared}")]
    BitLenMismatch { declared: u32, actual: u64 },
}

impl GroupParams {
    /// Assembles and validates parameters (used for fixtures and file I/O).
    pub fn from_parts(p: BigUint, q: BigUint, g: BigUint, bit_len: u32) -> Result<Self, GroupInvalid> {
        let params = GroupParams { p, q, g, bit_len };
        params.validate()?;
        Ok(params)
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn bit_len(&self) -> u32 {
        self.bit_len
    }

    /// Fixed-width octet length for residues mod `p`.
    pub fn byte_len(&self) -> usize {
        group_byte_len(self.bit_len)
    }

    /// Checks every invariant: primality of `p` and `q`, `q | p - 1`,
    /// `g^q = 1`, `g != 1`, and the declared bit length.
    pub fn validate(&self) -> Result<(), GroupInvalid> {
        let one = BigUint::one();
        if self.p.bits() != self.bit_len as u64 {
            return Err(GroupInvalid::BitLenMismatch {
                declared: self.bit_len,
                actual: self.p.bits(),
            });
        }
        if !is_probable_prime(&self.p, MILLER_RABIN_ROUNDS) {
            return Err(GroupInvalid::CompositeP);
        }
        if !is_probable_prime(&self.q, MILLER_RABIN_ROUNDS) {
            return Err(GroupInvalid::CompositeQ);
        }
        if (&self.p - &one) % &self.q != BigUint::zero() {
            return Err(GroupInvalid::OrderDoesNotDivide);
        }
        if self.g <= one || self.g >= self.p {
            return Err(GroupInvalid::BadGenerator);
        }
        if self.g.modpow(&self.q, &self.p) != one {
            return Err(GroupInvalid::BadGenerator);
        }
        Ok(())
    }
}

/// JSON form of [`GroupParams`]: hex integers plus the declared bit length.
#[derive(Serialize, Deserialize)]
pub struct GroupParamsFile {
    pub p: String,
    pub q: String,
    pub g: String,
    pub bit_len: u32,
}

impl From<&GroupParams> for GroupParamsFile {
    fn from(gp: &GroupParams) -> Self {
        let w = gp.byte_len();
        GroupParamsFile {
            p: uint_to_hex(&gp.p, w),
            q: uint_to_hex(&gp.q, w),
            g: uint_to_hex(&gp.g, w),
            bit_len: gp.bit_len,
        }
    }
}

impl GroupParamsFile {
    pub fn into_params(self) -> Result<GroupParams, String> {
        let p = uint_from_hex(&self.p).ok_or("field p: bad hex")?;
        let q = uint_from_hex(&self.q).ok_or("field q: bad hex")?;
        let g = uint_from_hex(&self.g).ok_or("field g: bad hex")?;
        GroupParams::from_parts(p, q, g, self.bit_len).map_err(|e| e.to_string())
    }
}

/// `base^exponent mod modulus`.
pub fn mod_exp(base: &BigUint, exponent: &BigUint, modulus: &BigUint) -> Result<BigUint, NumError> {
    if *modulus < BigUint::from(2u32) {
        return Err(NumError::InvalidModulus);
    }
    Ok((base % modulus).modpow(exponent, modulus))
}

/// Modular inverse of the order-q subgroup element `g^e`: `g^(q - e mod q)`.
pub fn subgroup_inverse_exp(e: &BigUint, q: &BigUint) -> BigUint {
    let r = e % q;
    if r.is_zero() {
        BigUint::zero()
    } else {
        q - r
    }
}

/// Generates Schnorr-style group parameters deterministically from a seed.
///
/// `q` is drawn first with `ceil(bit_len / 2)` bits, then `p = k*q + 1` is
/// searched for an exactly-`bit_len`-bit prime, and finally
/// `g = h^((p-1)/q) mod p` for successive random `h` until `g != 1`.
pub fn gen_group_params(bit_len: u32, seed: &[u8]) -> Result<GroupParams, NumError> {
    if bit_len < 16 {
        return Err(NumError::BitLenTooSmall(bit_len));
    }
    let mut prg = PrgStream::new(seed, b"group-gen");
    let q_bits = bit_len.div_ceil(2);
    let one = BigUint::one();
    loop {
        let q = random_prime(&mut prg, q_bits);
        // Search p = k*q + 1 of exactly bit_len bits; k must be even to keep
        // p odd. Bounded tries per q, then a fresh q.
        let p_lo = BigUint::one() << (bit_len - 1) as usize;
        let p_hi = (BigUint::one() << bit_len as usize) - &one;
        let k_lo = (&p_lo - &one).div_ceil(&q);
        let k_hi = (&p_hi - &one) / &q;
        if k_hi < k_lo {
            continue;
        }
        let span = &k_hi - &k_lo + &one;
        for _ in 0..(8 * bit_len as usize) {
            let mut k = &k_lo + prg.draw_below(&span).expect("nonempty span");
            if k.is_odd() {
                k += 1u32;
                if k > k_hi {
                    continue;
                }
            }
            let p = &k * &q + &one;
            if p.bits() != bit_len as u64 || !is_probable_prime(&p, MILLER_RABIN_ROUNDS) {
                continue;
            }
            let cofactor = &k; // (p - 1) / q
            let g = loop {
                let h_span = &p - BigUint::from(3u32);
                let h = prg.draw_below(&h_span).expect("p > 3") + BigUint::from(2u32);
                let g = h.modpow(cofactor, &p);
                if g != one {
                    break g;
                }
            };
            return Ok(GroupParams {
                p,
                q,
                g,
                bit_len,
            });
        }
    }
}

fn random_prime(prg: &mut PrgStream, bits: u32) -> BigUint {
    let top = BigUint::one() << (bits - 1) as usize;
    loop {
        let mut cand = prg.draw_bits(bits);
        cand |= &top; // exact bit length
        cand |= BigUint::one(); // odd
        if is_probable_prime(&cand, MILLER_RABIN_ROUNDS) {
            return cand;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(n: u64) -> BigUint {
        BigUint::from(n)
    }

    #[test]
    fn mod_exp_identity_and_fixtures() {
        for x in [0u64, 1, 5, 22] {
            assert_eq!(mod_exp(&big(x), &big(0), &big(23)).unwrap(), big(1));
        }
        assert_eq!(mod_exp(&big(2), &big(7), &big(23)).unwrap(), big(13));
        assert_eq!(mod_exp(&big(2), &big(11), &big(23)).unwrap(), big(1));
    }

    #[test]
    fn mod_exp_rejects_tiny_modulus() {
        assert_eq!(
            mod_exp(&big(2), &big(7), &big(1)).unwrap_err(),
            NumError::InvalidModulus
        );
        assert_eq!(
            mod_exp(&big(2), &big(7), &big(0)).unwrap_err(),
            NumError::InvalidModulus
        );
    }

    #[test]
    fn mod_exp_agrees_with_square_and_multiply_oracle() {
        // Independent oracle: schoolbook square-and-multiply on u128.
        fn oracle(mut base: u128, mut exp: u64, m: u128) -> u128 {
            let mut acc = 1u128 % m;
            base %= m;
            while exp > 0 {
                if exp & 1 == 1 {
                    acc = acc * base % m;
                }
                base = base * base % m;
                exp >>= 1;
            }
            acc
        }
        let mut prg = PrgStream::new(b"modexp-oracle", b"");
        for _ in 0..1000 {
            let base = prg.next_u64();
            let exp = prg.next_u64();
            let m = prg.next_u64().max(2);
            let got = mod_exp(&big(base), &big(exp), &big(m)).unwrap();
            let want = oracle(base as u128, exp, m as u128);
            assert_eq!(got, BigUint::from(want));
        }
    }

    #[test]
    fn hash_framing_is_unambiguous() {
        assert_ne!(hash(&[b"x", b"y"]), hash(&[b"xy"]));
        assert_ne!(hash(&[b"x", b"y"]), hash(&[b"y", b"x"]));
        assert_eq!(hash(&[]), hash(&[]));
    }

    #[test]
    fn hash_matches_reference_vectors() {
        // SHA-256("") -- the framed empty sequence feeds nothing to the hash.
        assert_eq!(
            hash(&[]).to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        // SHA-256(be64(32) || 32 zero octets), computed with an independent
        // implementation.
        let zeros = [0u8; 32];
        assert_eq!(
            hash(&[&zeros]).to_hex(),
            "1c799f3865a7f8d488e3c0693890f231903598fde52745a0f7c29c6fa6801199"
        );
    }

    #[test]
    fn fixture_group_validates() {
        let gp = GroupParams::from_parts(big(23), big(11), big(2), 5).unwrap();
        assert_eq!(gp.validate(), Ok(()));
    }

    #[test]
    fn validation_catches_each_break() {
        assert_eq!(
            GroupParams::from_parts(big(22), big(11), big(2), 5).unwrap_err(),
            GroupInvalid::CompositeP
        );
        assert_eq!(
            GroupParams::from_parts(big(23), big(10), big(2), 5).unwrap_err(),
            GroupInvalid::CompositeQ
        );
        assert_eq!(
            GroupParams::from_parts(big(23), big(7), big(2), 5).unwrap_err(),
            GroupInvalid::OrderDoesNotDivide
        );
        // 5^11 mod 23 = 22 != 1, so 5 is not in the order-11 subgroup.
        assert_eq!(
            GroupParams::from_parts(big(23), big(11), big(5), 5).unwrap_err(),
            GroupInvalid::BadGenerator
        );
        assert_eq!(
            GroupParams::from_parts(big(23), big(11), big(1), 5).unwrap_err(),
            GroupInvalid::BadGenerator
        );
        assert!(matches!(
            GroupParams::from_parts(big(23), big(11), big(2), 16).unwrap_err(),
            GroupInvalid::BitLenMismatch { .. }
        ));
    }

    #[test]
    fn generated_groups_satisfy_invariants() {
        for bit_len in [16u32, 24, 32, 64] {
            let gp = gen_group_params(bit_len, b"seed-0").unwrap();
            assert_eq!(gp.validate(), Ok(()), "bit_len {bit_len}");
            assert_eq!(gp.bit_len(), bit_len);
            assert!(gp.q().bits() >= (bit_len / 2) as u64);
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = gen_group_params(16, b"seed-0").unwrap();
        let b = gen_group_params(16, b"seed-0").unwrap();
        let c = gen_group_params(16, b"seed-1").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generation_rejects_small_bit_len() {
        assert_eq!(
            gen_group_params(15, b"s").unwrap_err(),
            NumError::BitLenTooSmall(15)
        );
    }

    #[test]
    fn bitstring_enforces_width() {
        assert!(BitString::new(8, big(255)).is_ok());
        assert_eq!(
            BitString::new(8, big(256)).unwrap_err(),
            NumError::ValueTooWide { width: 8 }
        );
        let a = BitString::new(8, big(0b1010_1010)).unwrap();
        let b = BitString::new(8, big(0b0110_0110)).unwrap();
        assert_eq!(a.xor(&b).unwrap().value(), &big(0b1100_1100));
        let wide = BitString::new(16, big(1)).unwrap();
        assert!(a.xor(&wide).is_err());
    }

    #[test]
    fn fixed_width_encoding_pads() {
        assert_eq!(int_to_fixed_bytes(&big(5), 4), vec![0, 0, 0, 5]);
        assert_eq!(uint_to_hex(&big(0xabcd), 4), "0000abcd");
        assert_eq!(uint_from_hex("0000abcd").unwrap(), big(0xabcd));
        assert_eq!(uint_from_hex("xyz"), None);
        assert_eq!(uint_from_hex(""), None);
    }

    #[test]
    fn group_file_roundtrip() {
        let gp = gen_group_params(32, b"file-rt").unwrap();
        let file = GroupParamsFile::from(&gp);
        let text = serde_json::to_string(&file).unwrap();
        let back: GroupParamsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_params().unwrap(), gp);
    }
}
