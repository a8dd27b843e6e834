//! Ring signatures over per-user discrete-log groups.
//!
//! Each user `i` publishes a group `(p_i, q_i, g_i)` and a public key
//! `y_i = g_i^{x_i}`, and signs through the trapdoor function
//!
//! ```text
//! f_i(alpha, beta) = alpha * y_i^(alpha mod q_i) * g_i^beta  (mod p_i)
//! ```
//!
//! which anyone can evaluate but only the key holder can invert. A signature
//! on behalf of a ring glues one trapdoor image per member into the keyed
//! ring equation `C_{k,v}(y_1 .. y_n) = v`, where `C` chains the keyed
//! permutation `E_k` over b-bit strings:
//!
//! ```text
//! C_{k,v}(y_1 .. y_n) = E_k(y_n ^ E_k(y_(n-1) ^ ... E_k(y_1 ^ v) ... ))
//! ```
//!
//! The signer draws preimages for every other slot, solves the equation for
//! its own slot, and uses its private exponent to hit the solved target. A
//! verifier recomputes every image under that member's own group and checks
//! the chain closes; the formula is identical for every slot, so the
//! transcript carries no signer index.
//!
//! All ring members must share the same modulus bit length `b`; member
//! residues embed into the b-bit permutation domain by fixed-width encoding,
//! and the signer re-draws the glue value `v` whenever its solved slot falls
//! outside its own group (expected under two tries since `p_i >= 2^(b-1)`).

use crate::numtheory::{
    self, group_byte_len, mod_exp, permute, subgroup_inverse_exp, BitString, Digest, Direction,
    GroupParams, NumError, PrgStream,
};
use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Cap on v re-draws while solving the signer slot; acceptance probability
/// per draw exceeds 1/2, so hitting this indicates corrupted inputs.
const MAX_SOLVE_ATTEMPTS: u32 = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RingError {
    #[error("signer index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("signer key does not match ring slot")]
    SignerMismatch,
    #[error("ring members must share one modulus bit length")]
    MixedBitLen,
    #[error("ring must not be empty")]
    EmptyRing,
    #[error("trapdoor target must satisfy 0 < y < p")]
    TargetOutOfRange,
    #[error("alpha must be nonzero mod p")]
    AlphaZero,
    #[error("private exponent must satisfy 1 <= x < q")]
    BadPrivateExponent,
    #[error("solve rejection loop exceeded {MAX_SOLVE_ATTEMPTS} attempts")]
    SolveOverflow,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Why a signature failed verification. Malformed structure rejects; it
/// never panics or escalates to an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingReject {
    EmptyRing,
    PairCountMismatch,
    MixedBitLen,
    WidthMismatch,
    PreimageOutOfRange { member: usize },
    EquationFailed,
}

impl std::fmt::Display for RingReject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RingReject::EmptyRing => write!(f, "empty ring"),
            RingReject::PairCountMismatch => write!(f, "pair count does not match ring size"),
            RingReject::MixedBitLen => write!(f, "ring members disagree on bit length"),
            RingReject::WidthMismatch => write!(f, "glue value width does not match bit length"),
            RingReject::PreimageOutOfRange { member } => {
                write!(f, "preimage {member} out of range")
            }
            RingReject::EquationFailed => write!(f, "ring equation does not close"),
        }
    }
}

/// Public half of a ring member: identifier, group, and public key.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct UserPublicKey {
    pub user_id: String,
    pub params: GroupParams,
    pub y: BigUint,
}

/// Full key material for one user. The private exponent never leaves this
/// struct; verification-side code only ever sees [`UserPublicKey`].
#[derive(Clone)]
pub struct UserKeyMaterial {
    public: UserPublicKey,
    x: BigUint,
}

impl UserKeyMaterial {
    /// Draws a fresh key pair over `params`.
    pub fn generate(
        user_id: impl Into<String>,
        params: GroupParams,
        rng: &mut PrgStream,
    ) -> Result<Self, RingError> {
        let x = rng.draw_nonzero_below(params.q())?;
        Self::from_secret(user_id, params, x)
    }

    /// Rebuilds key material from a stored private exponent.
    pub fn from_secret(
        user_id: impl Into<String>,
        params: GroupParams,
        x: BigUint,
    ) -> Result<Self, RingError> {
        if x.is_zero() || &x >= params.q() {
            return Err(RingError::BadPrivateExponent);
        }
        let y = mod_exp(params.g(), &x, params.p())?;
        Ok(UserKeyMaterial {
            public: UserPublicKey {
                user_id: user_id.into(),
                params,
                y,
            },
            x,
        })
    }

    pub fn public(&self) -> &UserPublicKey {
        &self.public
    }

    pub fn user_id(&self) -> &str {
        &self.public.user_id
    }

    pub fn params(&self) -> &GroupParams {
        &self.public.params
    }

    pub fn secret_exponent(&self) -> &BigUint {
        &self.x
    }
}

/// Trapdoor preimage `(alpha, beta)` with `0 < alpha < p`, `0 <= beta < q`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TrapdoorPreimage {
    pub alpha: BigUint,
    pub beta: BigUint,
}

impl TrapdoorPreimage {
    pub fn in_range(&self, params: &GroupParams) -> bool {
        !self.alpha.is_zero() && &self.alpha < params.p() && &self.beta < params.q()
    }
}

/// Evaluates `f_i(alpha, beta) = alpha * y^(alpha mod q) * g^beta mod p`
/// for member `i`'s group. Publicly computable.
pub fn trapdoor_eval(member: &UserPublicKey, pre: &TrapdoorPreimage) -> Result<BigUint, RingError> {
    let p = member.params.p();
    let q = member.params.q();
    if (&pre.alpha % p).is_zero() {
        return Err(RingError::AlphaZero);
    }
    let alpha_star = &pre.alpha % q;
    let y_pow = mod_exp(&member.y, &alpha_star, p)?;
    let g_pow = mod_exp(member.params.g(), &pre.beta, p)?;
    Ok(&pre.alpha * y_pow % p * g_pow % p)
}

/// Inverts the trapdoor at `target_y` using the private exponent.
///
/// Draws an ephemeral `K` in `Z_q`, sets `t = g^K mod p`, `e = K*t mod q`,
/// and computes
///
/// ```text
/// alpha = target_y * g^(-e) mod p
/// beta  = (K*t - x * (alpha mod q)) mod q
/// ```
///
/// so that `f(alpha, beta) = target_y`. `K` is consumed inside this call and
/// never escapes; calls with different PRG states yield different, equally
/// valid preimages for the same target.
pub fn trapdoor_invert(
    member: &UserKeyMaterial,
    target_y: &BigUint,
    rng: &mut PrgStream,
) -> Result<TrapdoorPreimage, RingError> {
    let p = member.params().p();
    let q = member.params().q();
    if target_y.is_zero() || target_y >= p {
        return Err(RingError::TargetOutOfRange);
    }
    let k = rng.draw_below(q)?;
    let t = mod_exp(member.params().g(), &k, p)?;
    let kt = &k * &t;
    let e = &kt % q;
    let g_inv_e = mod_exp(member.params().g(), &subgroup_inverse_exp(&e, q), p)?;
    let alpha = target_y * g_inv_e % p;
    let alpha_star = &alpha % q;
    // (K*t - x*alpha*) mod q, kept non-negative.
    let kt_mod = &kt % q;
    let sub = &member.x * alpha_star % q;
    let beta = (&kt_mod + q - sub) % q;
    Ok(TrapdoorPreimage { alpha, beta })
}

/// The keyed combining function `C_{k,v}`: folds each b-bit image into the
/// chain through the keyed permutation. Empty input returns `v` unchanged.
pub fn combine(k: &Digest, v: &BitString, y_hats: &[BitString]) -> Result<BitString, RingError> {
    let width = v.width();
    let mut acc = v.clone();
    for y in y_hats {
        if y.width() != width {
            return Err(RingError::Num(NumError::WidthMismatch {
                expected: width,
                got: y.width(),
            }));
        }
        acc = permute(k, width, &y.xor(&acc)?, Direction::Forward)?;
    }
    Ok(acc)
}

/// Solves the ring equation for slot `i`: returns the unique `y_hat` such
/// that inserting it at `i` makes `combine(k, v, full_list) == v`.
///
/// Winds the chain forward through the slots below `i` and unwinds it
/// backward from the required output `v` through the slots above `i`.
pub fn solve_ring(
    k: &Digest,
    v: &BitString,
    y_hats_except_i: &[BitString],
    i: usize,
) -> Result<BitString, RingError> {
    if i > y_hats_except_i.len() {
        return Err(RingError::IndexOutOfRange(i));
    }
    let width = v.width();
    // Forward prefix: the chain value entering slot i.
    let mut before = v.clone();
    for y in &y_hats_except_i[..i] {
        before = permute(k, width, &y.xor(&before)?, Direction::Forward)?;
    }
    // Backward suffix: the chain value slot i must produce.
    let mut after = v.clone();
    for y in y_hats_except_i[i..].iter().rev() {
        after = permute(k, width, &after, Direction::Inverse)?.xor(y)?;
    }
    // E_k(y_hat ^ before) = after  =>  y_hat = E_k^{-1}(after) ^ before.
    Ok(permute(k, width, &after, Direction::Inverse)?.xor(&before)?)
}

/// A ring signature: the ring, the glue value `v`, the DH-layer residues
/// `V` and `R` carried for the key-exchange tag, and one trapdoor preimage
/// per member, index-aligned with the ring.
#[derive(Clone, Debug)]
pub struct RingSignature {
    pub ring: Vec<UserPublicKey>,
    pub v: BitString,
    pub big_v: BigUint,
    pub big_r: BigUint,
    pub pairs: Vec<TrapdoorPreimage>,
    /// Fixed-width octet length used to serialize `V` and `R`; set from the
    /// server group by the key-exchange layer.
    pub dh_byte_len: usize,
}

impl RingSignature {
    pub fn ring_size(&self) -> usize {
        self.ring.len()
    }

    /// Shared encoding width `b` (the ring's modulus bit length).
    pub fn width_b(&self) -> u32 {
        self.v.width()
    }
}

fn shared_bit_len(ring: &[UserPublicKey]) -> Result<u32, RingError> {
    let first = ring.first().ok_or(RingError::EmptyRing)?;
    let b = first.params.bit_len();
    if ring.iter().any(|m| m.params.bit_len() != b) {
        return Err(RingError::MixedBitLen);
    }
    Ok(b)
}

/// Produces a ring signature for `ring` with the signer at `signer_index`.
///
/// `k` is the combining-function key and `big_v`/`big_r` are the DH-layer
/// residues supplied by the caller; this operation performs only the
/// ring-specific steps. Re-draws `v` until the solved signer slot lands in
/// the signer's own group.
pub fn ring_sign(
    ring: &[UserPublicKey],
    signer_index: usize,
    signer: &UserKeyMaterial,
    k: &Digest,
    big_v: &BigUint,
    big_r: &BigUint,
    rng: &mut PrgStream,
) -> Result<RingSignature, RingError> {
    let b = shared_bit_len(ring)?;
    let slot = ring
        .get(signer_index)
        .ok_or(RingError::IndexOutOfRange(signer_index))?;
    if slot != signer.public() {
        return Err(RingError::SignerMismatch);
    }

    // Pseudorandom preimages and images for every other member.
    let mut pairs: Vec<Option<TrapdoorPreimage>> = vec![None; ring.len()];
    let mut y_hats_others: Vec<BitString> = Vec::with_capacity(ring.len().saturating_sub(1));
    for (t, member) in ring.iter().enumerate() {
        if t == signer_index {
            continue;
        }
        let pre = TrapdoorPreimage {
            alpha: rng.draw_nonzero_below(member.params.p())?,
            beta: rng.draw_below(member.params.q())?,
        };
        let y_t = trapdoor_eval(member, &pre)?;
        y_hats_others.push(BitString::new(b, y_t)?);
        pairs[t] = Some(pre);
    }

    // Solve the signer slot; re-draw v while the solution misses Z_p*.
    let (v, y_i, _attempts) =
        solve_signer_slot(k, b, &y_hats_others, signer_index, signer.params().p(), rng)?;

    pairs[signer_index] = Some(trapdoor_invert(signer, &y_i, rng)?);

    Ok(RingSignature {
        ring: ring.to_vec(),
        v,
        big_v: big_v.clone(),
        big_r: big_r.clone(),
        pairs: pairs
            .into_iter()
            .map(|p| p.expect("all slots filled"))
            .collect(),
        dh_byte_len: dh_min_len(big_v, big_r),
    })
}

fn dh_min_len(big_v: &BigUint, big_r: &BigUint) -> usize {
    (big_v.bits().max(big_r.bits()).max(1) as usize).div_ceil(8)
}

/// Draws glue values until the solved signer slot is a usable trapdoor
/// target in `[1, p_i)`; returns the accepted `v`, the target, and how many
/// draws it took.
fn solve_signer_slot(
    k: &Digest,
    b: u32,
    y_hats_others: &[BitString],
    signer_index: usize,
    p_i: &BigUint,
    rng: &mut PrgStream,
) -> Result<(BitString, BigUint, u32), RingError> {
    for attempt in 1..=MAX_SOLVE_ATTEMPTS {
        let v = rng.draw_bitstring(b);
        let y_hat = solve_ring(k, &v, y_hats_others, signer_index)?;
        let y = y_hat.value();
        if !y.is_zero() && y < p_i {
            return Ok((v, y.clone(), attempt));
        }
    }
    Err(RingError::SolveOverflow)
}

/// Verifies the ring equation: recomputes every member's trapdoor image
/// under that member's own group, encodes to width `b`, and accepts iff
/// `C_{k,v}` closes back to `v`.
pub fn ring_verify(sig: &RingSignature, k: &Digest) -> Result<(), RingReject> {
    if sig.ring.is_empty() {
        return Err(RingReject::EmptyRing);
    }
    if sig.pairs.len() != sig.ring.len() {
        return Err(RingReject::PairCountMismatch);
    }
    let b = match shared_bit_len(&sig.ring) {
        Ok(b) => b,
        Err(_) => return Err(RingReject::MixedBitLen),
    };
    if sig.v.width() != b {
        return Err(RingReject::WidthMismatch);
    }
    let mut y_hats = Vec::with_capacity(sig.ring.len());
    for (t, (member, pre)) in sig.ring.iter().zip(&sig.pairs).enumerate() {
        if !pre.in_range(&member.params) {
            return Err(RingReject::PreimageOutOfRange { member: t });
        }
        let y_t =
            trapdoor_eval(member, pre).map_err(|_| RingReject::PreimageOutOfRange { member: t })?;
        // y_t < p_t < 2^b, so the encoding always fits.
        let y_hat =
            BitString::new(b, y_t).map_err(|_| RingReject::PreimageOutOfRange { member: t })?;
        y_hats.push(y_hat);
    }
    match combine(k, &sig.v, &y_hats) {
        Ok(out) if out == sig.v => Ok(()),
        Ok(_) => Err(RingReject::EquationFailed),
        Err(_) => Err(RingReject::WidthMismatch),
    }
}

// --- serialization ---------------------------------------------------------

/// Wire form of a preimage pair; hex at the member group's fixed width.
#[derive(Serialize, Deserialize, Clone, PartialEq, Eq, Debug)]
pub struct PairWire {
    pub alpha: String,
    pub beta: String,
}

/// Wire form of a signature. Ring members travel as bare identifiers; the
/// verifier resolves them against its registry of published keys. Fields are
/// declared in sorted-key order and integers are fixed-width lowercase hex,
/// so encoding is byte-stable for fixed inputs.
#[derive(Serialize, Deserialize, Clone, PartialEq, Eq, Debug)]
pub struct SignatureWire {
    #[serde(rename = "R")]
    pub r: String,
    #[serde(rename = "V")]
    pub v_cap: String,
    pub b: u32,
    pub pairs: Vec<PairWire>,
    pub ring: Vec<String>,
    pub v: String,
}

/// Registry of published user keys, keyed by identifier.
#[derive(Clone, Default, Debug)]
pub struct UserDirectory {
    users: BTreeMap<String, UserPublicKey>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DirectoryError {
    #[error("unknown user id {0:?}")]
    UnknownUser(String),
    #[error("duplicate user id {0:?}")]
    DuplicateUser(String),
}

impl UserDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, key: UserPublicKey) -> Result<(), DirectoryError> {
        if self.users.contains_key(&key.user_id) {
            return Err(DirectoryError::DuplicateUser(key.user_id));
        }
        self.users.insert(key.user_id.clone(), key);
        Ok(())
    }

    pub fn lookup(&self, user_id: &str) -> Option<&UserPublicKey> {
        self.users.get(user_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed signature: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Directory(#[from] DirectoryError),
}

impl RingSignature {
    pub fn to_wire(&self) -> SignatureWire {
        let member_w = |m: &UserPublicKey| group_byte_len(m.params.bit_len());
        SignatureWire {
            r: numtheory::uint_to_hex(&self.big_r, self.dh_byte_len),
            v_cap: numtheory::uint_to_hex(&self.big_v, self.dh_byte_len),
            b: self.width_b(),
            pairs: self
                .pairs
                .iter()
                .zip(&self.ring)
                .map(|(pre, m)| PairWire {
                    alpha: numtheory::uint_to_hex(&pre.alpha, member_w(m)),
                    beta: numtheory::uint_to_hex(&pre.beta, member_w(m)),
                })
                .collect(),
            ring: self.ring.iter().map(|m| m.user_id.clone()).collect(),
            v: hex::encode(self.v.to_bytes()),
        }
    }

    /// Compact JSON bytes (sorted keys, no whitespace).
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_wire()).expect("wire form always serializes")
    }

    /// Rebuilds a signature from its wire form, resolving ring ids against
    /// the directory. Structural problems are reported, never panicked on.
    pub fn from_wire(wire: &SignatureWire, directory: &UserDirectory) -> Result<Self, WireError> {
        if wire.ring.is_empty() {
            return Err(WireError::Malformed("empty ring"));
        }
        if wire.pairs.len() != wire.ring.len() {
            return Err(WireError::Malformed("pair count mismatch"));
        }
        let mut ring = Vec::with_capacity(wire.ring.len());
        for id in &wire.ring {
            let member = directory
                .lookup(id)
                .ok_or_else(|| WireError::Directory(DirectoryError::UnknownUser(id.clone())))?;
            ring.push(member.clone());
        }
        let mut pairs = Vec::with_capacity(wire.pairs.len());
        for pw in &wire.pairs {
            pairs.push(TrapdoorPreimage {
                alpha: numtheory::uint_from_hex(&pw.alpha)
                    .ok_or(WireError::Malformed("bad alpha hex"))?,
                beta: numtheory::uint_from_hex(&pw.beta)
                    .ok_or(WireError::Malformed("bad beta hex"))?,
            });
        }
        let v_val = numtheory::uint_from_hex(&wire.v).ok_or(WireError::Malformed("bad v hex"))?;
        let v = BitString::new(wire.b, v_val).map_err(|_| WireError::Malformed("v too wide"))?;
        let big_r = numtheory::uint_from_hex(&wire.r).ok_or(WireError::Malformed("bad R hex"))?;
        let big_v =
            numtheory::uint_from_hex(&wire.v_cap).ok_or(WireError::Malformed("bad V hex"))?;
        if wire.r.len() != wire.v_cap.len() || wire.r.len() % 2 != 0 || wire.r.is_empty() {
            return Err(WireError::Malformed("R/V width mismatch"));
        }
        Ok(RingSignature {
            ring,
            v,
            big_v,
            big_r,
            pairs,
            dh_byte_len: wire.r.len() / 2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numtheory::{gen_group_params, hash};

    fn big(n: u64) -> BigUint {
        BigUint::from(n)
    }

    /// The toy group (p=23, q=11, g=2) with x = 7, used throughout.
    fn fixture_member() -> UserKeyMaterial {
        let params = GroupParams::from_parts(big(23), big(11), big(2), 5).unwrap();
        UserKeyMaterial::from_secret("alice", params, big(7)).unwrap()
    }

    fn make_ring(bit_len: u32, n: usize, seed: &[u8]) -> Vec<UserKeyMaterial> {
        (0..n)
            .map(|i| {
                let gseed = hash(&[seed, &[i as u8], &bit_len.to_be_bytes()]);
                let params = gen_group_params(bit_len, gseed.as_bytes()).unwrap();
                let mut rng = PrgStream::new(gseed.as_bytes(), b"user-key");
                UserKeyMaterial::generate(format!("user-{i}"), params, &mut rng).unwrap()
            })
            .collect()
    }

    fn dh_values(seed: &[u8]) -> (Digest, BigUint, BigUint) {
        let mut rng = PrgStream::new(seed, b"dh");
        (
            hash(&[seed]),
            big(rng.next_u64().max(1)),
            big(rng.next_u64().max(1)),
        )
    }

    #[test]
    fn fixture_public_key_matches() {
        let m = fixture_member();
        assert_eq!(m.public().y, big(13)); // 2^7 mod 23
    }

    #[test]
    fn eval_of_unit_alpha_yields_public_key() {
        // f(1, 0) = 1 * y^1 * g^0 = y.
        let m = fixture_member();
        let pre = TrapdoorPreimage {
            alpha: big(1),
            beta: big(0),
        };
        assert_eq!(trapdoor_eval(m.public(), &pre).unwrap(), m.public().y);
    }

    #[test]
    fn eval_is_stable_under_beta_plus_q() {
        let m = fixture_member();
        let pre = TrapdoorPreimage {
            alpha: big(7),
            beta: big(8),
        };
        let shifted = TrapdoorPreimage {
            alpha: big(7),
            beta: big(8 + 11),
        };
        assert_eq!(
            trapdoor_eval(m.public(), &pre).unwrap(),
            trapdoor_eval(m.public(), &shifted).unwrap()
        );
    }

    #[test]
    fn eval_rejects_zero_alpha_and_invert_rejects_zero_target() {
        let m = fixture_member();
        let pre = TrapdoorPreimage {
            alpha: big(0),
            beta: big(1),
        };
        assert_eq!(trapdoor_eval(m.public(), &pre), Err(RingError::AlphaZero));
        assert_eq!(
            trapdoor_invert(&m, &big(0), &mut PrgStream::new(b"z", b"")),
            Err(RingError::TargetOutOfRange)
        );
    }

    /// Searches test seeds until the first K drawn from [0, 11) equals the
    /// wanted value; keeps the hand-derived fixture reproducible.
    fn seed_forcing_k(wanted: u64) -> Vec<u8> {
        for s in 0u32..4096 {
            let seed = s.to_be_bytes().to_vec();
            let mut probe = PrgStream::new(&seed, b"fixture-k");
            if probe.draw_below(&big(11)).unwrap() == big(wanted) {
                return seed;
            }
        }
        panic!("no seed forces K = {wanted}");
    }

    #[test]
    fn invert_reproduces_hand_derived_fixture() {
        // p=23, q=11, g=2, x=7, target y=5, K forced to 3:
        //   t = 2^3 mod 23 = 8, e = 24 mod 11 = 2,
        //   alpha = 5 * 2^(-2) mod 23 = 7, beta = (24 - 7*7) mod 11 = 8.
        let m = fixture_member();
        let seed = seed_forcing_k(3);
        let mut rng = PrgStream::new(&seed, b"fixture-k");
        let pre = trapdoor_invert(&m, &big(5), &mut rng).unwrap();
        assert_eq!(pre.alpha, big(7));
        assert_eq!(pre.beta, big(8));
        assert_eq!(trapdoor_eval(m.public(), &pre).unwrap(), big(5));

        // Re-run: byte-identical preimage.
        let mut rng2 = PrgStream::new(&seed, b"fixture-k");
        assert_eq!(trapdoor_invert(&m, &big(5), &mut rng2).unwrap(), pre);
    }

    #[test]
    fn distinct_prg_states_give_distinct_valid_preimages() {
        let m = fixture_member();
        let s3 = seed_forcing_k(3);
        let s5 = seed_forcing_k(5);
        let a = trapdoor_invert(&m, &big(5), &mut PrgStream::new(&s3, b"fixture-k")).unwrap();
        let b = trapdoor_invert(&m, &big(5), &mut PrgStream::new(&s5, b"fixture-k")).unwrap();
        assert_ne!(a, b);
        assert_eq!(trapdoor_eval(m.public(), &a).unwrap(), big(5));
        assert_eq!(trapdoor_eval(m.public(), &b).unwrap(), big(5));
    }

    #[test]
    fn eval_invert_roundtrip_across_group_sizes() {
        for bit_len in [16u32, 32, 64] {
            let params = gen_group_params(bit_len, &bit_len.to_be_bytes()).unwrap();
            let mut rng = PrgStream::new(&bit_len.to_be_bytes(), b"rt");
            let member = UserKeyMaterial::generate("u", params.clone(), &mut rng).unwrap();
            for _ in 0..1000 {
                let y = rng.draw_nonzero_below(params.p()).unwrap();
                let pre = trapdoor_invert(&member, &y, &mut rng).unwrap();
                assert!(pre.in_range(&params));
                assert_eq!(trapdoor_eval(member.public(), &pre).unwrap(), y);
            }
        }
    }

    #[test]
    fn combine_single_element_unrolls_definition() {
        let k = hash(&[b"k"]);
        let mut rng = PrgStream::new(b"combine-1", b"");
        for _ in 0..50 {
            let v = rng.draw_bitstring(16);
            let y = rng.draw_bitstring(16);
            let direct = permute(&k, 16, &y.xor(&v).unwrap(), Direction::Forward).unwrap();
            assert_eq!(combine(&k, &v, std::slice::from_ref(&y)).unwrap(), direct);
        }
    }

    #[test]
    fn combine_empty_returns_v() {
        let k = hash(&[b"k"]);
        let v = BitString::new(16, big(0x1234)).unwrap();
        assert_eq!(combine(&k, &v, &[]).unwrap(), v);
    }

    #[test]
    fn combine_is_bijective_in_each_slot_at_width_8() {
        let k = hash(&[b"slot-bijection"]);
        let mut rng = PrgStream::new(b"slots", b"");
        let v = rng.draw_bitstring(8);
        let fixed: Vec<BitString> = (0..3).map(|_| rng.draw_bitstring(8)).collect();
        for j in 0..=fixed.len() {
            let mut outputs = std::collections::HashSet::new();
            for cand in 0u32..256 {
                let mut ys = fixed.clone();
                ys.insert(j, BitString::new(8, cand.into()).unwrap());
                outputs.insert(combine(&k, &v, &ys).unwrap().value().clone());
            }
            assert_eq!(outputs.len(), 256, "slot {j} not bijective");
        }
    }

    #[test]
    fn solve_ring_closed_form_for_single_slot() {
        let k = hash(&[b"n1"]);
        let mut rng = PrgStream::new(b"n1", b"");
        for _ in 0..100 {
            let v = rng.draw_bitstring(16);
            let want = permute(&k, 16, &v, Direction::Inverse)
                .unwrap()
                .xor(&v)
                .unwrap();
            assert_eq!(solve_ring(&k, &v, &[], 0).unwrap(), want);
        }
    }

    #[test]
    fn solved_slot_closes_the_equation() {
        let k = hash(&[b"solve"]);
        let mut rng = PrgStream::new(b"solve", b"");
        for trial in 0..1000 {
            let n = 1 + (trial % 5) as usize;
            let i = trial % n;
            let v = rng.draw_bitstring(16);
            let others: Vec<BitString> = (0..n - 1).map(|_| rng.draw_bitstring(16)).collect();
            let y_i = solve_ring(&k, &v, &others, i).unwrap();
            let mut full = others.clone();
            full.insert(i, y_i);
            assert_eq!(combine(&k, &v, &full).unwrap(), v);
        }
    }

    #[test]
    fn solved_slot_is_the_unique_solution_at_width_8() {
        let mut rng = PrgStream::new(b"unique", b"");
        for trial in 0u8..100 {
            let k = hash(&[b"unique", &[trial]]);
            let n = 1 + (trial % 4) as usize;
            let i = trial as usize % n;
            let v = rng.draw_bitstring(8);
            let others: Vec<BitString> = (0..n - 1).map(|_| rng.draw_bitstring(8)).collect();
            let solved = solve_ring(&k, &v, &others, i).unwrap();
            let mut matches = Vec::new();
            for cand in 0u32..256 {
                let y = BitString::new(8, cand.into()).unwrap();
                let mut full = others.clone();
                full.insert(i, y.clone());
                if combine(&k, &v, &full).unwrap() == v {
                    matches.push(y);
                }
            }
            assert_eq!(matches, vec![solved]);
        }
    }

    #[test]
    fn degenerate_single_member_ring_verifies() {
        let users = make_ring(16, 1, b"degenerate");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"degenerate");
        let mut rng = PrgStream::new(b"degenerate-sign", b"");
        let sig = ring_sign(&ring, 0, &users[0], &k, &bv, &br, &mut rng).unwrap();
        assert_eq!(ring_verify(&sig, &k), Ok(()));
    }

    #[test]
    fn sign_is_deterministic_under_fixed_seed() {
        let users = make_ring(16, 3, b"det");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"det");
        let one = |seed: &[u8]| {
            let mut rng = PrgStream::new(seed, b"sign");
            ring_sign(&ring, 1, &users[1], &k, &bv, &br, &mut rng)
                .unwrap()
                .to_json_bytes()
        };
        assert_eq!(one(b"s0"), one(b"s0"));
        assert_ne!(one(b"s0"), one(b"s1"));
    }

    #[test]
    fn completeness_over_random_rings() {
        let mut rng = PrgStream::new(b"complete", b"");
        for trial in 0..60u32 {
            let bit_len = [16u32, 32, 64][(trial % 3) as usize];
            let n = 1 + (trial % 5) as usize;
            let users = make_ring(bit_len, n, &trial.to_be_bytes());
            let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
            let i = (rng.next_u64() % n as u64) as usize;
            let (k, bv, br) = dh_values(&trial.to_be_bytes());
            let sig = ring_sign(&ring, i, &users[i], &k, &bv, &br, &mut rng).unwrap();
            assert_eq!(ring_verify(&sig, &k), Ok(()), "trial {trial}");
        }
    }

    #[test]
    fn tampering_any_pair_rejects() {
        let users = make_ring(32, 3, b"tamper");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"tamper");
        let mut rng = PrgStream::new(b"tamper-sign", b"");
        for trial in 0..34u32 {
            let idx = (trial % 3) as usize;
            let sig = ring_sign(&ring, idx, &users[idx], &k, &bv, &br, &mut rng).unwrap();
            for t in 0..sig.pairs.len() {
                let mut bad = sig.clone();
                bad.pairs[t].alpha += 1u32;
                assert!(ring_verify(&bad, &k).is_err(), "pair {t} accepted");
            }
        }
    }

    #[test]
    fn verifying_under_wrong_key_rejects() {
        let users = make_ring(32, 2, b"wrongk");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"wrongk");
        let mut rng = PrgStream::new(b"wrongk-sign", b"");
        let sig = ring_sign(&ring, 0, &users[0], &k, &bv, &br, &mut rng).unwrap();
        for i in 0u32..100 {
            let k2 = hash(&[b"other-key", &i.to_be_bytes()]);
            assert_eq!(ring_verify(&sig, &k2), Err(RingReject::EquationFailed));
        }
    }

    #[test]
    fn rejection_loop_stays_under_64_draws() {
        // p_i >= 2^(b-1), so each v draw is accepted with probability above
        // one half; over 1000 signings the worst case stays far below 64.
        let users = make_ring(16, 3, b"rejloop");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, _, _) = dh_values(b"rejloop");
        let mut rng = PrgStream::new(b"rejloop-draws", b"");
        let mut worst = 0;
        for _ in 0..1000 {
            let others: Vec<BitString> = (0..2).map(|_| rng.draw_bitstring(16)).collect();
            let (_, _, attempts) =
                solve_signer_slot(&k, 16, &others, 1, ring[1].params.p(), &mut rng).unwrap();
            worst = worst.max(attempts);
        }
        assert!(worst <= 64, "worst rejection count {worst}");
    }

    #[test]
    fn structural_breaks_reject_with_reasons() {
        let users = make_ring(16, 2, b"structural");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"structural");
        let mut rng = PrgStream::new(b"structural-sign", b"");
        let sig = ring_sign(&ring, 0, &users[0], &k, &bv, &br, &mut rng).unwrap();

        let mut no_ring = sig.clone();
        no_ring.ring.clear();
        assert_eq!(ring_verify(&no_ring, &k), Err(RingReject::EmptyRing));

        let mut short = sig.clone();
        short.pairs.pop();
        assert_eq!(ring_verify(&short, &k), Err(RingReject::PairCountMismatch));

        let mut out_of_range = sig.clone();
        out_of_range.pairs[1].alpha = users[1].params().p().clone();
        assert_eq!(
            ring_verify(&out_of_range, &k),
            Err(RingReject::PreimageOutOfRange { member: 1 })
        );

        let mut bad_width = sig.clone();
        bad_width.v = BitString::new(8, big(3)).unwrap();
        assert_eq!(ring_verify(&bad_width, &k), Err(RingReject::WidthMismatch));
    }

    #[test]
    fn signing_parameter_errors() {
        let users = make_ring(16, 2, b"params");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"params");
        let mut rng = PrgStream::new(b"params-sign", b"");
        assert_eq!(
            ring_sign(&ring, 5, &users[0], &k, &bv, &br, &mut rng).unwrap_err(),
            RingError::IndexOutOfRange(5)
        );
        assert_eq!(
            ring_sign(&ring, 1, &users[0], &k, &bv, &br, &mut rng).unwrap_err(),
            RingError::SignerMismatch
        );
        let mixed = make_ring(32, 1, b"params-32");
        let mut bad_ring = ring.clone();
        bad_ring.push(mixed[0].public().clone());
        assert_eq!(
            ring_sign(&bad_ring, 0, &users[0], &k, &bv, &br, &mut rng).unwrap_err(),
            RingError::MixedBitLen
        );
    }

    #[test]
    fn wire_roundtrip_preserves_signature() {
        let users = make_ring(32, 3, b"wire");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"wire");
        let mut rng = PrgStream::new(b"wire-sign", b"");
        let sig = ring_sign(&ring, 2, &users[2], &k, &bv, &br, &mut rng).unwrap();

        let mut dir = UserDirectory::new();
        for u in &users {
            dir.register(u.public().clone()).unwrap();
        }
        let wire = sig.to_wire();
        let back = RingSignature::from_wire(&wire, &dir).unwrap();
        assert_eq!(back.to_json_bytes(), sig.to_json_bytes());
        assert_eq!(ring_verify(&back, &k), Ok(()));

        let mut unknown = wire.clone();
        unknown.ring[0] = "nobody".into();
        assert!(matches!(
            RingSignature::from_wire(&unknown, &dir),
            Err(WireError::Directory(DirectoryError::UnknownUser(_)))
        ));
    }

    #[test]
    fn serialized_form_exposes_no_secrets_or_signer_index() {
        let users = make_ring(16, 3, b"leak");
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let (k, bv, br) = dh_values(b"leak");
        let mut rng = PrgStream::new(b"leak-sign", b"");
        let sig = ring_sign(&ring, 1, &users[1], &k, &bv, &br, &mut rng).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&sig.to_json_bytes()).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["R", "V", "b", "pairs", "ring", "v"]);
        for pair in obj["pairs"].as_array().unwrap() {
            let mut pk: Vec<&str> = pair
                .as_object()
                .unwrap()
                .keys()
                .map(String::as_str)
                .collect();
            pk.sort_unstable();
            assert_eq!(pk, vec!["alpha", "beta"]);
        }
    }
}
