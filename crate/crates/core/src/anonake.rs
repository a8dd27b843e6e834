//! Anonymous authenticated key exchange.
//!
//! A three-round exchange between a user acting on behalf of an n-member
//! ring and the authentication server, ending in a shared session key:
//!
//! ```text
//! client                                          server (x_B, y_B = g^x_B)
//!   x_1, x_A <- Z_q*
//!   R = g^x_1          Q = (y_B^x_1 mod p) mod q
//!   X = g^x_A          V = X * g^(-Q) mod p
//!   l = H(X, Q, V, y_B)
//!   sigma = ring_sign(ring, k = l, V, R)
//!                  -- sigma, l -->
//!                                      Q = (R^x_B mod p) mod q
//!                                      X = V * g^Q mod p
//!                                      check H(X, Q, V, y_B) == l
//!                                      check ring_verify(sigma, l)
//!                                      check l unseen (replay cache)
//!                                      x_b <- Z_q*, Y = g^x_b
//!                                      K_s = X^x_b, h = H(K_s, X, Y, l)
//!                  <-- h, Y, l --
//!   K'_s = Y^x_A
//!   check H(K'_s, X, Y, l) == h and echoed l
//!   accept K'_s
//! ```
//!
//! `X` itself never crosses the wire: eavesdroppers see only `V` and `R`,
//! and recovering `X` from them requires the server's private exponent.
//! The tag `l` doubles as the combining-function key for the ring
//! signature, binding the signature to this DH transcript.
//!
//! # Wire format
//!
//! Both messages are length-prefixed: a 4-octet big-endian payload length
//! followed by compact JSON (sorted keys, no whitespace) with fixed-width
//! hex integers. Round 1 is `{"l":<hex32>,"sig":<signature>}` with the
//! signature object laid out as in [`SignatureWire`]; round 2 is
//! `{"h":<hex32>,"l":<hex32>,"y":<hex>}`.
//!
//! Because every integer is fixed-width hex, each extra ring member adds a
//! constant number of octets (one `{"alpha":..,"beta":..}` pair at the user
//! group width, one quoted id, two commas), so for fixed-length ids the
//! round-1 size is exactly affine in the ring size n. The codec tests count
//! this field by field.

use crate::numtheory::{
    hash, int_to_fixed_bytes, mod_exp, subgroup_inverse_exp, uint_from_hex, uint_to_hex, Digest,
    GroupParams, NumError, PrgStream,
};
use crate::ringsig::{
    ring_sign, ring_verify, RingError, RingReject, RingSignature, SignatureWire, UserDirectory,
    UserKeyMaterial, UserPublicKey, WireError,
};
use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use thiserror::Error;

/// Server-side key material over the server group `(p, q, g)`.
#[derive(Clone)]
pub struct ServerKeyMaterial {
    public: ServerPublicKey,
    x_b: BigUint,
}

/// The published server half: group parameters and `y_B`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ServerPublicKey {
    pub params: GroupParams,
    pub y_b: BigUint,
}

impl ServerKeyMaterial {
    pub fn generate(params: GroupParams, rng: &mut PrgStream) -> Result<Self, AkeError> {
        let x_b = rng.draw_nonzero_below(params.q())?;
        Self::from_secret(params, x_b)
    }

    pub fn from_secret(params: GroupParams, x_b: BigUint) -> Result<Self, AkeError> {
        if x_b.is_zero() || &x_b >= params.q() {
            return Err(AkeError::BadPrivateExponent);
        }
        let y_b = mod_exp(params.g(), &x_b, params.p())?;
        if y_b.is_one() {
            return Err(AkeError::BadPrivateExponent);
        }
        Ok(ServerKeyMaterial {
            public: ServerPublicKey { params, y_b },
            x_b,
        })
    }

    pub fn public(&self) -> &ServerPublicKey {
        &self.public
    }

    pub fn params(&self) -> &GroupParams {
        &self.public.params
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AkeError {
    #[error("private exponent must satisfy 1 <= x < q")]
    BadPrivateExponent,
    #[error("ring must not be empty")]
    EmptyRing,
    #[error("signer does not match ring slot {0}")]
    SignerMismatch(usize),
    #[error("round-1 state already consumed")]
    StateConsumed,
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Client state retained between rounds 1 and 3. Single use: round 3
/// consumes it and zeroizes the ephemeral exponents.
pub struct ClientRound1State {
    x_1: BigUint,
    x_a: BigUint,
    big_x: BigUint,
    q_val: BigUint,
    big_v: BigUint,
    l: Digest,
    consumed: bool,
}

impl ClientRound1State {
    pub fn tag(&self) -> &Digest {
        &self.l
    }

    pub fn big_x(&self) -> &BigUint {
        &self.big_x
    }

    pub fn q_val(&self) -> &BigUint {
        &self.q_val
    }

    pub fn big_v(&self) -> &BigUint {
        &self.big_v
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// True once the ephemeral exponents have been erased (after round 3).
    pub fn secrets_cleared(&self) -> bool {
        self.x_1.is_zero() && self.x_a.is_zero()
    }

    fn clear_secrets(&mut self) {
        self.x_1 = BigUint::zero();
        self.x_a = BigUint::zero();
    }
}

/// The session key agreed in round 3, tagged with the transcript it came
/// from.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SessionKey {
    pub k_s: BigUint,
    pub transcript_tag: Digest,
}

/// Round 1: the client draws fresh exponents, masks `X` behind `V`, tags
/// the transcript, and signs on behalf of the ring with `k = l`.
pub fn client_round1(
    ring: &[UserPublicKey],
    signer_index: usize,
    signer: &UserKeyMaterial,
    server: &ServerPublicKey,
    rng: &mut PrgStream,
) -> Result<(RingSignature, Digest, ClientRound1State), AkeError> {
    if ring.is_empty() {
        return Err(AkeError::EmptyRing);
    }
    match ring.get(signer_index) {
        Some(slot) if slot == signer.public() => {}
        _ => return Err(AkeError::SignerMismatch(signer_index)),
    }
    let p = server.params.p();
    let q = server.params.q();
    let g = server.params.g();
    let w = server.params.byte_len();

    let x_1 = rng.draw_nonzero_below(q)?;
    let x_a = rng.draw_nonzero_below(q)?;
    let big_r = mod_exp(g, &x_1, p)?;
    let q_val = mod_exp(&server.y_b, &x_1, p)? % q;
    let big_x = mod_exp(g, &x_a, p)?;
    let g_inv_q = mod_exp(g, &subgroup_inverse_exp(&q_val, q), p)?;
    let big_v = &big_x * g_inv_q % p;

    let l = transcript_tag(&big_x, &q_val, &big_v, &server.y_b, w);
    let mut sig = ring_sign(ring, signer_index, signer, &l, &big_v, &big_r, rng)?;
    sig.dh_byte_len = w;

    let state = ClientRound1State {
        x_1,
        x_a,
        big_x,
        q_val,
        big_v,
        l,
        consumed: false,
    };
    Ok((sig, l, state))
}

/// l = H(X, Q, V, y_B), all residues at the server group's fixed width.
fn transcript_tag(x: &BigUint, q: &BigUint, v: &BigUint, y_b: &BigUint, w: usize) -> Digest {
    hash(&[
        &int_to_fixed_bytes(x, w),
        &int_to_fixed_bytes(q, w),
        &int_to_fixed_bytes(v, w),
        &int_to_fixed_bytes(y_b, w),
    ])
}

/// h = H(K_s, X, Y, l).
fn confirmation_tag(k_s: &BigUint, x: &BigUint, y: &BigUint, l: &Digest, w: usize) -> Digest {
    hash(&[
        &int_to_fixed_bytes(k_s, w),
        &int_to_fixed_bytes(x, w),
        &int_to_fixed_bytes(y, w),
        l.as_bytes(),
    ])
}

/// Why the server refused a round-1 transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerReject {
    /// Recomputed tag does not match the transmitted `l`.
    TagMismatch,
    /// The ring signature failed verification.
    RingInvalid(RingReject),
    /// Malformed values (residues out of range, degenerate `X`).
    Structural(&'static str),
    /// The tag was already seen inside the replay horizon.
    Replay,
}

impl std::fmt::Display for ServerReject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServerReject::TagMismatch => write!(f, "tag-mismatch"),
            ServerReject::RingInvalid(r) => write!(f, "ring-invalid: {r}"),
            ServerReject::Structural(s) => write!(f, "structural: {s}"),
            ServerReject::Replay => write!(f, "replay"),
        }
    }
}

/// Accepted round-1 transcript: the reply to send and the server's session
/// view.
#[derive(Clone, Debug)]
pub struct ServerAccept {
    pub reply: Round2Payload,
    pub k_s: BigUint,
    pub recovered_x: BigUint,
}

/// Remembers recently accepted transcript tags; a bounded FIFO, so the
/// horizon is the most recent `capacity` accepted sessions.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    capacity: usize,
    order: VecDeque<Digest>,
    seen: HashSet<[u8; 32]>,
}

impl ReplayCache {
    pub fn new(capacity: usize) -> Self {
        ReplayCache {
            capacity: capacity.max(1),
            order: VecDeque::new(),
            seen: HashSet::new(),
        }
    }

    pub fn contains(&self, tag: &Digest) -> bool {
        self.seen.contains(tag.as_bytes())
    }

    pub fn record(&mut self, tag: Digest) {
        if self.seen.insert(*tag.as_bytes()) {
            self.order.push_back(tag);
            while self.order.len() > self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.seen.remove(old.as_bytes());
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Round 2: the server recovers `X`, re-derives the tag, verifies the ring
/// signature under `k = l`, checks freshness, and answers with its half of
/// the key. Every failure is a reject with a reason; malformed input never
/// panics.
pub fn server_round2(
    sig: &RingSignature,
    l: &Digest,
    server: &ServerKeyMaterial,
    rng: &mut PrgStream,
    replay: &mut ReplayCache,
) -> Result<ServerAccept, ServerReject> {
    let p = server.params().p();
    let q = server.params().q();
    let g = server.params().g();
    let w = server.params().byte_len();

    if replay.contains(l) {
        return Err(ServerReject::Replay);
    }
    if sig.big_r.is_zero() || &sig.big_r >= p {
        return Err(ServerReject::Structural("R out of range"));
    }
    if sig.big_v.is_zero() || &sig.big_v >= p {
        return Err(ServerReject::Structural("V out of range"));
    }

    let q_val = mod_exp(&sig.big_r, &server.x_b, p).expect("validated modulus") % q;
    let g_pow_q = mod_exp(g, &q_val, p).expect("validated modulus");
    let big_x = &sig.big_v * g_pow_q % p;
    if big_x <= BigUint::one() {
        return Err(ServerReject::Structural("degenerate X"));
    }

    let expected = transcript_tag(&big_x, &q_val, &sig.big_v, &server.public.y_b, w);
    if expected != *l {
        return Err(ServerReject::TagMismatch);
    }
    ring_verify(sig, l).map_err(ServerReject::RingInvalid)?;

    let x_b_eph = rng
        .draw_nonzero_below(q)
        .map_err(|_| ServerReject::Structural("degenerate group order"))?;
    let big_y = mod_exp(g, &x_b_eph, p).expect("validated modulus");
    let k_s = mod_exp(&big_x, &x_b_eph, p).expect("validated modulus");
    let h = confirmation_tag(&k_s, &big_x, &big_y, l, w);

    replay.record(*l);
    Ok(ServerAccept {
        reply: Round2Payload {
            h,
            l: *l,
            y: big_y,
            y_byte_len: w,
        },
        k_s,
        recovered_x: big_x,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Round3Error {
    #[error("server authentication failed")]
    ServerAuthFailed,
    #[error("round-1 state already consumed")]
    StateConsumed,
}

/// Round 3: the client checks the server's confirmation tag and the echoed
/// `l`, and on success derives the session key and erases its ephemerals.
/// The state is consumed either way.
pub fn client_round3(
    state: &mut ClientRound1State,
    server: &ServerPublicKey,
    h: &Digest,
    big_y: &BigUint,
    l_echo: &Digest,
) -> Result<SessionKey, Round3Error> {
    if state.consumed {
        return Err(Round3Error::StateConsumed);
    }
    state.consumed = true;
    let p = server.params.p();
    let w = server.params.byte_len();
    if big_y.is_zero() || big_y >= p {
        state.clear_secrets();
        return Err(Round3Error::ServerAuthFailed);
    }
    let k_s = mod_exp(big_y, &state.x_a, p).expect("validated modulus");
    let h_prime = confirmation_tag(&k_s, &state.big_x, big_y, &state.l, w);
    let ok = h_prime == *h && *l_echo == state.l;
    let tag = state.l;
    state.clear_secrets();
    if ok {
        Ok(SessionKey {
            k_s,
            transcript_tag: tag,
        })
    } else {
        Err(Round3Error::ServerAuthFailed)
    }
}

// --- wire encoding ----------------------------------------------------------

/// Round-1 message: transcript tag plus the ring signature.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Round1Wire {
    pub l: String,
    pub sig: SignatureWire,
}

/// Round-2 message: confirmation tag, echoed `l`, and the server half `Y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Round2Payload {
    pub h: Digest,
    pub l: Digest,
    pub y: BigUint,
    pub y_byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Round2Wire {
    h: String,
    l: String,
    y: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("message truncated at octet {at}: need {needed} more")]
    Truncated { at: usize, needed: usize },
    #[error("length prefix says {declared} octets but {got} follow")]
    LengthMismatch { declared: usize, got: usize },
    #[error("invalid JSON at line {line}, column {column}: {msg}")]
    Json {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("bad field {field}")]
    BadField { field: &'static str },
    #[error(transparent)]
    Wire(#[from] WireError),
}

fn frame(payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

fn unframe(bytes: &[u8]) -> Result<&[u8], DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Truncated {
            at: bytes.len(),
            needed: 4 - bytes.len(),
        });
    }
    let declared = u32::from_be_bytes(bytes[..4].try_into().expect("4 octets")) as usize;
    let body = &bytes[4..];
    if body.len() < declared {
        return Err(DecodeError::Truncated {
            at: bytes.len(),
            needed: declared - body.len(),
        });
    }
    if body.len() > declared {
        return Err(DecodeError::LengthMismatch {
            declared,
            got: body.len(),
        });
    }
    Ok(body)
}

fn parse_json<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, DecodeError> {
    serde_json::from_slice(body).map_err(|e| DecodeError::Json {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

/// Length-prefixed round-1 message bytes.
pub fn encode_round1(sig: &RingSignature, l: &Digest) -> Vec<u8> {
    let wire = Round1Wire {
        l: l.to_hex(),
        sig: sig.to_wire(),
    };
    frame(serde_json::to_vec(&wire).expect("wire form always serializes"))
}

/// Decodes a round-1 message, resolving ring ids against `directory`.
pub fn decode_round1(
    bytes: &[u8],
    directory: &UserDirectory,
) -> Result<(RingSignature, Digest), DecodeError> {
    let body = unframe(bytes)?;
    let wire: Round1Wire = parse_json(body)?;
    let l = Digest::from_hex(&wire.l).ok_or(DecodeError::BadField { field: "l" })?;
    let sig = RingSignature::from_wire(&wire.sig, directory)?;
    Ok((sig, l))
}

/// Length-prefixed round-2 message bytes.
pub fn encode_round2(payload: &Round2Payload) -> Vec<u8> {
    let wire = Round2Wire {
        h: payload.h.to_hex(),
        l: payload.l.to_hex(),
        y: uint_to_hex(&payload.y, payload.y_byte_len),
    };
    frame(serde_json::to_vec(&wire).expect("wire form always serializes"))
}

pub fn decode_round2(bytes: &[u8]) -> Result<Round2Payload, DecodeError> {
    let body = unframe(bytes)?;
    let wire: Round2Wire = parse_json(body)?;
    Ok(Round2Payload {
        h: Digest::from_hex(&wire.h).ok_or(DecodeError::BadField { field: "h" })?,
        l: Digest::from_hex(&wire.l).ok_or(DecodeError::BadField { field: "l" })?,
        y: uint_from_hex(&wire.y).ok_or(DecodeError::BadField { field: "y" })?,
        y_byte_len: wire.y.len() / 2,
    })
}
