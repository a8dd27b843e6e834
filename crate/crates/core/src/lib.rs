//! Core protocol library: discrete-log primitives, ring signatures, the
//! three-round anonymous authenticated key exchange, and the server-initiated
//! key-list scheduler used to protect a wireless mesh backbone.
//!
//! The crate is split along protocol-layer boundaries:
//!
//! - [`numtheory`] — multi-precision modular arithmetic, Schnorr-style group
//!   generation, hashing, a keyed bit-string permutation, and a deterministic
//!   PRG. Everything above is built on these.
//! - [`ringsig`] — the trapdoor function, the keyed combining function, and
//!   ring signature generation/verification over per-user groups.
//! - [`anonake`] — the three-round anonymous authenticated key exchange
//!   between a ring member and the authentication server.
//! - [`keysched`] — backbone key-list lifecycle, validity arithmetic, and the
//!   correction-factor request scheduler.
//! - [`timebase`] — exact rational time used by the scheduler and simulator.
//!
//! All randomized operations take an explicit [`numtheory::PrgStream`] handle;
//! there is no ambient randomness anywhere in the crate, so every output is a
//! pure function of its inputs and seeds.

pub mod anonake;
pub mod keysched;
pub mod numtheory;
pub mod ringsig;
pub mod selftest;
pub mod timebase;
