//! Server-initiated key-list distribution.
//!
//! The authentication server issues ordered lists of symmetric backbone
//! keys. Each key is valid for `timeout` seconds starting at the list's
//! generation stamp `TS_KL`, so a list of cardinality `m` covers one session
//! of `m * timeout` seconds. A node that knows `TS_KL` finds the live key
//! and its residual validity from the clock alone:
//!
//! ```text
//! key_idx = floor((t_now - TS_KL) / timeout) + 1
//! T_i     = key_idx * timeout - (t_now - TS_KL)
//! ```
//!
//! Nodes must fetch the next session's list before the current one expires
//! or they drop off the backbone (a partition). The request fires when
//! `key_idx` first reaches `cardinality - c`, where the correction factor
//!
//! ```text
//! c = ceil((t_last - timeout) / timeout)   if t_last >= timeout, else 0
//! ```
//!
//! advances the trigger by however many extra slots the previously measured
//! response time `t_last = t_r - t_s` consumed.

use crate::numtheory::PrgStream;
use crate::timebase::Seconds;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Default symmetric key length in octets.
pub const DEFAULT_KEY_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedError {
    #[error("t_now precedes the key-list timestamp (clock skew)")]
    ClockSkew,
    #[error("key list must hold at least one key")]
    EmptyList,
    #[error("key timeout must be positive")]
    NonPositiveTimeout,
    #[error("keys must be pairwise distinct and equally sized")]
    BadKeys,
}

/// An ordered list of symmetric backbone keys, valid for one session.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct KeyList {
    keys: Vec<String>,
    ts_kl: Seconds,
    timeout: Seconds,
    list_id: u64,
}

impl KeyList {
    pub fn new(
        keys: Vec<Vec<u8>>,
        ts_kl: Seconds,
        timeout: Seconds,
        list_id: u64,
    ) -> Result<Self, SchedError> {
        if keys.is_empty() {
            return Err(SchedError::EmptyList);
        }
        if !timeout.is_positive() {
            return Err(SchedError::NonPositiveTimeout);
        }
        let len = keys[0].len();
        let mut seen = HashSet::new();
        for k in &keys {
            if k.len() != len || k.is_empty() || !seen.insert(k.clone()) {
                return Err(SchedError::BadKeys);
            }
        }
        Ok(KeyList {
            keys: keys.iter().map(hex::encode).collect(),
            ts_kl,
            timeout,
            list_id,
        })
    }

    pub fn cardinality(&self) -> u32 {
        self.keys.len() as u32
    }

    pub fn ts_kl(&self) -> Seconds {
        self.ts_kl
    }

    pub fn timeout(&self) -> Seconds {
        self.timeout
    }

    pub fn list_id(&self) -> u64 {
        self.list_id
    }

    /// 1-based key lookup.
    pub fn key_at(&self, idx: u64) -> Option<Vec<u8>> {
        if idx == 0 || idx > self.keys.len() as u64 {
            return None;
        }
        hex::decode(&self.keys[(idx - 1) as usize]).ok()
    }

    /// Session duration: cardinality times the per-key timeout.
    pub fn session_duration(&self) -> Seconds {
        self.timeout * self.cardinality()
    }

    /// First instant no longer covered by this list.
    pub fn expiry(&self) -> Seconds {
        self.ts_kl + self.session_duration()
    }

    pub fn covers(&self, t: Seconds) -> bool {
        t >= self.ts_kl && t < self.expiry()
    }

    /// Octets of one serialized key (all keys share a length).
    pub fn key_len(&self) -> usize {
        self.keys[0].len() / 2
    }

    pub fn shares_keys_with(&self, other: &KeyList) -> bool {
        let mine: HashSet<&String> = self.keys.iter().collect();
        other.keys.iter().any(|k| mine.contains(k))
    }
}

/// Index of the key live at `t_now` per the validity arithmetic. Values
/// beyond the cardinality mean the session has expired; callers decide.
pub fn current_key_index(t_now: Seconds, list: &KeyList) -> Result<u64, SchedError> {
    let elapsed = t_now - list.ts_kl;
    if elapsed.is_negative() {
        return Err(SchedError::ClockSkew);
    }
    Ok(elapsed.div_floor(&list.timeout) as u64 + 1)
}

/// Time until the key live at `t_now` rotates; always in `(0, timeout]`.
pub fn remaining_validity(t_now: Seconds, list: &KeyList) -> Result<Seconds, SchedError> {
    let idx = current_key_index(t_now, list)?;
    Ok(list.timeout * idx as i128 - (t_now - list.ts_kl))
}

/// Correction factor from the last measured response time.
pub fn correction_factor(t_last: Seconds, timeout: Seconds) -> u64 {
    if !timeout.is_positive() || t_last < timeout {
        return 0;
    }
    (t_last - timeout).div_ceil(&timeout).max(0) as u64
}

/// Key index that triggers the next-session request: `cardinality - c`,
/// clamped to 1 so very slow links request at session start.
pub fn request_trigger_index(cardinality: u32, c: u64) -> u32 {
    (cardinality as u64).saturating_sub(c).max(1) as u32
}

/// Draws a fresh list of distinct random 32-octet keys stamped
/// `TS_KL = t_now`, with the default 60-second per-key validity.
pub fn generate_key_list(
    rng: &mut PrgStream,
    cardinality: u32,
    t_now: Seconds,
    prev_id: u64,
) -> KeyList {
    generate_key_list_with(
        rng,
        cardinality,
        DEFAULT_KEY_LEN,
        Seconds::from_int(60),
        t_now,
        prev_id,
    )
}

/// As [`generate_key_list`] with explicit key length and timeout.
pub fn generate_key_list_with(
    rng: &mut PrgStream,
    cardinality: u32,
    key_len: usize,
    timeout: Seconds,
    t_now: Seconds,
    prev_id: u64,
) -> KeyList {
    let cardinality = cardinality.max(1);
    let key_len = key_len.max(8);
    let mut keys: Vec<Vec<u8>> = Vec::with_capacity(cardinality as usize);
    let mut seen = HashSet::new();
    while keys.len() < cardinality as usize {
        let mut key = vec![0u8; key_len];
        rng.fill_bytes(&mut key);
        if seen.insert(key.clone()) {
            keys.push(key);
        }
    }
    KeyList::new(keys, t_now, timeout, prev_id + 1).expect("constructed keys are valid")
}

/// Identifies one backbone key: which list and which slot.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Hash)]
pub struct KeyTag {
    pub list_id: u64,
    pub key_idx: u64,
}

/// What a schedule wants done after a clock tick. Call
/// [`KeyListSchedule::on_clock_tick`] repeatedly until it returns `None`;
/// one instant can produce a rotation and then a request.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Action {
    None,
    /// Fire the next-session key-list request (once per session).
    SendRequest,
    /// The live key changed to this index.
    RotateKey(u64),
    /// The held next list took over as current.
    SessionRollover { list_id: u64 },
    /// The session expired with no next list held; the node is partitioned.
    PartitionAlert,
}

/// Outcome of feeding a received list into the schedule.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InstallOutcome {
    /// Stored as the next session's list.
    StoredNext,
    /// Replaced an expired current list; the node just left partition.
    Recovered,
    /// Already held or no longer relevant.
    StaleIgnored,
}

/// Routing mark for key-list requests: the first one a node ever sends is
/// relayed through its access peer; later ones ride the backbone directly.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum RequestRoute {
    RelayViaPeer,
    DirectBackbone,
}

#[derive(Clone, Default, Debug)]
pub struct RequestRouter {
    sent: u64,
}

impl RequestRouter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_route(&mut self) -> RequestRoute {
        let route = if self.sent == 0 {
            RequestRoute::RelayViaPeer
        } else {
            RequestRoute::DirectBackbone
        };
        self.sent += 1;
        route
    }

    pub fn count(&self) -> u64 {
        self.sent
    }
}

/// Per-node scheduling state: the current list, the prefetched next list,
/// the measured response time, and the derived correction factor. Owned by
/// exactly one node's state machine.
#[derive(Clone, Debug)]
pub struct KeyListSchedule {
    current: KeyList,
    next: Option<KeyList>,
    correction_enabled: bool,
    c: u64,
    t_s: Option<Seconds>,
    t_r: Option<Seconds>,
    t_last: Option<Seconds>,
    last_rotated_idx: u64,
    request_sent: bool,
    partition_alerted: bool,
    prev_last_tag: Option<KeyTag>,
}

impl KeyListSchedule {
    /// Adopts `list` as current at local time `t_now`. No rotate actions are
    /// emitted for boundaries that passed before adoption.
    pub fn new(list: KeyList, t_now: Seconds, correction_enabled: bool) -> Self {
        let last_rotated_idx = current_key_index(t_now, &list).unwrap_or(0).max(1);
        KeyListSchedule {
            current: list,
            next: None,
            correction_enabled,
            c: 0,
            t_s: None,
            t_r: None,
            t_last: None,
            last_rotated_idx,
            request_sent: false,
            partition_alerted: false,
            prev_last_tag: None,
        }
    }

    pub fn current_list(&self) -> &KeyList {
        &self.current
    }

    pub fn next_list(&self) -> Option<&KeyList> {
        self.next.as_ref()
    }

    pub fn correction(&self) -> u64 {
        self.c
    }

    pub fn last_response_time(&self) -> Option<Seconds> {
        self.t_last
    }

    pub fn trigger_index(&self) -> u32 {
        request_trigger_index(self.current.cardinality(), self.c)
    }

    pub fn request_outstanding(&self) -> bool {
        self.request_sent && self.t_s.is_some() && self.next.is_none()
    }

    pub fn is_partitioned(&self, t_now: Seconds) -> bool {
        self.current_tag(t_now).is_none()
    }

    /// The tag of the key live at local time `t_now`, if any.
    pub fn current_tag(&self, t_now: Seconds) -> Option<KeyTag> {
        let idx = current_key_index(t_now, &self.current).ok()?;
        if idx > self.current.cardinality() as u64 {
            return None;
        }
        Some(KeyTag {
            list_id: self.current.list_id(),
            key_idx: idx,
        })
    }

    /// The key bytes live at `t_now` (for envelope checks).
    pub fn current_key(&self, t_now: Seconds) -> Option<Vec<u8>> {
        let tag = self.current_tag(t_now)?;
        self.current.key_at(tag.key_idx)
    }

    /// Accepts the sender's tag if it matches the local tag exactly, or is
    /// one slot behind within `delta` after the last boundary, or one slot
    /// ahead within `delta` before the next boundary. `delta = 0` is the
    /// idealized fully synchronized model.
    pub fn accepts_tag(&self, tag: &KeyTag, t_now: Seconds, delta: Seconds) -> bool {
        let Some(own) = self.current_tag(t_now) else {
            return false;
        };
        if *tag == own {
            return true;
        }
        if delta.is_negative() {
            return false;
        }
        let timeout = self.current.timeout();
        let boundary_before = self.current.ts_kl() + timeout * (own.key_idx - 1) as i128;
        let boundary_after = boundary_before + timeout;
        // One slot behind, shortly after a boundary.
        if t_now - boundary_before <= delta {
            let prev = if own.key_idx > 1 {
                Some(KeyTag {
                    list_id: own.list_id,
                    key_idx: own.key_idx - 1,
                })
            } else {
                self.prev_last_tag
            };
            if prev.as_ref() == Some(tag) {
                return true;
            }
        }
        // One slot ahead, shortly before a boundary.
        if boundary_after - t_now <= delta {
            let next = if own.key_idx < self.current.cardinality() as u64 {
                Some(KeyTag {
                    list_id: own.list_id,
                    key_idx: own.key_idx + 1,
                })
            } else {
                self.next.as_ref().map(|n| KeyTag {
                    list_id: n.list_id(),
                    key_idx: 1,
                })
            };
            if next.as_ref() == Some(tag) {
                return true;
            }
        }
        false
    }

    /// Seeds the response-time measurement from an exchange completed
    /// before this schedule existed (the node's bootstrap key-list fetch).
    pub fn record_rtt(&mut self, t_s: Seconds, t_r: Seconds) {
        let t_last = (t_r - t_s).max(Seconds::zero());
        self.t_r = Some(t_r);
        self.t_last = Some(t_last);
        if self.correction_enabled {
            self.c = correction_factor(t_last, self.current.timeout());
        }
    }

    /// Records that the node fired its next-session request. The first call
    /// per measurement cycle pins `t_s`; retransmissions do not move it.
    pub fn mark_request_sent(&mut self, t_now: Seconds) {
        self.request_sent = true;
        if self.t_s.is_none() {
            self.t_s = Some(t_now);
        }
    }

    /// Feeds a received key list into the schedule at local time `t_now`,
    /// measuring `t_last` against the pending request if one is open.
    pub fn install_response(&mut self, t_now: Seconds, list: KeyList) -> InstallOutcome {
        if list.list_id() <= self.current.list_id() {
            return InstallOutcome::StaleIgnored;
        }
        if let Some(held) = &self.next {
            if held.list_id() >= list.list_id() {
                return InstallOutcome::StaleIgnored;
            }
        }
        // Close the measurement cycle.
        if let Some(t_s) = self.t_s.take() {
            let t_last = (t_now - t_s).max(Seconds::zero());
            self.t_r = Some(t_now);
            self.t_last = Some(t_last);
            if self.correction_enabled {
                self.c = correction_factor(t_last, self.current.timeout());
            }
        }
        let current_expired = !self.current.covers(t_now);
        if current_expired && list.covers(t_now) {
            self.prev_last_tag = Some(KeyTag {
                list_id: self.current.list_id(),
                key_idx: self.current.cardinality() as u64,
            });
            self.last_rotated_idx = current_key_index(t_now, &list).unwrap_or(1);
            self.current = list;
            self.next = None;
            self.request_sent = false;
            self.partition_alerted = false;
            InstallOutcome::Recovered
        } else if list.expiry() > t_now {
            self.next = Some(list);
            InstallOutcome::StoredNext
        } else {
            InstallOutcome::StaleIgnored
        }
    }

    /// Advances the schedule to local time `t_now`, reporting one action per
    /// call. Call until it returns [`Action::None`].
    pub fn on_clock_tick(&mut self, t_now: Seconds) -> Action {
        if t_now < self.current.ts_kl() {
            // List not yet active on this clock; dormant.
            return Action::None;
        }
        let idx = current_key_index(t_now, &self.current).expect("t_now >= ts_kl");
        let cardinality = self.current.cardinality() as u64;

        if idx > cardinality {
            // Session over: roll into the next list if it covers now.
            let rollable = self.next.as_ref().is_some_and(|n| n.covers(t_now));
            if rollable {
                let next = self.next.take().expect("checked above");
                self.prev_last_tag = Some(KeyTag {
                    list_id: self.current.list_id(),
                    key_idx: cardinality,
                });
                self.last_rotated_idx = current_key_index(t_now, &next).expect("covers t_now");
                self.current = next;
                self.request_sent = false;
                self.partition_alerted = false;
                return Action::SessionRollover {
                    list_id: self.current.list_id(),
                };
            }
            if !self.partition_alerted {
                self.partition_alerted = true;
                return Action::PartitionAlert;
            }
            return Action::None;
        }

        if idx > self.last_rotated_idx {
            self.last_rotated_idx += 1;
            return Action::RotateKey(self.last_rotated_idx);
        }

        if !self.request_sent && idx >= self.trigger_index() as u64 {
            self.request_sent = true;
            return Action::SendRequest;
        }

        Action::None
    }

    /// Next instant at which [`on_clock_tick`](Self::on_clock_tick) has new
    /// work: the next rotate/expiry boundary or the request trigger slot.
    pub fn next_wakeup(&self, t_now: Seconds) -> Seconds {
        let ts = self.current.ts_kl();
        if t_now < ts {
            return ts;
        }
        let timeout = self.current.timeout();
        let idx = current_key_index(t_now, &self.current).expect("t_now >= ts");
        let cardinality = self.current.cardinality() as u64;
        let next_boundary = ts + timeout * idx.min(cardinality) as i128;
        if !self.request_sent {
            let trigger_time = ts + timeout * (self.trigger_index() as i128 - 1);
            if trigger_time > t_now {
                return trigger_time.min(next_boundary);
            }
        }
        next_boundary.max(t_now)
    }
}
