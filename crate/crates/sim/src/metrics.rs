//! Measurement records and the end-of-run summary.

use meshauth_core::timebase::Seconds;
use serde::Serialize;
use std::collections::BTreeMap;

pub mod event {
    pub const JOIN_PHASE_COMPLETE: &str = "join-phase-complete";
    pub const JOIN_REJECTED: &str = "join-rejected";
    pub const AUTH_BYTES: &str = "auth-bytes";
    pub const KEY_ROTATE: &str = "key-rotate";
    pub const SESSION_ROLLOVER: &str = "session-rollover";
    pub const PARTITION_ALERT: &str = "partition-alert";
    pub const KEY_LIST_REQUEST: &str = "key-list-request";
    pub const PKT_SENT: &str = "pkt-sent";
    pub const PKT_DELIVERED: &str = "pkt-delivered";
    pub const PKT_DROPPED: &str = "pkt-dropped";
    pub const SIG_BYTES: &str = "sig-bytes";
    pub const AKE_COMPLETE: &str = "ake-complete";
    pub const AKE_FAILED: &str = "ake-failed";
    pub const MSG_DROP: &str = "msg-drop";
}

pub mod cause {
    pub const LINK_LOSS: &str = "link-loss";
    pub const NO_KEY: &str = "no-key";
    pub const KEY_MISMATCH: &str = "key-mismatch";
}

/// One append-only measurement event, emitted as a JSON line.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct MetricsRecord {
    pub time: Seconds,
    pub node: String,
    pub event: String,
    pub value: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics always serialize")
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct FlowSummary {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_link_loss: u64,
    pub dropped_no_key: u64,
    pub dropped_key_mismatch: u64,
    pub delivery_ratio: f64,
}

impl FlowSummary {
    pub fn drops(&self) -> u64 {
        self.dropped_link_loss + self.dropped_no_key + self.dropped_key_mismatch
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SessionSummary {
    pub node: String,
    pub ring_size: u32,
    pub sig_bytes: u64,
    pub completed_at: Seconds,
    /// Fingerprints of the agreed key as held by each side; equal in every
    /// healthy run.
    pub client_key: String,
    pub server_key: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub duration: Seconds,
    pub join_times: BTreeMap<String, Seconds>,
    pub partition_alerts: u64,
    pub key_rotations: u64,
    pub auth_bytes_total: u64,
    pub drops_by_cause: BTreeMap<String, u64>,
    pub flows: BTreeMap<String, FlowSummary>,
    pub sessions: Vec<SessionSummary>,
}
