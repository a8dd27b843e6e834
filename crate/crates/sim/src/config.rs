//! Scenario configuration: topology, protocol parameters, traffic, faults.
//!
//! Scenarios load from JSON. Every time-valued field accepts a decimal
//! number or string and is kept as an exact rational, so two runs of the
//! same file are bit-identical. Validation reports every problem with a
//! JSON-path-style location instead of stopping at the first.

use meshauth_core::timebase::Seconds;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Role {
    #[serde(rename = "AS")]
    As,
    #[serde(rename = "IGW")]
    Igw,
    #[serde(rename = "MR")]
    Mr,
    #[serde(rename = "MC")]
    Mc,
}

impl Role {
    pub fn is_backbone(&self) -> bool {
        matches!(self, Role::Igw | Role::Mr)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::As => "AS",
            Role::Igw => "IGW",
            Role::Mr => "MR",
            Role::Mc => "MC",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub role: Role,
    /// Access point for an MC (required when it has links to several).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach: Option<String>,
    /// Local clock = simulation time + offset.
    #[serde(default, skip_serializing_if = "Seconds::is_zero")]
    pub clock_offset: Seconds,
    /// Corrupts the certificate this MR presents to its access parent.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub invalid_cert_network: bool,
    /// Corrupts the certificate this MR presents to the AS.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub invalid_cert_as: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency: Seconds,
    #[serde(default)]
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeyListConfig {
    #[serde(default = "default_cardinality")]
    pub cardinality: u32,
    #[serde(default = "default_timeout")]
    pub timeout: Seconds,
    #[serde(default = "default_key_len")]
    pub key_len: usize,
    /// Disabling this forces the correction factor to zero everywhere.
    #[serde(default = "default_true")]
    pub correction_enabled: bool,
    /// Clock-skew window for accepting a neighbor key tag one slot off.
    /// Defaults to timeout / 20; zero reproduces the idealized model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew_delta: Option<Seconds>,
}

fn default_cardinality() -> u32 {
    16
}

fn default_timeout() -> Seconds {
    Seconds::from_int(60)
}

fn default_key_len() -> usize {
    32
}

fn default_true() -> bool {
    true
}

impl Default for KeyListConfig {
    fn default() -> Self {
        KeyListConfig {
            cardinality: default_cardinality(),
            timeout: default_timeout(),
            key_len: default_key_len(),
            correction_enabled: true,
            skew_delta: None,
        }
    }
}

impl KeyListConfig {
    pub fn effective_skew_delta(&self) -> Seconds {
        self.skew_delta.unwrap_or(self.timeout / 20)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AkeConfig {
    #[serde(default = "default_ring_size")]
    pub ring_size: u32,
    #[serde(default = "default_bit_len")]
    pub bit_len: u32,
    /// Registered identities beyond the scenario's clients, available as
    /// ring co-members.
    #[serde(default)]
    pub extra_users: u32,
}

fn default_ring_size() -> u32 {
    3
}

fn default_bit_len() -> u32 {
    32
}

impl Default for AkeConfig {
    fn default() -> Self {
        AkeConfig {
            ring_size: default_ring_size(),
            bit_len: default_bit_len(),
            extra_users: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub packet_bytes: u64,
    /// Packets per second, exact decimal.
    pub rate: Seconds,
    pub start: Seconds,
    pub stop: Seconds,
}

impl FlowSpec {
    /// Exact emission interval (1 / rate).
    pub fn interval(&self) -> Seconds {
        let r = self.rate.ratio();
        Seconds::new(*r.denom(), *r.numer())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FaultsConfig {
    /// Extra delay the AS adds before answering key-list requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keylist_response_delay: Option<DelayFault>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub link_down: Vec<LinkDownFault>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DelayFault {
    pub delay: Seconds,
    #[serde(default)]
    pub from: Seconds,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkDownFault {
    pub a: String,
    pub b: String,
    pub at: Seconds,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: Seconds,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub keylist: KeyListConfig,
    #[serde(default)]
    pub ake: AkeConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traffic: Vec<FlowSpec>,
    #[serde(default)]
    pub faults: FaultsConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub struct ConfigError(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid scenario configuration:")?;
        for issue in &self.0 {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            ConfigError(vec![ConfigIssue {
                path: format!("$ (line {}, column {})", e.line(), e.column()),
                message: e.to_string(),
            }])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every structural invariant, collecting all violations.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut issue = |path: String, message: String| {
            issues.push(ConfigIssue { path, message });
        };

        if !self.duration.is_positive() {
            issue("duration".into(), "must be positive".into());
        }

        let mut ids = BTreeMap::new();
        let mut roles: BTreeMap<Role, usize> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.is_empty() {
                issue(format!("nodes[{i}].id"), "must not be empty".into());
            }
            if ids.insert(node.id.clone(), node.role).is_some() {
                issue(format!("nodes[{i}].id"), format!("duplicate id {:?}", node.id));
            }
            *roles.entry(node.role).or_default() += 1;
        }
        if roles.get(&Role::As).copied().unwrap_or(0) != 1 {
            issue("nodes".into(), "exactly one AS node is required".into());
        }
        if roles.get(&Role::Igw).copied().unwrap_or(0) == 0 {
            issue("nodes".into(), "at least one IGW is required".into());
        }

        let role_of = |id: &str| ids.get(id).copied();
        let mut link_set = BTreeSet::new();
        let mut as_igw_link = false;
        let mut neighbor_count: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (i, link) in self.links.iter().enumerate() {
            let path = |field: &str| format!("links[{i}].{field}");
            let (ra, rb) = (role_of(&link.a), role_of(&link.b));
            if ra.is_none() {
                issue(path("a"), format!("unknown node {:?}", link.a));
            }
            if rb.is_none() {
                issue(path("b"), format!("unknown node {:?}", link.b));
            }
            if link.a == link.b {
                issue(path("b"), "self-links are not allowed".into());
            }
            let key = if link.a <= link.b {
                (link.a.clone(), link.b.clone())
            } else {
                (link.b.clone(), link.a.clone())
            };
            if !link_set.insert(key) {
                issue(format!("links[{i}]"), "duplicate link".into());
            }
            if !link.latency.is_positive() {
                issue(path("latency"), "must be positive".into());
            }
            if !(0.0..=1.0).contains(&link.loss) {
                issue(path("loss"), "must lie in [0, 1]".into());
            }
            if let (Some(ra), Some(rb)) = (ra, rb) {
                match (ra, rb) {
                    (Role::As, Role::Igw) | (Role::Igw, Role::As) => as_igw_link = true,
                    (Role::As, _) | (_, Role::As) => {
                        issue(format!("links[{i}]"), "the AS wires only to IGWs".into())
                    }
                    (Role::Mc, Role::Mc) => {
                        issue(format!("links[{i}]"), "clients do not link to clients".into())
                    }
                    _ => {}
                }
                neighbor_count.entry(link.a.as_str()).or_default().push(&link.b);
                neighbor_count.entry(link.b.as_str()).or_default().push(&link.a);
            }
        }
        if !as_igw_link && roles.get(&Role::As).copied().unwrap_or(0) == 1 {
            issue("links".into(), "the AS must be wired to at least one IGW".into());
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.role != Role::Mc {
                if node.attach.is_some() {
                    issue(
                        format!("nodes[{i}].attach"),
                        "attach hints apply only to MC nodes".into(),
                    );
                }
                continue;
            }
            let candidates: Vec<&str> = neighbor_count
                .get(node.id.as_str())
                .map(|ns| {
                    ns.iter()
                        .filter(|n| role_of(n).is_some_and(|r| r.is_backbone()))
                        .copied()
                        .collect()
                })
                .unwrap_or_default();
            match &node.attach {
                Some(ap) => {
                    if !candidates.contains(&ap.as_str()) {
                        issue(
                            format!("nodes[{i}].attach"),
                            format!("{ap:?} is not a linked MR/IGW"),
                        );
                    }
                }
                None => match candidates.len() {
                    0 => issue(
                        format!("nodes[{i}]"),
                        "client has no link to any MR or IGW".into(),
                    ),
                    1 => {}
                    _ => issue(
                        format!("nodes[{i}].attach"),
                        "ambiguous access point; set attach".into(),
                    ),
                },
            }
        }

        if self.keylist.cardinality == 0 {
            issue("keylist.cardinality".into(), "must be at least 1".into());
        }
        if !self.keylist.timeout.is_positive() {
            issue("keylist.timeout".into(), "must be positive".into());
        }
        if self.keylist.key_len < 16 {
            issue("keylist.key_len".into(), "must be at least 16 octets".into());
        }
        if let Some(delta) = self.keylist.skew_delta {
            if delta.is_negative() {
                issue("keylist.skew_delta".into(), "must be non-negative".into());
            }
        }

        if self.ake.ring_size == 0 {
            issue("ake.ring_size".into(), "must be at least 1".into());
        }
        if self.ake.bit_len < 16 {
            issue("ake.bit_len".into(), "must be at least 16".into());
        }
        let registered =
            roles.get(&Role::Mc).copied().unwrap_or(0) as u32 + self.ake.extra_users;
        if roles.get(&Role::Mc).copied().unwrap_or(0) > 0 && self.ake.ring_size > registered {
            issue(
                "ake.ring_size".into(),
                format!("needs {} registered users, only {registered} exist", self.ake.ring_size),
            );
        }

        let mut flow_ids = BTreeSet::new();
        for (i, flow) in self.traffic.iter().enumerate() {
            let path = |field: &str| format!("traffic[{i}].{field}");
            if !flow_ids.insert(flow.id.clone()) {
                issue(path("id"), format!("duplicate flow id {:?}", flow.id));
            }
            for (field, node) in [("src", &flow.src), ("dst", &flow.dst)] {
                match role_of(node) {
                    None => issue(path(field), format!("unknown node {node:?}")),
                    Some(Role::As) => {
                        issue(path(field), "the AS is not a traffic endpoint".into())
                    }
                    Some(_) => {}
                }
            }
            if flow.src == flow.dst {
                issue(path("dst"), "must differ from src".into());
            }
            if flow.packet_bytes == 0 {
                issue(path("packet_bytes"), "must be positive".into());
            }
            if !flow.rate.is_positive() {
                issue(path("rate"), "must be positive".into());
            }
            if flow.start.is_negative() {
                issue(path("start"), "must be non-negative".into());
            }
            if flow.stop <= flow.start {
                issue(path("stop"), "must exceed start".into());
            }
        }

        for (i, fault) in self.faults.link_down.iter().enumerate() {
            let path = format!("faults.link_down[{i}]");
            let exists = self.links.iter().any(|l| {
                (l.a == fault.a && l.b == fault.b) || (l.a == fault.b && l.b == fault.a)
            });
            if !exists {
                issue(path.clone(), "names a link that does not exist".into());
            }
            if fault.at.is_negative() {
                issue(format!("{path}.at"), "must be non-negative".into());
            }
        }
        if let Some(delay) = &self.faults.keylist_response_delay {
            if delay.delay.is_negative() {
                issue(
                    "faults.keylist_response_delay.delay".into(),
                    "must be non-negative".into(),
                );
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(issues))
        }
    }
}
