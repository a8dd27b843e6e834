//! Deterministic discrete-event engine for the three-tier mesh.
//!
//! One strictly single-threaded event loop drives everything: message
//! deliveries, per-node timers, traffic emission, and fault injection.
//! Events execute in `(time, insertion-sequence)` order, every random draw
//! comes from a labeled stream derived from the scenario seed, and time is
//! exact rational seconds, so a scenario's metrics stream is a pure
//! function of its configuration.
//!
//! Node behavior:
//!
//! - The AS answers certificate checks, anonymous key exchanges (with a
//!   replay cache and a response cache for retransmitted round-1 copies),
//!   and key-list requests, generating contiguous lists on demand.
//! - IGWs are wired to the AS and bootstrap by fetching the first key list
//!   directly at start of day.
//! - MRs join outward from the gateways: a four-message access handshake
//!   with a FULL parent (gated by the network-join certificate), a
//!   certificate exchange with the AS over the relayed path, then the
//!   first key-list request relayed through the parent, after which the
//!   router is FULL and serves downstream joins and clients.
//! - MCs run the three-round anonymous key exchange through their access
//!   router once it is FULL.
//!
//! Backbone frames carry the transmitter's `(list_id, key_idx)` tag per
//! hop; receivers accept an exact match or one slot of skew within the
//! configured window. Senders or receivers without a live key drop frames
//! with cause `no-key`; disagreeing tags drop with `key-mismatch`.

use crate::cert::{self, CaPublic, CertAuthority, CertPurpose, Certificate};
use crate::config::{FlowSpec, Role, ScenarioConfig};
use crate::metrics::{cause, event, FlowSummary, MetricsRecord, SessionSummary, Summary};
use meshauth_core::anonake::{
    client_round1, client_round3, decode_round1, decode_round2, encode_round1, encode_round2,
    ClientRound1State, ReplayCache, ServerKeyMaterial, SessionKey,
};
use meshauth_core::keysched::{
    generate_key_list_with, Action, KeyList, KeyListSchedule, KeyTag, RequestRoute, RequestRouter,
};
use meshauth_core::numtheory::{gen_group_params, hash, PrgStream};
use meshauth_core::ringsig::{UserDirectory, UserKeyMaterial, UserPublicKey};
use meshauth_core::timebase::Seconds;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

/// Fixed framing overhead charged to every control message.
const CONTROL_HEADER_BYTES: usize = 16;
/// Attempts per protocol message before giving up.
const MAX_SEND_ATTEMPTS: u32 = 3;

/// How often a detached router rescans for a usable parent.
fn scan_interval() -> Seconds {
    Seconds::new(1, 2)
}

pub struct SimOutput {
    pub metrics: Vec<MetricsRecord>,
    pub summary: Summary,
}

/// Runs a validated scenario to completion.
pub fn run(config: &ScenarioConfig) -> Result<SimOutput, crate::config::ConfigError> {
    config.validate()?;
    let mut sim = Simulator::new(config);
    sim.bootstrap();
    sim.drain();
    Ok(sim.finish())
}

// --- events ------------------------------------------------------------------

#[derive(Debug)]
struct Ev {
    time: Seconds,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ev {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug)]
enum EvKind {
    Deliver { to: usize, msg: Box<Message> },
    Timer { node: usize, timer: Timer },
    FlowEmit { flow: usize, pkt: u64 },
    LinkDown { link: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Timer {
    SchedTick,
    Retry { req: u64 },
    JoinScan,
    McAuthStart,
}

// --- messages ----------------------------------------------------------------

#[derive(Debug, Clone)]
struct Message {
    src: usize,
    dst: usize,
    route: Vec<usize>,
    hop: usize,
    kind: MsgKind,
    bytes: usize,
    access_origin: bool,
    access_dest: bool,
    tag: Option<KeyTag>,
    protected_arrival: bool,
    req: Option<u64>,
    flow: Option<usize>,
}

#[derive(Debug, Clone)]
enum MsgKind {
    JoinReq { cert: Certificate },
    JoinChallenge { nonce: u64 },
    JoinConfirm { proof: u64 },
    JoinDone,
    AsAuthReq { cert: Certificate },
    AsAuthResp { ok: bool },
    KeyListReq { have: Option<u64>, mark: RequestRoute },
    KeyListResp { list: KeyList },
    AkeRound1 { body: Vec<u8> },
    AkeRound2 { body: Vec<u8> },
    Data,
}

impl MsgKind {
    fn is_data(&self) -> bool {
        matches!(self, MsgKind::Data)
    }

    fn payload_bytes(&self) -> usize {
        match self {
            MsgKind::JoinReq { cert } | MsgKind::AsAuthReq { cert } => {
                serde_json::to_vec(cert).expect("certificates serialize").len()
            }
            MsgKind::JoinChallenge { .. } | MsgKind::JoinConfirm { .. } => 8,
            MsgKind::JoinDone => 0,
            MsgKind::AsAuthResp { .. } => 1,
            MsgKind::KeyListReq { .. } => 16,
            MsgKind::KeyListResp { list } => {
                serde_json::to_vec(list).expect("key lists serialize").len()
            }
            MsgKind::AkeRound1 { body } | MsgKind::AkeRound2 { body } => body.len(),
            MsgKind::Data => 0,
        }
    }
}

// --- per-node state ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JoinState {
    NotApplicable,
    Detached,
    Phase1 { parent: usize },
    Phase2 { parent: usize },
    Phase3 { parent: usize },
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GiveUp {
    RestartJoin,
    FailMcAuth,
    KeepWaiting,
}

#[derive(Debug)]
struct PendingReq {
    template: Message,
    attempts: u32,
    spacing: Seconds,
    first_sent: Seconds,
    give_up: GiveUp,
}

struct McState {
    attach: usize,
    user: UserKeyMaterial,
    ring: Vec<UserPublicKey>,
    signer_index: usize,
    ake: Option<ClientRound1State>,
    session: Option<SessionKey>,
    sig_bytes: u64,
    completed_at: Option<Seconds>,
    started: bool,
    failed: bool,
}

struct Node {
    id: String,
    role: Role,
    offset: Seconds,
    join: JoinState,
    join_blocked: bool,
    join_attempts: u64,
    cert_network: Option<Certificate>,
    cert_as: Option<Certificate>,
    sched: Option<KeyListSchedule>,
    router: RequestRouter,
    parent: Option<usize>,
    join_children: BTreeMap<usize, u64>,
    pending: BTreeMap<u64, PendingReq>,
    keylist_req_open: bool,
    first_keylist_sent: Option<Seconds>,
    next_tick: Option<Seconds>,
    mc: Option<McState>,
}

struct Link {
    a: usize,
    b: usize,
    latency: Seconds,
    loss: f64,
    up: bool,
}

struct AsState {
    node: usize,
    server: ServerKeyMaterial,
    directory: UserDirectory,
    replay: ReplayCache,
    response_cache: HashMap<[u8; 32], Vec<u8>>,
    session_keys: BTreeMap<String, String>,
    lists: Vec<KeyList>,
    rng_lists: PrgStream,
    rng_ake: PrgStream,
}

struct FlowStat {
    sent: u64,
    delivered: u64,
    link_loss: u64,
    no_key: u64,
    key_mismatch: u64,
}

// --- the simulator -----------------------------------------------------------

pub(crate) struct Simulator {
    cfg: ScenarioConfig,
    seed_bytes: [u8; 8],
    now: Seconds,
    seq: u64,
    req_counter: u64,
    queue: BinaryHeap<Reverse<Ev>>,
    nodes: Vec<Node>,
    links: Vec<Link>,
    adj: Vec<Vec<(usize, usize)>>,
    routes: HashMap<(usize, usize), Option<Vec<usize>>>,
    authority: AsState,
    ca_public: CaPublic,
    ctl_loss_counter: u64,
    metrics: Vec<MetricsRecord>,
    partition_alerts: u64,
    key_rotations: u64,
    auth_bytes: u64,
    drops_by_cause: BTreeMap<String, u64>,
    join_times: BTreeMap<String, Seconds>,
    flow_stats: Vec<FlowStat>,
}

impl Simulator {
    fn new(cfg: &ScenarioConfig) -> Self {
        let cfg = cfg.clone();
        let seed_bytes = cfg.seed.to_be_bytes();
        let lbl = |label: &str| {
            let mut joined = Vec::with_capacity(8 + label.len());
            joined.extend_from_slice(&seed_bytes);
            joined.extend_from_slice(label.as_bytes());
            joined
        };

        let server_group = gen_group_params(cfg.ake.bit_len, &lbl("group/server"))
            .expect("bit_len validated >= 16");
        let mut rng_server = PrgStream::new(&lbl("server-key"), b"");
        let server = ServerKeyMaterial::generate(server_group.clone(), &mut rng_server)
            .expect("generated server key is valid");
        let mut rng_ca = PrgStream::new(&lbl("ca-key"), b"");
        let authority_keys = CertAuthority::new(server_group, &mut rng_ca);
        let ca_public = authority_keys.public();

        // Registered user identities: every MC plus the configured extras,
        // each over its own group of the shared bit length.
        let mut directory = UserDirectory::new();
        let mut user_keys: BTreeMap<String, UserKeyMaterial> = BTreeMap::new();
        let mut register = |name: &str, directory: &mut UserDirectory| {
            let gseed = lbl(&format!("group/user/{name}"));
            let params = gen_group_params(cfg.ake.bit_len, &gseed).expect("valid bit_len");
            let mut rng = PrgStream::new(&gseed, b"user-key");
            let key = UserKeyMaterial::generate(name.to_owned(), params, &mut rng)
                .expect("generated user key is valid");
            directory.register(key.public().clone()).expect("unique ids");
            user_keys.insert(name.to_owned(), key);
        };
        for spec in &cfg.nodes {
            if spec.role == Role::Mc {
                register(&spec.id, &mut directory);
            }
        }
        for i in 0..cfg.ake.extra_users {
            register(&format!("registered-user-{i}"), &mut directory);
        }

        let mut rng_certs = PrgStream::new(&lbl("ca-issue"), b"");
        let id_to_idx: BTreeMap<&str, usize> = cfg
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();

        let mut as_node = 0;
        let nodes: Vec<Node> = cfg
            .nodes
            .iter()
            .enumerate()
            .map(|(idx, spec)| {
                if spec.role == Role::As {
                    as_node = idx;
                }
                let (cert_network, cert_as) = if spec.role == Role::Mr {
                    let mut c1 =
                        authority_keys.issue(&spec.id, CertPurpose::NetworkJoin, &mut rng_certs);
                    let mut c2 = authority_keys.issue(&spec.id, CertPurpose::AsAuth, &mut rng_certs);
                    if spec.invalid_cert_network {
                        cert::corrupt(&mut c1);
                    }
                    if spec.invalid_cert_as {
                        cert::corrupt(&mut c2);
                    }
                    (Some(c1), Some(c2))
                } else {
                    (None, None)
                };
                let mc = (spec.role == Role::Mc).then(|| McState {
                    attach: 0, // resolved below once links exist
                    user: user_keys.remove(&spec.id).expect("registered above"),
                    ring: Vec::new(),
                    signer_index: 0,
                    ake: None,
                    session: None,
                    sig_bytes: 0,
                    completed_at: None,
                    started: false,
                    failed: false,
                });
                Node {
                    id: spec.id.clone(),
                    role: spec.role,
                    offset: spec.clock_offset,
                    join: match spec.role {
                        Role::Mr => JoinState::Detached,
                        _ => JoinState::NotApplicable,
                    },
                    join_blocked: false,
                    join_attempts: 0,
                    cert_network,
                    cert_as,
                    sched: None,
                    router: RequestRouter::new(),
                    parent: None,
                    join_children: BTreeMap::new(),
                    pending: BTreeMap::new(),
                    keylist_req_open: false,
                    first_keylist_sent: None,
                    next_tick: None,
                    mc,
                }
            })
            .collect();

        let links: Vec<Link> = cfg
            .links
            .iter()
            .map(|l| Link {
                a: id_to_idx[l.a.as_str()],
                b: id_to_idx[l.b.as_str()],
                latency: l.latency,
                loss: l.loss,
                up: true,
            })
            .collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for (li, l) in links.iter().enumerate() {
            adj[l.a].push((l.b, li));
            adj[l.b].push((l.a, li));
        }
        for neighbors in &mut adj {
            neighbors.sort_unstable();
        }

        let flow_stats = cfg
            .traffic
            .iter()
            .map(|_| FlowStat {
                sent: 0,
                delivered: 0,
                link_loss: 0,
                no_key: 0,
                key_mismatch: 0,
            })
            .collect();

        let mut sim = Simulator {
            seed_bytes,
            now: Seconds::zero(),
            seq: 0,
            req_counter: 0,
            queue: BinaryHeap::new(),
            authority: AsState {
                node: as_node,
                server,
                directory,
                replay: ReplayCache::new(4096),
                response_cache: HashMap::new(),
                session_keys: BTreeMap::new(),
                lists: Vec::new(),
                rng_lists: PrgStream::new(&lbl("as/key-lists"), b""),
                rng_ake: PrgStream::new(&lbl("as/ake"), b""),
            },
            ca_public,
            ctl_loss_counter: 0,
            metrics: Vec::new(),
            partition_alerts: 0,
            key_rotations: 0,
            auth_bytes: 0,
            drops_by_cause: BTreeMap::new(),
            join_times: BTreeMap::new(),
            flow_stats,
            nodes,
            links,
            adj,
            routes: HashMap::new(),
            cfg,
        };
        sim.resolve_attachments();
        sim
    }

    fn resolve_attachments(&mut self) {
        for idx in 0..self.nodes.len() {
            if self.nodes[idx].role != Role::Mc {
                continue;
            }
            let attach_id = self.cfg.nodes[idx].attach.clone();
            let attach = match attach_id {
                Some(id) => self.index_of(&id),
                None => self.adj[idx]
                    .iter()
                    .map(|&(n, _)| n)
                    .find(|&n| self.nodes[n].role.is_backbone())
                    .expect("validated: exactly one access candidate"),
            };
            self.nodes[idx].mc.as_mut().expect("MC node").attach = attach;
        }
    }

    fn index_of(&self, id: &str) -> usize {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .expect("validated id")
    }

    fn local_time(&self, node: usize) -> Seconds {
        self.now + self.nodes[node].offset
    }

    fn push(&mut self, time: Seconds, kind: EvKind) {
        if time > self.cfg.duration {
            return;
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Ev { time, seq, kind }));
    }

    fn metric(&mut self, node: usize, ev: &str, value: i64) {
        self.metric_full(node, ev, value, None, None, None);
    }

    fn metric_full(
        &mut self,
        node: usize,
        ev: &str,
        value: i64,
        cause_s: Option<&str>,
        flow: Option<usize>,
        n: Option<u32>,
    ) {
        self.metrics.push(MetricsRecord {
            time: self.now,
            node: self.nodes[node].id.clone(),
            event: ev.to_owned(),
            value,
            cause: cause_s.map(str::to_owned),
            flow: flow.map(|f| self.cfg.traffic[f].id.clone()),
            n,
        });
    }

    // --- bootstrap ------------------------------------------------------------

    fn bootstrap(&mut self) {
        // First key list exists from the start of the AS clock.
        let as_local = self.local_time(self.authority.node);
        self.ensure_list_covering(as_local);

        for idx in 0..self.nodes.len() {
            match self.nodes[idx].role {
                Role::Igw => self.send_keylist_request(idx, None, RequestRoute::DirectBackbone),
                Role::Mr => self.push(
                    Seconds::zero(),
                    EvKind::Timer {
                        node: idx,
                        timer: Timer::JoinScan,
                    },
                ),
                _ => {}
            }
        }
        for (fi, flow) in self.cfg.traffic.clone().iter().enumerate() {
            self.push(flow.start, EvKind::FlowEmit { flow: fi, pkt: 0 });
        }
        for fault in self.cfg.faults.link_down.clone() {
            let li = self
                .links
                .iter()
                .position(|l| {
                    let (a, b) = (self.nodes[l.a].id.as_str(), self.nodes[l.b].id.as_str());
                    (a == fault.a && b == fault.b) || (a == fault.b && b == fault.a)
                })
                .expect("validated link fault");
            self.push(fault.at, EvKind::LinkDown { link: li });
        }
    }

    fn drain(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.cfg.duration {
                break;
            }
            debug_assert!(ev.time >= self.now, "event scheduled in the past");
            self.now = ev.time;
            match ev.kind {
                EvKind::Deliver { to, msg } => self.on_deliver(to, *msg),
                EvKind::Timer { node, timer } => self.on_timer(node, timer),
                EvKind::FlowEmit { flow, pkt } => self.on_flow_emit(flow, pkt),
                EvKind::LinkDown { link } => {
                    self.links[link].up = false;
                    self.routes.clear();
                }
            }
        }
    }

    // --- routing ---------------------------------------------------------------

    /// Static shortest path by summed latency; clients never relay. Cached
    /// until the topology changes.
    fn route(&mut self, src: usize, dst: usize) -> Option<Vec<usize>> {
        if let Some(cached) = self.routes.get(&(src, dst)) {
            return cached.clone();
        }
        let n = self.nodes.len();
        let mut dist: Vec<Option<Seconds>> = vec![None; n];
        let mut prev: Vec<Option<usize>> = vec![None; n];
        let mut heap: BinaryHeap<Reverse<(Seconds, usize)>> = BinaryHeap::new();
        dist[src] = Some(Seconds::zero());
        heap.push(Reverse((Seconds::zero(), src)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if dist[u] != Some(d) {
                continue;
            }
            if u == dst {
                break;
            }
            // Only the source endpoint may relay from a client node.
            if u != src && self.nodes[u].role == Role::Mc {
                continue;
            }
            for &(v, li) in &self.adj[u] {
                if !self.links[li].up {
                    continue;
                }
                let nd = d + self.links[li].latency;
                if dist[v].is_none() || nd < dist[v].expect("checked") {
                    dist[v] = Some(nd);
                    prev[v] = Some(u);
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        let path = dist[dst].map(|_| {
            let mut path = vec![dst];
            let mut cur = dst;
            while let Some(p) = prev[cur] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            path
        });
        self.routes.insert((src, dst), path.clone());
        path
    }

    fn path_latency(&self, route: &[usize]) -> Seconds {
        route
            .windows(2)
            .map(|w| {
                self.link_between(w[0], w[1])
                    .map(|li| self.links[li].latency)
                    .unwrap_or_else(scan_interval)
            })
            .sum()
    }

    fn link_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adj[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, li)| li)
    }

    // --- transmission ----------------------------------------------------------

    fn build_message(
        &mut self,
        src: usize,
        dst: usize,
        route: Vec<usize>,
        kind: MsgKind,
        access_origin: bool,
        access_dest: bool,
        flow: Option<usize>,
    ) -> Message {
        let bytes = if kind.is_data() {
            self.cfg.traffic[flow.expect("data has a flow")].packet_bytes as usize
        } else {
            CONTROL_HEADER_BYTES + kind.payload_bytes()
        };
        Message {
            src,
            dst,
            route,
            hop: 0,
            kind,
            bytes,
            access_origin,
            access_dest,
            tag: None,
            protected_arrival: false,
            req: None,
            flow,
        }
    }

    /// Sends `msg` across its next hop: applies backbone key tagging and
    /// checks, link state, and loss, then schedules the arrival.
    fn transmit(&mut self, mut msg: Message) {
        let from = msg.route[msg.hop];
        let to = msg.route[msg.hop + 1];
        let Some(li) = self.link_between(from, to) else {
            self.drop_in_flight(&msg, from, cause::LINK_LOSS);
            return;
        };
        if !self.links[li].up {
            self.drop_in_flight(&msg, from, cause::LINK_LOSS);
            return;
        }

        let protected = self.hop_is_protected(&msg, from, to);
        msg.tag = None;
        msg.protected_arrival = protected;
        if protected {
            let local = self.local_time(from);
            let tag = self.nodes[from]
                .sched
                .as_ref()
                .and_then(|s| s.current_tag(local));
            match tag {
                Some(tag) => msg.tag = Some(tag),
                None => {
                    self.drop_in_flight(&msg, from, cause::NO_KEY);
                    return;
                }
            }
        }

        if !msg.kind.is_data() {
            self.auth_bytes += msg.bytes as u64;
            self.metric(from, event::AUTH_BYTES, msg.bytes as i64);
        }

        let loss = self.links[li].loss;
        if loss > 0.0 {
            let label = match (msg.flow, &msg.kind) {
                (Some(f), MsgKind::Data) => format!(
                    "loss/{li}/flow/{}/{}/{}",
                    self.cfg.traffic[f].id,
                    self.flow_stats[f].sent,
                    msg.hop
                ),
                _ => {
                    self.ctl_loss_counter += 1;
                    format!("loss/{li}/ctl/{}", self.ctl_loss_counter)
                }
            };
            let mut draw = PrgStream::new(&self.seed_bytes, label.as_bytes());
            if draw.chance(loss) {
                self.drop_in_flight(&msg, from, cause::LINK_LOSS);
                return;
            }
        }

        let latency = self.links[li].latency;
        msg.hop += 1;
        self.push(
            self.now + latency,
            EvKind::Deliver {
                to,
                msg: Box::new(msg),
            },
        );
    }

    /// Backbone hops between two FULL-capable routers are protected by the
    /// current list key, except the access-class first/last hop of join,
    /// client, and relayed-recovery traffic. Wired AS links are plain.
    fn hop_is_protected(&self, msg: &Message, from: usize, to: usize) -> bool {
        let (rf, rt) = (self.nodes[from].role, self.nodes[to].role);
        if !rf.is_backbone() || !rt.is_backbone() {
            return false;
        }
        if msg.access_origin && from == msg.src {
            return false;
        }
        if msg.access_dest && to == msg.dst {
            return false;
        }
        true
    }

    fn drop_in_flight(&mut self, msg: &Message, at: usize, why: &'static str) {
        if msg.kind.is_data() {
            let f = msg.flow.expect("data has a flow");
            match why {
                cause::LINK_LOSS => self.flow_stats[f].link_loss += 1,
                cause::NO_KEY => self.flow_stats[f].no_key += 1,
                cause::KEY_MISMATCH => self.flow_stats[f].key_mismatch += 1,
                _ => {}
            }
            *self.drops_by_cause.entry(why.to_owned()).or_default() += 1;
            self.metric_full(
                at,
                event::PKT_DROPPED,
                msg.bytes as i64,
                Some(why),
                msg.flow,
                None,
            );
        } else {
            self.metric_full(at, event::MSG_DROP, msg.bytes as i64, Some(why), None, None);
        }
    }

    /// Registers a request expecting a response, with retransmission.
    fn send_with_retries(&mut self, mut msg: Message, give_up: GiveUp) -> u64 {
        self.req_counter += 1;
        let req = self.req_counter;
        msg.req = Some(req);
        // Two round trips: strictly after any same-instant response.
        let base = self.path_latency(&msg.route) * 4i128;
        let node = msg.route[0];
        self.nodes[node].pending.insert(
            req,
            PendingReq {
                template: msg.clone(),
                attempts: 1,
                spacing: base,
                first_sent: self.now,
                give_up,
            },
        );
        self.push(
            self.now + base,
            EvKind::Timer {
                node,
                timer: Timer::Retry { req },
            },
        );
        self.transmit(msg);
        req
    }

    fn respond(&mut self, request: &Message, kind: MsgKind, extra_delay: Seconds) {
        self.respond_access(request, kind, extra_delay, request.access_origin)
    }

    /// Responds with an explicit access-class decision for the final hop
    /// (needed when the requester may have lost backbone reachability).
    fn respond_access(
        &mut self,
        request: &Message,
        kind: MsgKind,
        extra_delay: Seconds,
        access_dest: bool,
    ) {
        let from = request.dst;
        let to = request.src;
        let Some(route) = self.route(from, to) else {
            return;
        };
        let mut msg = self.build_message(from, to, route, kind, false, access_dest, None);
        msg.req = request.req;
        if extra_delay.is_positive() {
            // Server-side processing delay: hold the reply, then transmit.
            let at = self.now + extra_delay;
            let from_hop = msg.route[0];
            debug_assert_eq!(from_hop, from);
            self.push_delayed_transmit(at, msg);
        } else {
            self.transmit(msg);
        }
    }

    fn push_delayed_transmit(&mut self, at: Seconds, msg: Message) {
        // Model the hold as a zero-hop self-delivery that transmits onward.
        self.push(
            at,
            EvKind::Deliver {
                to: usize::MAX, // sentinel: transmit stage
                msg: Box::new(msg),
            },
        );
    }

    // --- delivery & dispatch ---------------------------------------------------

    fn on_deliver(&mut self, to: usize, msg: Message) {
        if to == usize::MAX {
            // Delayed-transmit sentinel.
            self.transmit(msg);
            return;
        }
        // Backbone protection check on arrival.
        if msg.protected_arrival {
            let local = self.local_time(to);
            let delta = self.cfg.keylist.effective_skew_delta();
            let verdict = match self.nodes[to].sched.as_ref() {
                None => Some(cause::NO_KEY),
                Some(s) if s.current_tag(local).is_none() => Some(cause::NO_KEY),
                Some(s) => {
                    let tag = msg.tag.as_ref().expect("protected frames carry a tag");
                    if s.accepts_tag(tag, local, delta) {
                        None
                    } else {
                        Some(cause::KEY_MISMATCH)
                    }
                }
            };
            if let Some(why) = verdict {
                self.drop_in_flight(&msg, to, why);
                return;
            }
        }

        if msg.route[msg.hop] != to {
            return; // stale route after topology change
        }
        if msg.hop + 1 < msg.route.len() {
            // Not the destination: relay.
            self.transmit(msg);
            return;
        }
        self.dispatch(to, msg);
    }

    fn dispatch(&mut self, to: usize, msg: Message) {
        match &msg.kind {
            MsgKind::Data => self.on_data_arrival(to, &msg),
            MsgKind::JoinReq { .. }
            | MsgKind::JoinConfirm { .. } => self.on_join_parent_side(to, &msg),
            MsgKind::JoinChallenge { .. } | MsgKind::JoinDone => self.on_join_child_side(to, &msg),
            MsgKind::AsAuthReq { .. } | MsgKind::KeyListReq { .. } | MsgKind::AkeRound1 { .. } => {
                self.on_as_request(to, &msg)
            }
            MsgKind::AsAuthResp { .. } => self.on_as_auth_resp(to, &msg),
            MsgKind::KeyListResp { .. } => self.on_keylist_resp(to, msg),
            MsgKind::AkeRound2 { .. } => self.on_ake_round2(to, &msg),
        }
    }

    fn on_data_arrival(&mut self, to: usize, msg: &Message) {
        if self.nodes[to].role == Role::Mc {
            let ready = self.nodes[to]
                .mc
                .as_ref()
                .is_some_and(|mc| mc.session.is_some());
            if !ready {
                self.drop_in_flight(msg, to, cause::NO_KEY);
                return;
            }
        }
        let f = msg.flow.expect("data has a flow");
        self.flow_stats[f].delivered += 1;
        self.metric_full(
            to,
            event::PKT_DELIVERED,
            msg.bytes as i64,
            None,
            msg.flow,
            None,
        );
    }

    // --- MR join: parent side ---------------------------------------------------

    fn on_join_parent_side(&mut self, me: usize, msg: &Message) {
        // Only FULL backbone nodes serve joins.
        let serving = match self.nodes[me].role {
            Role::Igw => self.nodes[me].sched.is_some(),
            Role::Mr => matches!(self.nodes[me].join, JoinState::Full),
            _ => false,
        };
        if !serving {
            return;
        }
        match &msg.kind {
            MsgKind::JoinReq { cert } => {
                let valid = cert.purpose == CertPurpose::NetworkJoin
                    && cert.subject == self.nodes[msg.src].id
                    && cert::verify_certificate(cert, &self.ca_public);
                if !valid {
                    return; // silent reject; the joiner times out
                }
                // One nonce per child, reused on retransmitted requests.
                let nonce = match self.nodes[me].join_children.get(&msg.src) {
                    Some(&nonce) => nonce,
                    None => {
                        let mut rng = PrgStream::new(
                            &self.seed_bytes,
                            format!("join-nonce/{me}/{}/{}", msg.src, self.seq).as_bytes(),
                        );
                        let nonce = rng.next_u64();
                        self.nodes[me].join_children.insert(msg.src, nonce);
                        nonce
                    }
                };
                self.respond(msg, MsgKind::JoinChallenge { nonce }, Seconds::zero());
            }
            MsgKind::JoinConfirm { proof } => {
                // Kept after success so retransmitted confirms are answered
                // idempotently.
                if self.nodes[me].join_children.get(&msg.src) == Some(proof) {
                    self.respond(msg, MsgKind::JoinDone, Seconds::zero());
                }
            }
            _ => {}
        }
    }

    // --- MR join: child side ------------------------------------------------------

    fn on_join_child_side(&mut self, me: usize, msg: &Message) {
        let Some(req) = msg.req else { return };
        if self.nodes[me].pending.remove(&req).is_none() {
            return; // duplicate or late response
        }
        let join = self.nodes[me].join;
        match (&join, &msg.kind) {
            (JoinState::Phase1 { parent }, MsgKind::JoinChallenge { nonce }) => {
                let parent = *parent;
                let confirm = self.build_access_msg(
                    me,
                    parent,
                    MsgKind::JoinConfirm { proof: *nonce },
                );
                self.send_with_retries(confirm, GiveUp::RestartJoin);
            }
            (JoinState::Phase1 { parent }, MsgKind::JoinDone) => {
                let parent = *parent;
                self.metric(me, event::JOIN_PHASE_COMPLETE, 1);
                self.nodes[me].join = JoinState::Phase2 { parent };
                let cert = self.nodes[me].cert_as.clone().expect("MR carries certs");
                let Some(route) = self.route_via_parent(me, parent) else {
                    self.restart_join(me);
                    return;
                };
                let msg = {
                    let mut m = self.build_message(
                        me,
                        self.authority.node,
                        route,
                        MsgKind::AsAuthReq { cert },
                        true,
                        false,
                        None,
                    );
                    m.access_origin = true;
                    m
                };
                self.send_with_retries(msg, GiveUp::RestartJoin);
            }
            _ => {}
        }
    }

    fn build_access_msg(&mut self, me: usize, parent: usize, kind: MsgKind) -> Message {
        let mut m = self.build_message(me, parent, vec![me, parent], kind, true, false, None);
        m.access_origin = true;
        m
    }

    /// Route to the AS whose first hop is the access parent.
    fn route_via_parent(&mut self, me: usize, parent: usize) -> Option<Vec<usize>> {
        let tail = self.route(parent, self.authority.node)?;
        let mut route = vec![me];
        route.extend(tail);
        Some(route)
    }

    fn on_as_auth_resp(&mut self, me: usize, msg: &Message) {
        let Some(req) = msg.req else { return };
        if self.nodes[me].pending.remove(&req).is_none() {
            return;
        }
        let JoinState::Phase2 { parent } = self.nodes[me].join else {
            return;
        };
        let MsgKind::AsAuthResp { ok } = msg.kind else {
            return;
        };
        if !ok {
            self.metric(me, event::JOIN_REJECTED, 2);
            self.nodes[me].join = JoinState::Detached;
            self.nodes[me].join_blocked = true;
            return;
        }
        self.metric(me, event::JOIN_PHASE_COMPLETE, 2);
        self.nodes[me].join = JoinState::Phase3 { parent };
        let mark = match self.nodes[me].router.count() {
            0 => self.nodes[me].router.next_route(),
            _ => RequestRoute::DirectBackbone,
        };
        self.send_keylist_request(me, None, mark);
    }

    // --- key-list client side ----------------------------------------------------

    fn send_keylist_request(&mut self, me: usize, have: Option<u64>, mark: RequestRoute) {
        let as_node = self.authority.node;
        let route = match mark {
            RequestRoute::RelayViaPeer => {
                let parent = self.nodes[me].parent.or_else(|| match self.nodes[me].join {
                    JoinState::Phase3 { parent } => Some(parent),
                    _ => None,
                });
                match parent {
                    Some(p) => self.route_via_parent(me, p),
                    None => self.route(me, as_node),
                }
            }
            RequestRoute::DirectBackbone => self.route(me, as_node),
        };
        let Some(route) = route else { return };
        let access = mark == RequestRoute::RelayViaPeer;
        let mut msg = self.build_message(
            me,
            as_node,
            route,
            MsgKind::KeyListReq { have, mark },
            access,
            false,
            None,
        );
        msg.access_origin = access;
        if self.nodes[me].first_keylist_sent.is_none() {
            self.nodes[me].first_keylist_sent = Some(self.now);
        }
        let local = self.local_time(me);
        if let Some(sched) = self.nodes[me].sched.as_mut() {
            sched.mark_request_sent(local);
        }
        self.nodes[me].keylist_req_open = true;
        let mark_name = match mark {
            RequestRoute::RelayViaPeer => "relay-via-peer",
            RequestRoute::DirectBackbone => "direct-backbone",
        };
        self.metric_full(me, event::KEY_LIST_REQUEST, 1, Some(mark_name), None, None);
        self.send_with_retries(msg, GiveUp::KeepWaiting);
    }

    fn on_keylist_resp(&mut self, me: usize, msg: Message) {
        let MsgKind::KeyListResp { list } = msg.kind else {
            return;
        };
        let first_sent = msg
            .req
            .and_then(|req| self.nodes[me].pending.remove(&req))
            .map(|p| p.first_sent)
            .or(self.nodes[me].first_keylist_sent);
        self.nodes[me].keylist_req_open = false;
        let local = self.local_time(me);

        if self.nodes[me].sched.is_none() {
            // Phase III (MR) or gateway bootstrap: adopt and go FULL.
            let mut sched = KeyListSchedule::new(list, local, self.cfg.keylist.correction_enabled);
            if let Some(t_s) = first_sent {
                sched.record_rtt(t_s + self.nodes[me].offset, local);
            }
            self.nodes[me].sched = Some(sched);
            if let JoinState::Phase3 { parent } = self.nodes[me].join {
                self.nodes[me].parent = Some(parent);
                self.metric(me, event::JOIN_PHASE_COMPLETE, 3);
            }
            self.become_full(me);
        } else {
            let sched = self.nodes[me].sched.as_mut().expect("checked above");
            sched.install_response(local, list);
        }
        self.run_schedule(me);
    }

    fn become_full(&mut self, me: usize) {
        if self.nodes[me].role == Role::Mr {
            self.nodes[me].join = JoinState::Full;
        }
        self.join_times.insert(self.nodes[me].id.clone(), self.now);
        // Wake adjacent detached routers and attached clients.
        let neighbors: Vec<usize> = self.adj[me].iter().map(|&(n, _)| n).collect();
        for n in neighbors {
            match self.nodes[n].role {
                Role::Mr if matches!(self.nodes[n].join, JoinState::Detached) => {
                    self.push(
                        self.now,
                        EvKind::Timer {
                            node: n,
                            timer: Timer::JoinScan,
                        },
                    );
                }
                Role::Mc => {
                    let attached_here = self.nodes[n]
                        .mc
                        .as_ref()
                        .is_some_and(|mc| mc.attach == me && !mc.started);
                    if attached_here {
                        self.push(
                            self.now,
                            EvKind::Timer {
                                node: n,
                                timer: Timer::McAuthStart,
                            },
                        );
                    }
                }
                _ => {}
            }
        }
    }

    // --- the AS ---------------------------------------------------------------

    fn ensure_list_covering(&mut self, t: Seconds) -> KeyList {
        if self.authority.lists.is_empty() {
            let first = generate_key_list_with(
                &mut self.authority.rng_lists,
                self.cfg.keylist.cardinality,
                self.cfg.keylist.key_len,
                self.cfg.keylist.timeout,
                Seconds::zero(),
                0,
            );
            self.authority.lists.push(first);
        }
        while self.authority.lists.last().expect("non-empty").expiry() <= t {
            let last = self.authority.lists.last().expect("non-empty");
            let next = generate_key_list_with(
                &mut self.authority.rng_lists,
                self.cfg.keylist.cardinality,
                self.cfg.keylist.key_len,
                self.cfg.keylist.timeout,
                last.expiry(),
                last.list_id(),
            );
            self.authority.lists.push(next);
        }
        self.authority
            .lists
            .iter()
            .rev()
            .find(|l| l.covers(t))
            .expect("chain covers t")
            .clone()
    }

    fn list_after(&mut self, id: u64) -> KeyList {
        while self.authority.lists.len() < (id + 1) as usize {
            let last = self.authority.lists.last().expect("seeded at bootstrap");
            let next = generate_key_list_with(
                &mut self.authority.rng_lists,
                self.cfg.keylist.cardinality,
                self.cfg.keylist.key_len,
                self.cfg.keylist.timeout,
                last.expiry(),
                last.list_id(),
            );
            self.authority.lists.push(next);
        }
        self.authority.lists[id as usize].clone()
    }

    fn on_as_request(&mut self, me: usize, msg: &Message) {
        if me != self.authority.node {
            return;
        }
        match &msg.kind {
            MsgKind::AsAuthReq { cert } => {
                let ok = cert.purpose == CertPurpose::AsAuth
                    && cert.subject == self.nodes[msg.src].id
                    && cert::verify_certificate(cert, &self.ca_public);
                self.respond(msg, MsgKind::AsAuthResp { ok }, Seconds::zero());
            }
            MsgKind::KeyListReq { have, mark } => {
                let as_local = self.local_time(me);
                let current = self.ensure_list_covering(as_local);
                let list = match have {
                    None => current,
                    Some(h) if *h < current.list_id() => current,
                    Some(h) => self.list_after(*h),
                };
                let delay = match &self.cfg.faults.keylist_response_delay {
                    Some(f) if self.now >= f.from => f.delay,
                    _ => Seconds::zero(),
                };
                // Relay-marked requesters may hold no live backbone key, so
                // the reply rides the access layer on its final hop.
                let access = *mark == RequestRoute::RelayViaPeer;
                self.respond_access(msg, MsgKind::KeyListResp { list }, delay, access);
            }
            MsgKind::AkeRound1 { body } => self.on_ake_round1(msg, body.clone()),
            _ => {}
        }
    }

    fn on_ake_round1(&mut self, msg: &Message, body: Vec<u8>) {
        let me = self.authority.node;
        let Ok((sig, l)) = decode_round1(&body, &self.authority.directory) else {
            self.metric_full(me, event::MSG_DROP, body.len() as i64, Some("undecodable"), None, None);
            return;
        };
        // Retransmitted copy of an accepted transcript: replay the cached
        // answer rather than minting a second session.
        if let Some(cached) = self.authority.response_cache.get(l.as_bytes()) {
            let body = cached.clone();
            self.respond(msg, MsgKind::AkeRound2 { body }, Seconds::zero());
            return;
        }
        match meshauth_core::anonake::server_round2(
            &sig,
            &l,
            &self.authority.server,
            &mut self.authority.rng_ake,
            &mut self.authority.replay,
        ) {
            Ok(accept) => {
                let body = encode_round2(&accept.reply);
                self.authority
                    .response_cache
                    .insert(*l.as_bytes(), body.clone());
                let fp = key_fingerprint(&accept.k_s.to_bytes_be(), l.as_bytes());
                self.authority
                    .session_keys
                    .insert(self.nodes[msg.src].id.clone(), fp);
                self.respond(msg, MsgKind::AkeRound2 { body }, Seconds::zero());
            }
            Err(reject) => {
                let why = reject.to_string();
                self.metric_full(
                    me,
                    event::MSG_DROP,
                    body.len() as i64,
                    Some(&why),
                    None,
                    None,
                );
            }
        }
    }

    // --- MC authentication -------------------------------------------------------

    fn start_mc_auth(&mut self, me: usize) {
        let attach = {
            let mc = self.nodes[me].mc.as_ref().expect("MC node");
            if mc.started || mc.failed {
                return;
            }
            mc.attach
        };
        let n = self.cfg.ake.ring_size as usize;
        let my_id = self.nodes[me].id.clone();
        let mut rng = PrgStream::new(&self.seed_bytes, format!("node/{my_id}/ake").as_bytes());

        // Ring: self plus n-1 other registered identities, order shuffled.
        let mut others: Vec<String> = self
            .authority
            .directory
            .ids()
            .filter(|id| *id != my_id)
            .map(str::to_owned)
            .collect();
        let mut ring_ids = vec![my_id.clone()];
        for _ in 0..n.saturating_sub(1) {
            let pick = rng.draw_range(0, others.len() as u64).expect("enough users") as usize;
            ring_ids.push(others.swap_remove(pick));
        }
        for i in (1..ring_ids.len()).rev() {
            let j = rng.draw_range(0, (i + 1) as u64).expect("nonempty") as usize;
            ring_ids.swap(i, j);
        }
        let signer_index = ring_ids
            .iter()
            .position(|id| *id == my_id)
            .expect("self in ring");
        let ring: Vec<UserPublicKey> = ring_ids
            .iter()
            .map(|id| {
                self.authority
                    .directory
                    .lookup(id)
                    .expect("registered")
                    .clone()
            })
            .collect();

        let (sig, l, state) = {
            let mc = self.nodes[me].mc.as_ref().expect("MC node");
            client_round1(
                &ring,
                signer_index,
                &mc.user,
                self.authority.server.public(),
                &mut rng,
            )
            .expect("ring and keys are consistent")
        };
        let body = encode_round1(&sig, &l);
        let sig_bytes = body.len() as u64;
        {
            let mc = self.nodes[me].mc.as_mut().expect("MC node");
            mc.started = true;
            mc.ring = ring;
            mc.signer_index = signer_index;
            mc.ake = Some(state);
            mc.sig_bytes = sig_bytes;
        }
        self.metric_full(
            me,
            event::SIG_BYTES,
            sig_bytes as i64,
            None,
            None,
            Some(n as u32),
        );
        let Some(route) = self.route_via_parent(me, attach) else {
            return;
        };
        let mut msg = self.build_message(
            me,
            self.authority.node,
            route,
            MsgKind::AkeRound1 { body },
            true,
            false,
            None,
        );
        msg.access_origin = true;
        self.send_with_retries(msg, GiveUp::FailMcAuth);
    }

    fn on_ake_round2(&mut self, me: usize, msg: &Message) {
        let MsgKind::AkeRound2 { body } = &msg.kind else {
            return;
        };
        if let Some(req) = msg.req {
            self.nodes[me].pending.remove(&req);
        }
        let Ok(payload) = decode_round2(body) else {
            return;
        };
        let server_pub = self.authority.server.public().clone();
        let ring_size = self.cfg.ake.ring_size;
        let done = {
            let mc = self.nodes[me].mc.as_mut().expect("MC node");
            if mc.session.is_some() {
                return;
            }
            let Some(state) = mc.ake.as_mut() else {
                return;
            };
            match client_round3(state, &server_pub, &payload.h, &payload.y, &payload.l) {
                Ok(key) => {
                    mc.session = Some(key);
                    mc.completed_at = Some(self.now);
                    true
                }
                Err(_) => false,
            }
        };
        if done {
            self.metric_full(me, event::AKE_COMPLETE, 1, None, None, Some(ring_size));
        }
    }

    // --- timers ---------------------------------------------------------------

    fn on_timer(&mut self, node: usize, timer: Timer) {
        match timer {
            Timer::SchedTick => {
                self.nodes[node].next_tick = None;
                self.run_schedule(node);
            }
            Timer::Retry { req } => self.on_retry(node, req),
            Timer::JoinScan => self.on_join_scan(node),
            Timer::McAuthStart => self.start_mc_auth(node),
        }
    }

    fn on_retry(&mut self, node: usize, req: u64) {
        let decision = match self.nodes[node].pending.get_mut(&req) {
            None => return,
            Some(p) if p.attempts >= MAX_SEND_ATTEMPTS => {
                let give_up = p.give_up;
                self.nodes[node].pending.remove(&req);
                Err(give_up)
            }
            Some(p) => {
                p.attempts += 1;
                p.spacing = p.spacing * 2i128;
                let mut resend = p.template.clone();
                resend.hop = 0;
                resend.tag = None;
                Ok((resend, p.spacing))
            }
        };
        match decision {
            Ok((resend, spacing)) => {
                self.transmit(resend);
                self.push(
                    self.now + spacing,
                    EvKind::Timer {
                        node,
                        timer: Timer::Retry { req },
                    },
                );
            }
            Err(GiveUp::RestartJoin) => self.restart_join(node),
            Err(GiveUp::FailMcAuth) => {
                if let Some(mc) = self.nodes[node].mc.as_mut() {
                    mc.failed = true;
                    mc.ake = None;
                }
                self.metric(node, event::AKE_FAILED, 1);
            }
            Err(GiveUp::KeepWaiting) => {
                // Stop resending but keep listening; a late response still
                // installs. Partition recovery re-requests via SchedTick.
                self.nodes[node].keylist_req_open = false;
            }
        }
    }

    fn restart_join(&mut self, node: usize) {
        if !matches!(self.nodes[node].join, JoinState::Full) {
            self.nodes[node].join = JoinState::Detached;
            self.nodes[node].join_attempts += 1;
            self.nodes[node].pending.clear();
            self.push(
                self.now,
                EvKind::Timer {
                    node,
                    timer: Timer::JoinScan,
                },
            );
        }
    }

    fn on_join_scan(&mut self, node: usize) {
        if self.nodes[node].join_blocked
            || !matches!(self.nodes[node].join, JoinState::Detached)
        {
            return;
        }
        // Candidate parents: adjacent FULL backbone nodes over live links,
        // nearest first.
        let mut candidates: Vec<(Seconds, usize)> = self.adj[node]
            .iter()
            .filter(|&&(_, li)| self.links[li].up)
            .filter(|&&(n, _)| match self.nodes[n].role {
                Role::Igw => self.nodes[n].sched.is_some(),
                Role::Mr => matches!(self.nodes[n].join, JoinState::Full),
                _ => false,
            })
            .map(|&(n, li)| (self.links[li].latency, n))
            .collect();
        candidates.sort();
        if candidates.is_empty() {
            let at = self.now + scan_interval();
            self.push(
                at,
                EvKind::Timer {
                    node,
                    timer: Timer::JoinScan,
                },
            );
            return;
        }
        let pick = (self.nodes[node].join_attempts as usize) % candidates.len();
        let parent = candidates[pick].1;
        self.nodes[node].join = JoinState::Phase1 { parent };
        let cert = self.nodes[node]
            .cert_network
            .clone()
            .expect("MRs carry certificates");
        let msg = self.build_access_msg(node, parent, MsgKind::JoinReq { cert });
        self.send_with_retries(msg, GiveUp::RestartJoin);
    }

    /// Drains schedule actions at the node's local clock and re-arms the
    /// next tick (or partition-recovery retry).
    fn run_schedule(&mut self, node: usize) {
        if self.nodes[node].sched.is_none() {
            return;
        }
        let local = self.local_time(node);
        loop {
            let action = self.nodes[node]
                .sched
                .as_mut()
                .expect("checked above")
                .on_clock_tick(local);
            match action {
                Action::None => break,
                Action::RotateKey(idx) => {
                    self.key_rotations += 1;
                    self.metric(node, event::KEY_ROTATE, idx as i64);
                }
                Action::SessionRollover { list_id } => {
                    self.metric(node, event::SESSION_ROLLOVER, list_id as i64);
                }
                Action::PartitionAlert => {
                    self.partition_alerts += 1;
                    self.metric(node, event::PARTITION_ALERT, 1);
                }
                Action::SendRequest => {
                    let have = self.nodes[node]
                        .sched
                        .as_ref()
                        .map(|s| s.current_list().list_id());
                    let mark = self.nodes[node].router.next_route();
                    self.send_keylist_request(node, have, mark);
                }
            }
        }

        let partitioned = self.nodes[node]
            .sched
            .as_ref()
            .is_some_and(|s| s.is_partitioned(local));
        if partitioned {
            if !self.nodes[node].keylist_req_open {
                // Access-layer fallback: re-request through the join parent.
                let have = self.nodes[node]
                    .sched
                    .as_ref()
                    .map(|s| s.current_list().list_id());
                self.send_keylist_request(node, have, RequestRoute::RelayViaPeer);
            }
            let at = self.now + self.cfg.keylist.timeout;
            self.schedule_tick(node, at);
        } else {
            let wake_local = self.nodes[node]
                .sched
                .as_ref()
                .expect("checked above")
                .next_wakeup(local);
            let at = wake_local - self.nodes[node].offset;
            if at > self.now {
                self.schedule_tick(node, at);
            }
        }
    }

    fn schedule_tick(&mut self, node: usize, at: Seconds) {
        if at > self.cfg.duration {
            return;
        }
        if let Some(pending) = self.nodes[node].next_tick {
            if pending <= at {
                return;
            }
        }
        self.nodes[node].next_tick = Some(at);
        self.push(
            at,
            EvKind::Timer {
                node,
                timer: Timer::SchedTick,
            },
        );
    }

    // --- traffic ----------------------------------------------------------------

    fn on_flow_emit(&mut self, flow: usize, pkt: u64) {
        let spec: FlowSpec = self.cfg.traffic[flow].clone();
        if self.now > spec.stop {
            return;
        }
        let src = self.index_of(&spec.src);
        let dst = self.index_of(&spec.dst);

        self.flow_stats[flow].sent += 1;
        self.metric_full(
            src,
            event::PKT_SENT,
            spec.packet_bytes as i64,
            None,
            Some(flow),
            None,
        );

        // Client sources need an established session before they may talk.
        let src_ready = match self.nodes[src].role {
            Role::Mc => self.nodes[src]
                .mc
                .as_ref()
                .is_some_and(|mc| mc.session.is_some()),
            _ => true,
        };
        if !src_ready {
            let probe = self.build_message(src, dst, vec![src, dst], MsgKind::Data, true, true, Some(flow));
            self.drop_in_flight(&probe, src, cause::NO_KEY);
        } else {
            match self.route(src, dst) {
                Some(route) => {
                    let access_origin = self.nodes[src].role == Role::Mc;
                    let access_dest = self.nodes[dst].role == Role::Mc;
                    let msg = self.build_message(
                        src,
                        dst,
                        route,
                        MsgKind::Data,
                        access_origin,
                        access_dest,
                        Some(flow),
                    );
                    self.transmit(msg);
                }
                None => {
                    let probe =
                        self.build_message(src, dst, vec![src, dst], MsgKind::Data, true, true, Some(flow));
                    self.drop_in_flight(&probe, src, cause::LINK_LOSS);
                }
            }
        }

        let next = self.now + spec.interval();
        if next <= spec.stop {
            self.push(next, EvKind::FlowEmit { flow, pkt: pkt + 1 });
        }
    }

    // --- wrap-up ----------------------------------------------------------------

    fn finish(mut self) -> SimOutput {
        let flows: BTreeMap<String, FlowSummary> = self
            .cfg
            .traffic
            .iter()
            .zip(&self.flow_stats)
            .map(|(spec, stat)| {
                let ratio = if stat.sent == 0 {
                    1.0
                } else {
                    stat.delivered as f64 / stat.sent as f64
                };
                (
                    spec.id.clone(),
                    FlowSummary {
                        sent: stat.sent,
                        delivered: stat.delivered,
                        dropped_link_loss: stat.link_loss,
                        dropped_no_key: stat.no_key,
                        dropped_key_mismatch: stat.key_mismatch,
                        delivery_ratio: ratio,
                    },
                )
            })
            .collect();

        let mut sessions = Vec::new();
        for node in &self.nodes {
            let Some(mc) = &node.mc else { continue };
            let Some(session) = &mc.session else { continue };
            let client_fp = key_fingerprint(
                &session.k_s.to_bytes_be(),
                session.transcript_tag.as_bytes(),
            );
            let server_fp = self
                .authority
                .session_keys
                .get(&node.id)
                .cloned()
                .unwrap_or_default();
            sessions.push(SessionSummary {
                node: node.id.clone(),
                ring_size: self.cfg.ake.ring_size,
                sig_bytes: mc.sig_bytes,
                completed_at: mc.completed_at.expect("set with session"),
                client_key: client_fp,
                server_key: server_fp,
            });
        }

        let summary = Summary {
            seed: self.cfg.seed,
            duration: self.cfg.duration,
            join_times: std::mem::take(&mut self.join_times),
            partition_alerts: self.partition_alerts,
            key_rotations: self.key_rotations,
            auth_bytes_total: self.auth_bytes,
            drops_by_cause: std::mem::take(&mut self.drops_by_cause),
            flows,
            sessions,
        };
        SimOutput {
            metrics: self.metrics,
            summary,
        }
    }
}

fn key_fingerprint(key_bytes: &[u8], tag: &[u8]) -> String {
    hash(&[key_bytes, tag]).to_hex()
}
