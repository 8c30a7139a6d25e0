//! Deterministic discrete-event simulation of a group of replicas.
//!
//! Time is logical. Each interval, every replica generates its updates at
//! random instants and every edge of the topology reconciles once, in
//! round-robin order at evenly spaced instants. Wire messages take
//! `latency` ticks. Ties are broken by insertion order, so a run is a pure
//! function of its [`ScenarioConfig`].

mod adversary;
mod cost;
mod trace;
mod workload;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bec::{ReplicatedState, Schema};
use crate::bloom::BloomParams;
use crate::crypto::{Hash, KeyDirectory, ReplicaId, ReplicaKey};
use crate::dag::{Dag, VerifiedMessage};
use crate::sync::{Application, BroadcastConfig, ConnectionState, Phase, ProtocolVersion, Replica, WireMessage};

pub use adversary::{Adversary, Strategy};
pub use cost::{cost_of, CostParams, ReconRecord, ReconStats};
pub use trace::{
    assert_trace_properties, oracle_full_exchange, ConnTrace, Delivery, Property, PropertyViolation, Trace,
};
pub use workload::{generate_safe, generate_unsafe, UnsafeKind, Workload, DEFAULT_SCHEMA, LOG_SCHEMA};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("scenario needs at least one replica")]
    NoReplicas,
    #[error("replica index {0} out of range")]
    OutOfRange(usize),
    #[error("edge {0}-{1} is a self loop")]
    SelfLoop(usize, usize),
    #[error("correct replicas do not form a single connected component")]
    Disconnected,
    #[error("schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub replica: usize,
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub replica: usize,
    /// Interval during which the replica goes down, at its midpoint.
    pub interval: usize,
    pub down_intervals: usize,
}

/// A step of an explicit schedule. Each step runs until no wire message is
/// in flight.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScriptStep {
    Generate {
        replica: usize,
        #[serde(default)]
        unsafe_kind: Option<UnsafeKind>,
    },
    Reconcile {
        a: usize,
        b: usize,
    },
}

/// Test hooks that break one guarantee, to check the detectors catch it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    DuplicateDelivery,
    SkipSignatureCheck,
    SkipPredCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub replicas: usize,
    pub adversaries: Vec<Assignment>,
    /// Defaults to the complete graph.
    pub topology: Option<Vec<[usize; 2]>>,
    pub protocol: ProtocolVersion,
    pub eager_send: bool,
    pub eager_relay: bool,
    pub updates_per_interval: usize,
    pub intervals: usize,
    pub interval_ticks: u64,
    pub latency: u64,
    pub bloom_bits: u32,
    pub bloom_hashes: u32,
    pub seed: u64,
    pub cost: CostParams,
    pub workload: Workload,
    pub payload_bytes: usize,
    /// All-edge rounds after the last interval, followed by as many
    /// correct-only rounds as there are correct replicas.
    pub final_rounds: usize,
    pub crashes: Vec<Crash>,
    /// Check every invariant after every delivery.
    pub check_invariants: bool,
    /// Replaces the interval schedule when non-empty.
    pub script: Vec<ScriptStep>,
    pub mutation: Option<Mutation>,
    /// Schema text; defaults by workload.
    pub schema: Option<String>,
    /// Wire depth after which a reconciliation is abandoned.
    pub max_depth: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            replicas: 4,
            adversaries: Vec::new(),
            topology: None,
            protocol: ProtocolVersion::Bloom,
            eager_send: false,
            eager_relay: false,
            updates_per_interval: 1,
            intervals: 100,
            interval_ticks: 100_000,
            latency: 1,
            bloom_bits: 10,
            bloom_hashes: 7,
            seed: 0,
            cost: CostParams::default(),
            workload: Workload::Log,
            payload_bytes: 200,
            final_rounds: 0,
            crashes: Vec::new(),
            check_invariants: false,
            script: Vec::new(),
            mutation: None,
            schema: None,
            max_depth: 8192,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn edges(&self) -> Vec<[usize; 2]> {
        match &self.topology {
            Some(t) => t.clone(),
            None => (0..self.replicas).flat_map(|a| (a + 1..self.replicas).map(move |b| [a, b])).collect(),
        }
    }

    pub fn strategy(&self, r: usize) -> Strategy {
        self.adversaries.iter().rev().find(|a| a.replica == r).map(|a| a.strategy).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.replicas;
        if n == 0 {
            return Err(ConfigError::NoReplicas);
        }
        let edges = self.edges();
        for &[a, b] in &edges {
            for x in [a, b] {
                if x >= n {
                    return Err(ConfigError::OutOfRange(x));
                }
            }
            if a == b {
                return Err(ConfigError::SelfLoop(a, b));
            }
        }
        for r in self.adversaries.iter().map(|a| a.replica).chain(self.crashes.iter().map(|c| c.replica)) {
            if r >= n {
                return Err(ConfigError::OutOfRange(r));
            }
        }
        for s in &self.script {
            match *s {
                ScriptStep::Generate { replica, .. } if replica >= n => return Err(ConfigError::OutOfRange(replica)),
                ScriptStep::Reconcile { a, b } if a >= n || b >= n => return Err(ConfigError::OutOfRange(a.max(b))),
                ScriptStep::Reconcile { a, b } if a == b => return Err(ConfigError::SelfLoop(a, b)),
                _ => {}
            }
        }
        if self.interval_ticks < 4 || self.latency == 0 || self.max_depth == 0 {
            return Err(ConfigError::Invalid("interval_ticks >= 4, latency >= 1 and max_depth >= 1 required".into()));
        }
        if self.bloom_bits == 0 || self.bloom_hashes == 0 {
            return Err(ConfigError::Invalid("bloom parameters must be positive".into()));
        }
        let correct: Vec<usize> = (0..n).filter(|&r| self.strategy(r) == Strategy::Honest).collect();
        if let Some(&start) = correct.first() {
            let mut seen = vec![false; n];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(x) = stack.pop() {
                for &[a, b] in &edges {
                    for (u, v) in [(a, b), (b, a)] {
                        if u == x && !seen[v] && self.strategy(v) == Strategy::Honest {
                            seen[v] = true;
                            stack.push(v);
                        }
                    }
                }
            }
            if correct.iter().any(|&r| !seen[r]) {
                return Err(ConfigError::Disconnected);
            }
        }
        self.parse_schema().map(|_| ())
    }

    fn parse_schema(&self) -> Result<Schema, ConfigError> {
        let text = self.schema.as_deref().unwrap_or(match self.workload {
            Workload::Log => LOG_SCHEMA,
            Workload::Mixed => DEFAULT_SCHEMA,
        });
        Schema::parse(text).map_err(|e| ConfigError::Schema(e.to_string()))
    }
}

/// The application of every simulated replica: the replicated state plus a
/// delivery log.
pub struct SimApp {
    pub state: ReplicatedState,
    pub log: Vec<Delivery>,
    pub invariant_failures: Vec<(Hash, String)>,
    check_invariants: bool,
    duplicate: bool,
}

impl SimApp {
    fn new(schema: Arc<Schema>, cfg: &ScenarioConfig) -> Self {
        let mut state = ReplicatedState::new(schema);
        state.skip_pred_check = cfg.mutation == Some(Mutation::SkipPredCheck);
        SimApp {
            state,
            log: Vec::new(),
            invariant_failures: Vec::new(),
            check_invariants: cfg.check_invariants,
            duplicate: cfg.mutation == Some(Mutation::DuplicateDelivery),
        }
    }
}

impl AsRef<ReplicatedState> for SimApp {
    fn as_ref(&self) -> &ReplicatedState {
        &self.state
    }
}

impl Application for SimApp {
    fn deliver(&mut self, msg: &VerifiedMessage, store: &Dag) {
        self.state.on_deliver(msg, store);
        let d = Delivery { id: msg.id(), sender: msg.sender.clone(), msg: msg.msg.clone() };
        if self.duplicate {
            self.log.push(d.clone());
        }
        self.log.push(d);
        if self.check_invariants {
            for v in self.state.invariant_violations() {
                self.invariant_failures.push((msg.id(), v));
            }
        }
    }
}

pub enum Node {
    Correct(Replica<SimApp>),
    Faulty(Adversary),
}

impl Node {
    fn replica_for(&mut self, peer: usize) -> &mut Replica<SimApp> {
        match self {
            Node::Correct(r) => r,
            Node::Faulty(a) => a.replica_for(peer),
        }
    }

    pub fn as_correct(&self) -> Option<&Replica<SimApp>> {
        match self {
            Node::Correct(r) => Some(r),
            Node::Faulty(_) => None,
        }
    }

    fn shape(&mut self, msg: WireMessage, opening: bool) -> Option<WireMessage> {
        match self {
            Node::Correct(_) => Some(msg),
            Node::Faulty(a) => a.shape(msg, opening),
        }
    }
}

/// Result of [`run_scenario`].
pub struct SimOutcome {
    pub stats: ReconStats,
    pub trace: Trace,
    pub nodes: Vec<Node>,
}

impl SimOutcome {
    pub fn correct(&self) -> impl Iterator<Item = (usize, &Replica<SimApp>)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.as_correct().map(|r| (i, r)))
    }

    pub fn violations(&self) -> Vec<PropertyViolation> {
        assert_trace_properties(&self.trace)
    }

    /// One line per correct replica: name, store size and state digest.
    pub fn final_states(&self) -> String {
        self.correct()
            .map(|(_, r)| {
                let heads: Vec<String> = r.store().heads().iter().map(|h| h.to_hex()).collect();
                format!(
                    "{} msgs={} state={} heads={}\n",
                    r.id().name(),
                    r.store().len(),
                    r.app().state.view().digest().to_hex(),
                    heads.join(",")
                )
            })
            .collect()
    }
}

enum Event {
    Generate { replica: usize, unsafe_kind: Option<UnsafeKind> },
    Reconcile { a: usize, b: usize },
    Wire { conn: usize, to: usize, msg: WireMessage, depth: u32 },
    Crash { replica: usize },
    Recover { replica: usize },
}

struct Conn {
    ends: [usize; 2],
    state: [ConnectionState; 2],
    done_depth: [Option<u32>; 2],
    max_depth: u32,
    bytes: u64,
    optimal: u64,
    in_flight: usize,
    closed: bool,
    delivered: Vec<(usize, crate::dag::MessageRef)>,
}

struct Engine {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    ids: Vec<ReplicaId>,
    nodes: Vec<Node>,
    queue: BTreeMap<(u64, u64), Event>,
    next_seq: u64,
    now: u64,
    conns: Vec<Conn>,
    open: BTreeMap<[usize; 2], usize>,
    down: Vec<bool>,
    gen_seq: Vec<i64>,
    broadcasts: Vec<BTreeSet<Hash>>,
    stats: ReconStats,
    conn_traces: Vec<ConnTrace>,
}

/// Runs a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimOutcome, ConfigError> {
    cfg.validate()?;
    let schema = Arc::new(cfg.parse_schema()?);
    let n = cfg.replicas;
    let keys: Vec<ReplicaKey> = (0..n).map(|i| ReplicaKey::derive(cfg.seed, &format!("r{i}"))).collect();
    let directory =
        Arc::new(KeyDirectory::from_keys(&keys).map_err(|e| ConfigError::Invalid(e.to_string()))?.with_memo());
    let bc = BroadcastConfig {
        protocol: cfg.protocol,
        eager_send: cfg.eager_send,
        eager_relay: cfg.eager_relay,
        bloom: BloomParams { bits_per_entry: cfg.bloom_bits, hashes: cfg.bloom_hashes },
        skip_signature_check: cfg.mutation == Some(Mutation::SkipSignatureCheck),
    };
    let edges = cfg.edges();
    let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nodes: Vec<Node> = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let node_rng = ChaCha8Rng::seed_from_u64(root.gen());
            let app = |faulty: bool| {
                let mut app = SimApp::new(schema.clone(), cfg);
                if faulty {
                    app.check_invariants = false;
                    app.duplicate = false;
                }
                app
            };
            match cfg.strategy(i) {
                Strategy::Honest => Node::Correct(Replica::new(key.clone(), directory.clone(), bc.clone(), app(false))),
                s => {
                    let mut faulty_cfg = bc.clone();
                    faulty_cfg.skip_signature_check = false;
                    let mut make_faulty =
                        || Replica::new(key.clone(), directory.clone(), faulty_cfg.clone(), app(true));
                    let peers: Vec<usize> = edges
                        .iter()
                        .filter_map(|&[a, b]| {
                            if a == i {
                                Some(b)
                            } else if b == i {
                                Some(a)
                            } else {
                                None
                            }
                        })
                        .chain(cfg.script.iter().filter_map(|s| match *s {
                            ScriptStep::Reconcile { a, b } if a == i => Some(b),
                            ScriptStep::Reconcile { a, b } if b == i => Some(a),
                            _ => None,
                        }))
                        .collect::<BTreeSet<usize>>()
                        .into_iter()
                        .collect();
                    Node::Faulty(Adversary::new(s, &mut make_faulty, &peers, node_rng))
                }
            }
        })
        .collect();
    let mut engine = Engine {
        rng: ChaCha8Rng::seed_from_u64(root.gen()),
        ids: keys.iter().map(|k| k.id().clone()).collect(),
        nodes,
        queue: BTreeMap::new(),
        next_seq: 0,
        now: 0,
        conns: Vec::new(),
        open: BTreeMap::new(),
        down: vec![false; n],
        gen_seq: vec![0; n],
        broadcasts: vec![BTreeSet::new(); n],
        stats: ReconStats::default(),
        conn_traces: Vec::new(),
        cfg: cfg.clone(),
    };
    let quiescent = if cfg.script.is_empty() { engine.run_intervals(&edges) } else { engine.run_script() };
    Ok(engine.finish(directory, edges, quiescent))
}

impl Engine {
    fn schedule(&mut self, at: u64, e: Event) {
        self.queue.insert((at, self.next_seq), e);
        self.next_seq += 1;
    }

    fn drain(&mut self) {
        while let Some(((at, _), e)) = self.queue.pop_first() {
            self.now = at;
            self.handle(e);
        }
    }

    fn run_script(&mut self) -> bool {
        for step in self.cfg.script.clone() {
            let e = match step {
                ScriptStep::Generate { replica, unsafe_kind } => Event::Generate { replica, unsafe_kind },
                ScriptStep::Reconcile { a, b } => Event::Reconcile { a, b },
            };
            let at = self.now;
            self.schedule(at, e);
            self.drain();
        }
        false
    }

    /// Schedules one reconciliation per edge, evenly spaced over `[base, base + T)`.
    fn schedule_round(&mut self, base: u64, edges: &[[usize; 2]]) {
        let t = self.cfg.interval_ticks;
        let slots = edges.len().max(1) as u64;
        for (k, &[a, b]) in edges.iter().enumerate() {
            let at = base + (2 * k as u64 + 1) * t / (2 * slots);
            self.schedule(at, Event::Reconcile { a, b });
        }
    }

    fn run_intervals(&mut self, edges: &[[usize; 2]]) -> bool {
        let t = self.cfg.interval_ticks;
        let n = self.cfg.replicas;
        for i in 0..self.cfg.intervals {
            let base = i as u64 * t;
            for r in 0..n {
                for _ in 0..self.cfg.updates_per_interval {
                    let at = base + self.rng.gen_range(0..t);
                    self.schedule(at, Event::Generate { replica: r, unsafe_kind: None });
                }
            }
            self.schedule_round(base, edges);
        }
        for c in self.cfg.crashes.clone() {
            let at = c.interval as u64 * t + t / 2;
            self.schedule(at, Event::Crash { replica: c.replica });
            self.schedule(at + c.down_intervals as u64 * t, Event::Recover { replica: c.replica });
        }
        let mut round = self.cfg.intervals as u64;
        for _ in 0..self.cfg.final_rounds {
            self.schedule_round(round * t, edges);
            round += 1;
        }
        if self.cfg.final_rounds > 0 {
            let correct_edges: Vec<[usize; 2]> = edges
                .iter()
                .copied()
                .filter(|&[a, b]| self.cfg.strategy(a) == Strategy::Honest && self.cfg.strategy(b) == Strategy::Honest)
                .collect();
            let correct = (0..n).filter(|&r| self.cfg.strategy(r) == Strategy::Honest).count();
            for _ in 0..correct {
                self.schedule_round(round * t, &correct_edges);
                round += 1;
            }
        }
        self.drain();
        self.cfg.final_rounds > 0 && !self.down.iter().any(|&d| d)
    }

    fn handle(&mut self, e: Event) {
        match e {
            Event::Generate { replica, unsafe_kind } => self.generate(replica, unsafe_kind),
            Event::Reconcile { a, b } => self.start(a, b),
            Event::Wire { conn, to, msg, depth } => self.receive(conn, to, msg, depth),
            Event::Crash { replica } => {
                self.down[replica] = true;
                let affected: Vec<usize> =
                    self.open.iter().filter(|(k, _)| k.contains(&replica)).map(|(_, &c)| c).collect();
                for c in affected {
                    self.finalize(c);
                }
            }
            Event::Recover { replica } => self.down[replica] = false,
        }
    }

    fn generate(&mut self, r: usize, unsafe_kind: Option<UnsafeKind>) {
        if self.down[r] {
            return;
        }
        self.gen_seq[r] += 1;
        let seq = self.gen_seq[r];
        let (workload, bytes) = (self.cfg.workload, self.cfg.payload_bytes);
        let msgs = match &mut self.nodes[r] {
            Node::Correct(rep) => vec![generate_safe(rep, workload, seq, bytes, &mut self.rng)],
            Node::Faulty(a) => a.generate(workload, seq, bytes, unsafe_kind),
        };
        self.broadcasts[r].extend(msgs.iter().map(|m| m.id()));
        if self.cfg.eager_send && matches!(self.nodes[r], Node::Correct(_)) {
            let w = WireMessage::msgs(msgs);
            for c in self.open_conns_of(r) {
                let side = if self.conns[c].ends[0] == r { 0 } else { 1 };
                self.send(c, 1 - side, w.clone(), 1);
            }
        }
    }

    fn open_conns_of(&self, r: usize) -> Vec<usize> {
        self.open.iter().filter(|(k, _)| k.contains(&r)).map(|(_, &c)| c).collect()
    }

    fn start(&mut self, a: usize, b: usize) {
        if self.down[a] || self.down[b] {
            return;
        }
        let key = [a.min(b), a.max(b)];
        if let Some(&old) = self.open.get(&key) {
            self.finalize(old);
        }
        let ends = [a, b];
        let (ca, oa) = self.nodes[a].replica_for(b).start_reconciliation(&self.ids[b]);
        let (cb, ob) = self.nodes[b].replica_for(a).start_reconciliation(&self.ids[a]);
        let id = self.conns.len();
        self.conns.push(Conn {
            ends,
            state: [ca, cb],
            done_depth: [None, None],
            max_depth: 0,
            bytes: 0,
            optimal: 0,
            in_flight: 0,
            closed: false,
            delivered: Vec::new(),
        });
        self.open.insert(key, id);
        if let Some(w) = self.nodes[a].shape(oa, true) {
            self.send(id, 1, w, 1);
        }
        if let Some(w) = self.nodes[b].shape(ob, true) {
            self.send(id, 0, w, 1);
        }
        self.check_done(id);
    }

    fn send(&mut self, conn: usize, to: usize, msg: WireMessage, depth: u32) {
        let c = &mut self.conns[conn];
        c.bytes += cost_of(&msg, &self.cfg.cost);
        c.in_flight += 1;
        let at = self.now + self.cfg.latency;
        self.schedule(at, Event::Wire { conn, to, msg, depth });
    }

    fn receive(&mut self, conn: usize, to: usize, msg: WireMessage, depth: u32) {
        if self.conns[conn].closed {
            return;
        }
        let c = &mut self.conns[conn];
        c.in_flight -= 1;
        c.max_depth = c.max_depth.max(depth);
        let me = c.ends[to];
        let peer = c.ends[1 - to];
        let step = self.nodes[me].replica_for(peer).on_wire(&mut c.state[to], msg);
        let cost = self.cfg.cost;
        for v in &step.delivered {
            c.optimal += cost.update_bytes + cost.hash_bytes * v.msg.hs().len() as u64;
            c.delivered.push((me, v.msg.clone()));
        }
        if step.completed {
            c.done_depth[to] = Some(depth);
        }
        if depth >= self.cfg.max_depth && !step.replies.is_empty() {
            self.finalize(conn);
            return;
        }
        for reply in step.replies {
            if let Some(w) = self.nodes[me].shape(reply, false) {
                self.send(conn, 1 - to, w, depth + 1);
            }
        }
        for relay in step.relay {
            for other in self.open_conns_of(me).into_iter().filter(|&o| o != conn) {
                let side = if self.conns[other].ends[0] == me { 0 } else { 1 };
                self.send(other, 1 - side, relay.clone(), 1);
            }
        }
        self.check_done(conn);
    }

    fn check_done(&mut self, conn: usize) {
        if !self.conns[conn].closed && self.conns[conn].in_flight == 0 {
            self.finalize(conn);
        }
    }

    /// Closes a connection, aborting any side still active, and records it.
    fn finalize(&mut self, conn: usize) {
        let c = &mut self.conns[conn];
        if c.closed {
            return;
        }
        c.closed = true;
        for side in 0..2 {
            if c.state[side].phase() == Phase::Active {
                let peer = c.ends[1 - side];
                self.nodes[c.ends[side]].replica_for(peer).abort_connection(&mut c.state[side]);
            }
        }
        let completed = c.state.iter().all(|s| s.phase() == Phase::Complete);
        let depth = if completed { c.done_depth.iter().flatten().copied().max().unwrap_or(1) } else { c.max_depth };
        let [a, b] = c.ends;
        self.open.remove(&[a.min(b), a.max(b)]);
        self.stats.records.push(ReconRecord {
            pair: format!("{}-{}", self.ids[a].name(), self.ids[b].name()),
            round_trips: depth.div_ceil(2).max(1),
            bytes: c.bytes,
            new_msgs: c.delivered.len(),
            completed,
            optimal_bytes: c.optimal,
        });
        self.conn_traces.push(ConnTrace { ends: c.ends, delivered: std::mem::take(&mut c.delivered), completed });
    }

    fn finish(mut self, directory: Arc<KeyDirectory>, edges: Vec<[usize; 2]>, quiescent: bool) -> SimOutcome {
        let open: Vec<usize> = self.open.values().copied().collect();
        for c in open {
            self.finalize(c);
        }
        let n = self.nodes.len();
        let correct: Vec<bool> = self.nodes.iter().map(|x| x.as_correct().is_some()).collect();
        let mut trace = Trace {
            directory,
            ids: self.ids.clone(),
            correct,
            edges,
            broadcasts: self.broadcasts,
            deliveries: vec![Vec::new(); n],
            stores: vec![BTreeSet::new(); n],
            digests: vec![Hash::ZERO; n],
            decisions: vec![Vec::new(); n],
            invariant_failures: vec![Vec::new(); n],
            connections: self.conn_traces,
            quiescent,
            crash_free: self.cfg.crashes.is_empty(),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(r) = node.as_correct() {
                trace.deliveries[i] = r.app().log.clone();
                trace.stores[i] = r.store().ids();
                trace.digests[i] = r.app().state.view().digest();
                trace.decisions[i] = r.app().state.decisions().to_vec();
                trace.invariant_failures[i] = r.app().invariant_failures.clone();
            }
        }
        SimOutcome { stats: self.stats, trace, nodes: self.nodes }
    }
}
