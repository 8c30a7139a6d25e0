//! Byzantine causal broadcast.
//!
//! A [`Replica`] owns the durable state: its message store, the heads
//! recorded per peer, and the application receiving deliveries. Each
//! reconciliation runs on a [`ConnectionState`] owned by the caller, which
//! feeds incoming [`WireMessage`]s to [`Replica::on_wire`] and transmits the
//! replies it returns.
//!
//! Two protocol variants are supported. `Basic` opens with the current heads
//! and then walks missing predecessors one round trip at a time. `Bloom`
//! additionally sends the heads recorded at the end of the previous
//! reconciliation with that peer and a Bloom filter of everything added
//! since, so the peer can push most missing messages in its first reply.
//!
//! Incoming messages are only delivered once their whole predecessor graph
//! is available and every signature has been checked. A peer that never
//! lets the connection complete cannot change the local store.

mod peer_heads;
mod wire;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use crate::bloom::{BloomFilter, BloomParams};
use crate::codec::DecodeError;
use crate::crypto::{Hash, KeyDirectory, ReplicaId, ReplicaKey};
use crate::dag::{Dag, DagError, Message, MessageRef, MessageStore, StoreSnapshot, VerifiedMessage};

pub use peer_heads::PeerHeadsStore;
pub use wire::WireMessage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolVersion {
    Basic,
    Bloom,
}

impl std::str::FromStr for ProtocolVersion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "basic" => Ok(ProtocolVersion::Basic),
            "bloom" => Ok(ProtocolVersion::Bloom),
            other => Err(format!("unknown protocol `{other}` (expected basic or bloom)")),
        }
    }
}

impl std::fmt::Display for ProtocolVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProtocolVersion::Basic => "basic",
            ProtocolVersion::Bloom => "bloom",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BroadcastConfig {
    pub protocol: ProtocolVersion,
    /// Push each new broadcast on every active connection.
    pub eager_send: bool,
    /// Forward newly delivered messages on every other active connection.
    pub eager_relay: bool,
    pub bloom: BloomParams,
    /// Accept messages whose signature does not verify. Only for checking
    /// that trace property detectors catch the resulting violations.
    #[doc(hidden)]
    pub skip_signature_check: bool,
}

impl Default for BroadcastConfig {
    fn default() -> Self {
        BroadcastConfig {
            protocol: ProtocolVersion::Bloom,
            eager_send: false,
            eager_relay: false,
            bloom: BloomParams::default(),
            skip_signature_check: false,
        }
    }
}

/// Receives messages in causal order, inside the replica's delivery region.
pub trait Application {
    /// Called once per message, after the message and its whole batch have
    /// been added to `store`.
    fn deliver(&mut self, msg: &VerifiedMessage, store: &Dag);
}

impl Application for () {
    fn deliver(&mut self, _: &VerifiedMessage, _: &Dag) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Active,
    Complete,
    Aborted,
}

/// Misbehaviour observed on a connection. Recorded, never fatal by itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolViolation {
    InvalidSignature(Hash),
    UnknownHashRequested(Hash),
    Malformed(DecodeError),
    Rejected(String),
}

/// Connection-local reconciliation state.
pub struct ConnectionState {
    peer: ReplicaId,
    snapshot: StoreSnapshot,
    sent: HashSet<Hash>,
    recvd: BTreeMap<Hash, VerifiedMessage>,
    missing: BTreeSet<Hash>,
    phase: Phase,
    violations: Vec<ProtocolViolation>,
    delivered: usize,
}

impl ConnectionState {
    pub fn peer(&self) -> &ReplicaId {
        &self.peer
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn snapshot(&self) -> &StoreSnapshot {
        &self.snapshot
    }

    pub fn missing(&self) -> &BTreeSet<Hash> {
        &self.missing
    }

    pub fn received(&self) -> impl Iterator<Item = &VerifiedMessage> {
        self.recvd.values()
    }

    pub fn sent_count(&self) -> usize {
        self.sent.len()
    }

    pub fn has_sent(&self, h: &Hash) -> bool {
        self.sent.contains(h)
    }

    pub fn violations(&self) -> &[ProtocolViolation] {
        &self.violations
    }

    /// Messages this connection added to the replica's store.
    pub fn delivered_count(&self) -> usize {
        self.delivered
    }

    /// Heads of `snapshot ∪ recvd`.
    fn merged_heads(&self) -> BTreeSet<Hash> {
        let mut heads = self.snapshot.heads();
        heads.extend(self.recvd.keys().copied());
        for v in self.recvd.values() {
            for p in v.msg.hs() {
                heads.remove(p);
            }
        }
        heads
    }
}

/// What handling one wire message produced.
#[derive(Debug, Default)]
pub struct Step {
    /// To send back on the same connection, in order.
    pub replies: Vec<WireMessage>,
    /// To send on every other active connection.
    pub relay: Vec<WireMessage>,
    /// Newly delivered messages, in delivery order.
    pub delivered: Vec<VerifiedMessage>,
    /// The connection reached `Complete` while handling this message.
    pub completed: bool,
}

/// Result of a local broadcast.
pub struct Broadcast {
    pub msg: MessageRef,
    /// `Msgs{msg}` for every active connection when eager sending is on.
    pub eager: Option<WireMessage>,
}

pub struct Replica<A = ()> {
    key: ReplicaKey,
    directory: Arc<KeyDirectory>,
    store: MessageStore,
    peer_heads: PeerHeadsStore,
    config: BroadcastConfig,
    app: A,
}

impl<A: Application> Replica<A> {
    pub fn new(key: ReplicaKey, directory: Arc<KeyDirectory>, config: BroadcastConfig, app: A) -> Self {
        Self::with_storage(key, directory, config, app, MessageStore::new(), PeerHeadsStore::new())
    }

    /// A replica over existing (for example file-backed) durable state.
    pub fn with_storage(
        key: ReplicaKey,
        directory: Arc<KeyDirectory>,
        config: BroadcastConfig,
        app: A,
        store: MessageStore,
        peer_heads: PeerHeadsStore,
    ) -> Self {
        Replica { key, directory, store, peer_heads, config, app }
    }

    pub fn id(&self) -> &ReplicaId {
        self.key.id()
    }

    pub fn key(&self) -> &ReplicaKey {
        &self.key
    }

    pub fn directory(&self) -> &Arc<KeyDirectory> {
        &self.directory
    }

    pub fn store(&self) -> &MessageStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut MessageStore {
        &mut self.store
    }

    pub fn peer_heads(&self) -> &PeerHeadsStore {
        &self.peer_heads
    }

    pub fn peer_heads_mut(&mut self) -> &mut PeerHeadsStore {
        &mut self.peer_heads
    }

    pub fn config(&self) -> &BroadcastConfig {
        &self.config
    }

    pub fn app(&self) -> &A {
        &self.app
    }

    pub fn app_mut(&mut self) -> &mut A {
        &mut self.app
    }

    pub fn into_parts(self) -> (MessageStore, PeerHeadsStore, A) {
        (self.store, self.peer_heads, self.app)
    }

    /// Signs `value` over the current heads, delivers it locally and adds it
    /// to the store.
    pub fn broadcast(&mut self, value: Vec<u8>) -> Broadcast {
        let msg = Arc::new(Message::signed(&self.key, value, self.store.heads()));
        self.directory.note_signed(&msg.payload(), msg.sig(), self.key.id());
        self.broadcast_message(msg)
    }

    /// Delivers and stores an already-signed message of this replica. Its
    /// predecessors must all be in the store.
    pub fn broadcast_message(&mut self, msg: MessageRef) -> Broadcast {
        let v = VerifiedMessage::trusted(msg.clone(), self.key.id().clone());
        let added = self.store.insert_batch([v]).expect("own broadcast must reference stored messages");
        for v in &added {
            self.app.deliver(v, &self.store);
        }
        let eager = self.config.eager_send.then(|| WireMessage::msgs([msg.clone()]));
        Broadcast { msg, eager }
    }

    /// Opens a reconciliation with `peer` and returns the first message to send.
    pub fn start_reconciliation(&mut self, peer: &ReplicaId) -> (ConnectionState, WireMessage) {
        let snapshot = self.store.snapshot();
        let hs = snapshot.heads();
        let opening = match self.config.protocol {
            ProtocolVersion::Basic => WireMessage::Heads { hs },
            ProtocolVersion::Bloom => {
                let old_heads = self.peer_heads.load(peer);
                let since = snapshot.messages_since(&old_heads);
                let filter = BloomFilter::build(since.keys(), self.config.bloom);
                WireMessage::HeadsV2 { hs, old_heads, filter }
            }
        };
        let conn = ConnectionState {
            peer: peer.clone(),
            snapshot,
            sent: HashSet::new(),
            recvd: BTreeMap::new(),
            missing: BTreeSet::new(),
            phase: Phase::Active,
            violations: Vec::new(),
            delivered: 0,
        };
        (conn, opening)
    }

    /// Aborts a reconciliation. Nothing it received is delivered.
    pub fn abort_connection(&mut self, conn: &mut ConnectionState) {
        conn.phase = Phase::Aborted;
        conn.recvd.clear();
        conn.missing.clear();
    }

    /// Decodes and handles raw bytes; undecodable input is recorded as a
    /// violation and otherwise ignored.
    pub fn on_wire_bytes(&mut self, conn: &mut ConnectionState, bytes: &[u8]) -> Step {
        match WireMessage::decode(bytes) {
            Ok(msg) => self.on_wire(conn, msg),
            Err(e) => {
                conn.violations.push(ProtocolViolation::Malformed(e));
                Step::default()
            }
        }
    }

    pub fn on_wire(&mut self, conn: &mut ConnectionState, msg: WireMessage) -> Step {
        let mut step = Step::default();
        if conn.phase == Phase::Aborted {
            return step;
        }
        match msg {
            WireMessage::Heads { hs } => {
                let unknown = unresolved_heads(&conn.snapshot, &hs);
                self.handle_missing(conn, unknown, &mut step);
            }
            WireMessage::HeadsV2 { hs, old_heads, filter } => {
                let negative: Vec<Hash> =
                    conn.snapshot.messages_since(&old_heads).into_keys().filter(|h| !filter.contains(h)).collect();
                let mut reply: BTreeMap<Hash, MessageRef> = BTreeMap::new();
                for h in &negative {
                    reply.insert(*h, conn.snapshot.get(h).unwrap().clone());
                }
                reply.extend(conn.snapshot.succ_star_all(negative.iter().copied()));
                reply.retain(|h, _| !conn.sent.contains(h));
                if !reply.is_empty() {
                    conn.sent.extend(reply.keys().copied());
                    step.replies.push(WireMessage::msgs(reply.into_values()));
                }
                let unknown = unresolved_heads(&conn.snapshot, &hs);
                self.handle_missing(conn, unknown, &mut step);
            }
            WireMessage::Needs { hashes } => {
                let mut reply = Vec::new();
                for h in hashes {
                    match conn.snapshot.get(&h) {
                        Some(m) if !conn.sent.contains(&h) => reply.push(m.clone()),
                        Some(_) => {}
                        None => conn.violations.push(ProtocolViolation::UnknownHashRequested(h)),
                    }
                }
                conn.sent.extend(reply.iter().map(|m| m.id()));
                step.replies.push(WireMessage::msgs(reply));
            }
            WireMessage::Msgs { msgs } => {
                let mut added = Vec::new();
                for m in msgs {
                    let id = m.id();
                    if conn.snapshot.resolves(&id) || conn.recvd.contains_key(&id) {
                        continue;
                    }
                    if let Some(v) = self.verify(m) {
                        added.push(id);
                        conn.recvd.insert(id, v);
                    } else {
                        conn.violations.push(ProtocolViolation::InvalidSignature(id));
                    }
                }
                let mut unresolved = BTreeSet::new();
                for id in &added {
                    for h in conn.recvd[id].msg.hs() {
                        if !conn.snapshot.resolves(h) && !conn.recvd.contains_key(h) {
                            unresolved.insert(*h);
                        }
                    }
                }
                self.handle_missing(conn, unresolved, &mut step);
            }
        }
        step
    }

    fn verify(&self, m: MessageRef) -> Option<VerifiedMessage> {
        if let Some(sender) = self.store.sender(&m.id()) {
            // Already verified when it entered the store through another path.
            let stored = self.store.get(&m.id()).unwrap().clone();
            return Some(VerifiedMessage::trusted(stored, sender.clone()));
        }
        match VerifiedMessage::verify(m.clone(), &self.directory) {
            Some(v) => Some(v),
            None if self.config.skip_signature_check => {
                Some(VerifiedMessage::trusted(m, ReplicaId::new([0; 32], "<unverified>")))
            }
            None => None,
        }
    }

    fn handle_missing(&mut self, conn: &mut ConnectionState, hashes: BTreeSet<Hash>, step: &mut Step) {
        conn.missing.extend(hashes);
        conn.missing.retain(|h| !conn.recvd.contains_key(h));
        if !conn.missing.is_empty() {
            step.replies.push(WireMessage::Needs { hashes: conn.missing.clone() });
            return;
        }
        let batch: Vec<VerifiedMessage> =
            conn.recvd.values().filter(|v| !self.store.resolves(&v.id())).cloned().collect();
        let added = match self.store.insert_batch(batch) {
            Ok(added) => added,
            Err(e @ (DagError::DanglingPredecessor { .. } | DagError::CycleDetected(_))) => {
                conn.violations.push(ProtocolViolation::Rejected(e.to_string()));
                self.abort_connection(conn);
                return;
            }
            Err(e) => panic!("message store failure: {e}"),
        };
        for v in &added {
            self.app.deliver(v, &self.store);
        }
        conn.delivered += added.len();
        if conn.phase == Phase::Active {
            conn.phase = Phase::Complete;
            step.completed = true;
        }
        if let Err(e) = self.peer_heads.store(&conn.peer, conn.merged_heads()) {
            panic!("peer heads store failure: {e}");
        }
        if self.config.eager_relay && !added.is_empty() {
            step.relay.push(WireMessage::msgs(added.iter().map(|v| v.msg.clone())));
        }
        step.delivered.extend(added);
    }
}

/// Outcome of [`reconcile`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Exchange {
    /// Wire messages sent in each direction.
    pub sent: [usize; 2],
    /// Encoded bytes sent in each direction.
    pub bytes: [usize; 2],
    /// Request/response round trips until both sides completed.
    pub round_trips: usize,
    pub delivered: [usize; 2],
}

/// Runs one reconciliation between two in-process replicas with instant,
/// lossless delivery: both open simultaneously and every reply is handled in
/// the next wave. Each wire message goes through its encoding.
pub fn reconcile<A: Application, B: Application>(a: &mut Replica<A>, b: &mut Replica<B>) -> Exchange {
    let (mut ca, oa) = a.start_reconciliation(&b.id().clone());
    let (mut cb, ob) = b.start_reconciliation(&a.id().clone());
    let mut out = Exchange::default();
    // Messages in flight towards a (index 0) and towards b (index 1).
    let mut wave: [Vec<WireMessage>; 2] = [vec![ob], vec![oa]];
    let mut depth = 0;
    let mut finished_at = [None, None];
    while !wave[0].is_empty() || !wave[1].is_empty() {
        depth += 1;
        let mut next: [Vec<WireMessage>; 2] = [Vec::new(), Vec::new()];
        for side in 0..2 {
            for w in std::mem::take(&mut wave[side]) {
                let bytes = w.encode();
                out.sent[1 - side] += 1;
                out.bytes[1 - side] += bytes.len();
                let step = if side == 0 { a.on_wire_bytes(&mut ca, &bytes) } else { b.on_wire_bytes(&mut cb, &bytes) };
                out.delivered[side] += step.delivered.len();
                if step.completed {
                    finished_at[side] = Some(depth);
                }
                next[1 - side].extend(step.replies);
            }
        }
        wave = next;
    }
    let last: usize = finished_at.iter().map(|d| d.unwrap_or(depth)).max().unwrap_or(1);
    out.round_trips = last.div_ceil(2).max(1);
    out
}

fn unresolved_heads(snapshot: &Dag, hs: &BTreeSet<Hash>) -> BTreeSet<Hash> {
    hs.iter().filter(|h| !snapshot.resolves(h)).copied().collect()
}
