//! The set of delivered messages as a predecessor-closed hash DAG.
//!
//! [`Dag`] holds the messages together with a successor index, the current
//! heads, and a skeleton of truncated history. It is built on persistent
//! maps, so [`MessageStore::snapshot`] is O(1) and a snapshot never observes
//! later inserts.
//!
//! Every message carries an insertion sequence number. Batches are inserted
//! in topological order, so a predecessor always has a smaller sequence
//! number than its successors; the graph walks below rely on that to stop
//! early.

mod message;
mod persist;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use im::{OrdMap, OrdSet};
use thiserror::Error;

use crate::codec::DecodeError;
use crate::crypto::{Hash, KeyDirectory, ReplicaId};

pub use message::{Message, MessageRef};
pub use persist::StoreLog;

/// A set of messages keyed by id.
pub type MessageSet = BTreeMap<Hash, MessageRef>;

#[derive(Debug, Error)]
pub enum DagError {
    #[error("message {message:?} references unknown predecessor {missing:?}")]
    DanglingPredecessor { message: Hash, missing: Hash },
    #[error("cycle detected among {0} messages (hash collision?)")]
    CycleDetected(usize),
    #[error("store log: {0}")]
    Io(#[from] std::io::Error),
    #[error("store log entry {index}: {source}")]
    Decode { index: usize, source: DecodeError },
    #[error("store log entry {index}: signature does not verify")]
    BadSignature { index: usize },
}

/// A message whose signature has been checked, paired with its signer.
#[derive(Clone, Debug)]
pub struct VerifiedMessage {
    pub msg: MessageRef,
    pub sender: ReplicaId,
}

impl VerifiedMessage {
    pub fn verify(msg: MessageRef, directory: &KeyDirectory) -> Option<Self> {
        let sender = msg.verify(directory)?;
        Some(VerifiedMessage { msg, sender })
    }

    /// For messages signed locally, whose signature is correct by construction.
    pub fn trusted(msg: MessageRef, sender: ReplicaId) -> Self {
        VerifiedMessage { msg, sender }
    }

    pub fn id(&self) -> Hash {
        self.msg.id()
    }
}

#[derive(Clone)]
struct Entry {
    msg: MessageRef,
    sender: ReplicaId,
    seq: u64,
}

/// Predecessor hashes of a message whose body was removed by truncation.
#[derive(Clone)]
struct Tombstone {
    seq: u64,
    hs: Arc<[Hash]>,
}

/// Read-only queries over a predecessor-closed message DAG.
#[derive(Clone, Default)]
pub struct Dag {
    messages: OrdMap<Hash, Entry>,
    successors: OrdMap<Hash, Arc<Vec<Hash>>>,
    heads: OrdSet<Hash>,
    tombstones: OrdMap<Hash, Tombstone>,
    next_seq: u64,
}

impl Dag {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// True if a message with this hash is stored with its body.
    pub fn contains(&self, h: &Hash) -> bool {
        self.messages.contains_key(h)
    }

    /// True if the hash refers to a stored or a truncated message.
    pub fn resolves(&self, h: &Hash) -> bool {
        self.messages.contains_key(h) || self.tombstones.contains_key(h)
    }

    pub fn is_truncated(&self, h: &Hash) -> bool {
        self.tombstones.contains_key(h)
    }

    pub fn get(&self, h: &Hash) -> Option<&MessageRef> {
        self.messages.get(h).map(|e| &e.msg)
    }

    pub fn sender(&self, h: &Hash) -> Option<&ReplicaId> {
        self.messages.get(h).map(|e| &e.sender)
    }

    /// All stored messages, ordered by id.
    pub fn messages(&self) -> impl Iterator<Item = &MessageRef> {
        self.messages.values().map(|e| &e.msg)
    }

    pub fn ids(&self) -> BTreeSet<Hash> {
        self.messages.keys().copied().collect()
    }

    /// Messages in insertion order, which is a topological order.
    pub fn messages_in_order(&self) -> Vec<MessageRef> {
        let mut v: Vec<&Entry> = self.messages.values().collect();
        v.sort_by_key(|e| e.seq);
        v.into_iter().map(|e| e.msg.clone()).collect()
    }

    /// Hashes of the messages that have no successors.
    pub fn heads(&self) -> BTreeSet<Hash> {
        self.heads.iter().copied().collect()
    }

    fn seq(&self, h: &Hash) -> Option<u64> {
        self.messages.get(h).map(|e| e.seq).or_else(|| self.tombstones.get(h).map(|t| t.seq))
    }

    fn preds(&self, h: &Hash) -> &[Hash] {
        if let Some(e) = self.messages.get(h) {
            e.msg.hs()
        } else if let Some(t) = self.tombstones.get(h) {
            &t.hs
        } else {
            &[]
        }
    }

    fn succs(&self, h: &Hash) -> &[Hash] {
        self.successors.get(h).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Direct successors of `h` that are stored in this DAG.
    pub fn successors_of(&self, h: &Hash) -> Vec<MessageRef> {
        self.succs(h).iter().filter_map(|s| self.get(s).cloned()).collect()
    }

    /// Transitive successors of `h`, excluding `h` itself.
    pub fn succ_star(&self, h: &Hash) -> MessageSet {
        self.succ_star_all([*h])
    }

    /// Union of the transitive successors of every start hash. Start hashes
    /// are included only if they are themselves a successor of another.
    pub fn succ_star_all(&self, start: impl IntoIterator<Item = Hash>) -> MessageSet {
        let mut out = MessageSet::new();
        let mut stack: Vec<Hash> = start.into_iter().collect();
        while let Some(h) = stack.pop() {
            for s in self.succs(&h) {
                if out.contains_key(s) {
                    continue;
                }
                if let Some(m) = self.get(s) {
                    out.insert(*s, m.clone());
                    stack.push(*s);
                }
            }
        }
        out
    }

    /// Transitive predecessors of `h` whose bodies are stored. Truncated
    /// history is traversed but not returned.
    pub fn pred_star(&self, h: &Hash) -> MessageSet {
        let mut out = MessageSet::new();
        for p in self.pred_star_hashes(h) {
            if let Some(m) = self.get(&p) {
                out.insert(p, m.clone());
            }
        }
        out
    }

    /// Hashes of all transitive predecessors of `h`, truncated ones included.
    pub fn pred_star_hashes(&self, h: &Hash) -> HashSet<Hash> {
        let mut seen = HashSet::new();
        let mut stack = vec![*h];
        while let Some(x) = stack.pop() {
            for p in self.preds(&x) {
                if self.resolves(p) && seen.insert(*p) {
                    stack.push(*p);
                }
            }
        }
        seen
    }

    /// Whether `ancestor` is a transitive predecessor of `descendant`.
    pub fn precedes(&self, ancestor: &Hash, descendant: &Hash) -> bool {
        let Some(floor) = self.seq(ancestor) else { return false };
        let mut seen = HashSet::new();
        let mut stack = vec![*descendant];
        while let Some(x) = stack.pop() {
            for p in self.preds(&x) {
                if p == ancestor {
                    return true;
                }
                match self.seq(p) {
                    Some(s) if s > floor && seen.insert(*p) => stack.push(*p),
                    _ => {}
                }
            }
        }
        false
    }

    /// Stored messages that are neither among `old_heads` nor predecessors
    /// of them. Unknown hashes in `old_heads` are ignored.
    ///
    /// Walks backwards from the heads and from `old_heads` in descending
    /// insertion order, colouring each node "known" if reachable from
    /// `old_heads`, and stops once no uncoloured-new node remains queued.
    pub fn messages_since(&self, old_heads: &BTreeSet<Hash>) -> MessageSet {
        let mut out = MessageSet::new();
        let mut known: HashMap<Hash, bool> = HashMap::new();
        let mut heap: BinaryHeap<(u64, Hash)> = BinaryHeap::new();
        let mut new_queued = 0usize;

        for h in old_heads {
            if let Some(s) = self.seq(h) {
                if known.insert(*h, true).is_none() {
                    heap.push((s, *h));
                }
            }
        }
        for h in self.heads.iter() {
            if let std::collections::hash_map::Entry::Vacant(v) = known.entry(*h) {
                v.insert(false);
                heap.push((self.seq(h).unwrap(), *h));
                new_queued += 1;
            }
        }

        while new_queued > 0 {
            let Some((_, h)) = heap.pop() else { break };
            let is_known = known[&h];
            if !is_known {
                new_queued -= 1;
                if let Some(m) = self.get(&h) {
                    out.insert(h, m.clone());
                }
            }
            for p in self.preds(&h) {
                let Some(s) = self.seq(p) else { continue };
                match known.get(p).copied() {
                    None => {
                        known.insert(*p, is_known);
                        heap.push((s, *p));
                        if !is_known {
                            new_queued += 1;
                        }
                    }
                    Some(false) if is_known => {
                        known.insert(*p, true);
                        new_queued -= 1;
                    }
                    _ => {}
                }
            }
        }
        out
    }
}

/// Orders messages so that every predecessor comes before its successors,
/// breaking ties between concurrent messages by ascending id. Only edges
/// between members of `msgs` are considered.
pub fn topo_sort<'a>(msgs: impl IntoIterator<Item = &'a MessageRef>) -> Result<Vec<MessageRef>, DagError> {
    let by_id: BTreeMap<Hash, &MessageRef> = msgs.into_iter().map(|m| (m.id(), m)).collect();
    let mut indegree: BTreeMap<Hash, usize> = BTreeMap::new();
    let mut children: HashMap<Hash, Vec<Hash>> = HashMap::new();
    for (id, m) in &by_id {
        let preds_inside = m.hs().iter().filter(|p| by_id.contains_key(p)).count();
        indegree.insert(*id, preds_inside);
        for p in m.hs().iter().filter(|p| by_id.contains_key(p)) {
            children.entry(*p).or_default().push(*id);
        }
    }
    let mut ready: BinaryHeap<Reverse<Hash>> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(h, _)| Reverse(*h)).collect();
    let mut out = Vec::with_capacity(by_id.len());
    while let Some(Reverse(h)) = ready.pop() {
        out.push(by_id[&h].clone());
        for c in children.get(&h).into_iter().flatten() {
            let d = indegree.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*c));
            }
        }
    }
    if out.len() != by_id.len() {
        return Err(DagError::CycleDetected(by_id.len() - out.len()));
    }
    Ok(out)
}

/// An immutable view of a store taken at a point in time.
#[derive(Clone, Default)]
pub struct StoreSnapshot(Dag);

impl Deref for StoreSnapshot {
    type Target = Dag;
    fn deref(&self) -> &Dag {
        &self.0
    }
}

/// A replica's delivered messages, optionally backed by an append-only log.
#[derive(Default)]
pub struct MessageStore {
    dag: Dag,
    log: Option<StoreLog>,
}

impl Deref for MessageStore {
    type Target = Dag;
    fn deref(&self) -> &Dag {
        &self.dag
    }
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a store backed by the log at `path`, replaying and
    /// re-verifying every logged message.
    pub fn open(path: &Path, directory: &KeyDirectory) -> Result<Self, DagError> {
        let (log, msgs) = StoreLog::open(path)?;
        let mut verified = Vec::with_capacity(msgs.len());
        for (index, m) in msgs.into_iter().enumerate() {
            let m = Arc::new(m);
            verified.push(VerifiedMessage::verify(m, directory).ok_or(DagError::BadSignature { index })?);
        }
        let mut store = MessageStore::new();
        store.insert_batch(verified)?;
        store.log = Some(log);
        Ok(store)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot(self.dag.clone())
    }

    /// Adds every message not already present and returns the newly added
    /// ones in delivery (topological) order. Either the whole batch is
    /// added or, on error, nothing is.
    pub fn insert_batch(
        &mut self,
        batch: impl IntoIterator<Item = VerifiedMessage>,
    ) -> Result<Vec<VerifiedMessage>, DagError> {
        let mut fresh: BTreeMap<Hash, VerifiedMessage> = BTreeMap::new();
        for v in batch {
            if !self.dag.resolves(&v.id()) {
                fresh.insert(v.id(), v);
            }
        }
        if fresh.is_empty() {
            return Ok(Vec::new());
        }
        for v in fresh.values() {
            if let Some(missing) = v.msg.hs().iter().find(|h| !self.dag.resolves(h) && !fresh.contains_key(h)) {
                return Err(DagError::DanglingPredecessor { message: v.id(), missing: *missing });
            }
        }
        let order = topo_sort(fresh.values().map(|v| &v.msg))?;
        if let Some(log) = self.log.as_mut() {
            log.append(order.iter().map(|m| m.as_ref()))?;
        }
        let mut out = Vec::with_capacity(order.len());
        for m in order {
            let v = fresh.remove(&m.id()).unwrap();
            let id = v.id();
            for p in v.msg.hs() {
                self.dag.heads.remove(p);
                let mut list = self.dag.successors.get(p).map(|l| (**l).clone()).unwrap_or_default();
                list.push(id);
                self.dag.successors.insert(*p, Arc::new(list));
            }
            self.dag.heads.insert(id);
            let seq = self.dag.next_seq;
            self.dag.next_seq += 1;
            self.dag.messages.insert(id, Entry { msg: v.msg.clone(), sender: v.sender.clone(), seq });
            out.push(v);
        }
        Ok(out)
    }

    /// Removes the bodies of messages that are predecessors of a stable
    /// message, i.e. of a message every replica has delivered. `latest_heads`
    /// gives each replica's most recent heads; hashes this store does not
    /// know are ignored. Truncated messages keep their predecessor hashes so
    /// references to them still resolve. Returns the number removed.
    pub fn truncate_stable(
        &mut self,
        latest_heads: &BTreeMap<ReplicaId, BTreeSet<Hash>>,
        directory: &KeyDirectory,
    ) -> usize {
        let mut stable: Option<HashSet<Hash>> = None;
        for r in directory.replicas() {
            let heads = match latest_heads.get(r) {
                Some(h) if !h.is_empty() => h,
                _ => return 0,
            };
            let mut delivered = HashSet::new();
            for h in heads.iter().filter(|h| self.dag.resolves(h)) {
                delivered.insert(*h);
                delivered.extend(self.dag.pred_star_hashes(h));
            }
            stable = Some(match stable {
                None => delivered,
                Some(s) => s.intersection(&delivered).copied().collect(),
            });
        }
        let Some(stable) = stable else { return 0 };
        let removable: Vec<Hash> = stable
            .iter()
            .filter(|h| self.dag.contains(h))
            .filter(|h| self.dag.succs(h).iter().any(|s| stable.contains(s)))
            .copied()
            .collect();
        for h in &removable {
            let e = self.dag.messages.remove(h).unwrap();
            self.dag.tombstones.insert(*h, Tombstone { seq: e.seq, hs: e.msg.hs().into() });
        }
        removable.len()
    }
}

#[cfg(test)]
pub(crate) mod tests;
