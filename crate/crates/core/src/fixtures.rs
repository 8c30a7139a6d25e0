//! Small hand-built DAGs shared by unit tests, integration tests and
//! benchmarks.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::crypto::{Hash, KeyDirectory, ReplicaKey};
use crate::dag::{Message, MessageRef, MessageStore, VerifiedMessage};

/// Two replicas whose histories diverged after a common prefix `A <- B`.
///
/// ```text
///        +-- C <- D <- E           (only p)
/// A <- B +-- J <- K <- L <- M      (J, K at both; L, M only p)
///        +-- F <- G                (only q)
/// ```
///
/// p holds `{A,B,C,D,E,J,K,L,M}` with heads `{E,M}`; q holds
/// `{A,B,F,G,J,K}` with heads `{G,K}`.
pub struct DivergedPair {
    pub keys: Vec<ReplicaKey>,
    pub directory: KeyDirectory,
    pub msgs: BTreeMap<char, MessageRef>,
}

impl DivergedPair {
    pub fn new() -> Self {
        let keys: Vec<ReplicaKey> = ["p", "q", "r"].iter().map(|n| ReplicaKey::derive(5, n)).collect();
        let directory = KeyDirectory::from_keys(&keys).unwrap();
        let mut msgs: BTreeMap<char, MessageRef> = BTreeMap::new();
        let edges: [(char, Option<char>, usize); 11] = [
            ('A', None, 2),
            ('B', Some('A'), 2),
            ('C', Some('B'), 0),
            ('D', Some('C'), 0),
            ('E', Some('D'), 0),
            ('J', Some('B'), 2),
            ('K', Some('J'), 2),
            ('L', Some('K'), 0),
            ('M', Some('L'), 0),
            ('F', Some('B'), 1),
            ('G', Some('F'), 1),
        ];
        for (name, pred, signer) in edges {
            let hs: Vec<Hash> = pred.map(|p| msgs[&p].id()).into_iter().collect();
            let m = Message::signed(&keys[signer], format!("value {name}").into_bytes(), hs);
            msgs.insert(name, Arc::new(m));
        }
        DivergedPair { keys, directory, msgs }
    }

    pub fn id(&self, name: char) -> Hash {
        self.msgs[&name].id()
    }

    pub fn ids(&self, names: &str) -> std::collections::BTreeSet<Hash> {
        names.chars().map(|c| self.id(c)).collect()
    }

    pub fn verified(&self, names: &str) -> Vec<VerifiedMessage> {
        names.chars().map(|c| VerifiedMessage::verify(self.msgs[&c].clone(), &self.directory).unwrap()).collect()
    }

    pub fn store(&self, names: &str) -> MessageStore {
        let mut s = MessageStore::new();
        s.insert_batch(self.verified(names)).unwrap();
        s
    }

    pub const P: &'static str = "ABCDEJKLM";
    pub const Q: &'static str = "ABFGJK";
}

impl Default for DivergedPair {
    fn default() -> Self {
        Self::new()
    }
}

/// A random DAG of `n` messages signed round-robin by `keys`, returned in
/// creation order (each message only references earlier ones). Every message
/// has between zero and `max_preds` predecessors.
pub fn random_dag(rng: &mut impl rand::Rng, keys: &[ReplicaKey], n: usize, max_preds: usize) -> Vec<MessageRef> {
    let mut out: Vec<MessageRef> = Vec::with_capacity(n);
    for i in 0..n {
        let k = if out.is_empty() { 0 } else { rng.gen_range(0..=max_preds.min(out.len())) };
        let mut hs = Vec::with_capacity(k);
        for _ in 0..k {
            // Bias towards recent messages so paths get long.
            let back = rng.gen_range(0..out.len().min(8));
            let pick = if rng.gen_bool(0.8) { out.len() - 1 - back } else { rng.gen_range(0..out.len()) };
            hs.push(out[pick].id());
        }
        let value = format!("m{i}-{}", rng.gen::<u32>()).into_bytes();
        out.push(Arc::new(Message::signed(&keys[i % keys.len()], value, hs)));
    }
    out
}

/// All predecessors (transitively) of the messages in `roots`, computed by
/// naive fixpoint iteration over `all`. Independent of [`crate::dag::Dag`].
pub fn naive_closure(all: &[MessageRef], roots: &std::collections::BTreeSet<Hash>) -> std::collections::BTreeSet<Hash> {
    let by_id: BTreeMap<Hash, &MessageRef> = all.iter().map(|m| (m.id(), m)).collect();
    let mut set: std::collections::BTreeSet<Hash> = roots.iter().filter(|h| by_id.contains_key(h)).copied().collect();
    loop {
        let before = set.len();
        let add: Vec<Hash> = set.iter().flat_map(|h| by_id[h].hs().iter().copied()).collect();
        set.extend(add.into_iter().filter(|h| by_id.contains_key(h)));
        if set.len() == before {
            return set;
        }
    }
}
