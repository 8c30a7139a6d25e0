use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::bec::Decision;
use crate::crypto::{self, Hash, KeyDirectory, ReplicaId};
use crate::dag::MessageRef;

/// One delivery as seen by the application, in delivery order.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub id: Hash,
    pub sender: ReplicaId,
    pub msg: MessageRef,
}

/// Messages a connection added to one of its ends.
#[derive(Clone, Debug)]
pub struct ConnTrace {
    pub ends: [usize; 2],
    /// `(receiving end, message)` for every delivery the connection caused.
    pub delivered: Vec<(usize, MessageRef)>,
    pub completed: bool,
}

/// Everything the property checks need from a finished run.
pub struct Trace {
    pub directory: Arc<KeyDirectory>,
    pub ids: Vec<ReplicaId>,
    pub correct: Vec<bool>,
    pub edges: Vec<[usize; 2]>,
    /// Messages each replica signed and broadcast.
    pub broadcasts: Vec<BTreeSet<Hash>>,
    pub deliveries: Vec<Vec<Delivery>>,
    /// Final store contents of every correct replica.
    pub stores: Vec<BTreeSet<Hash>>,
    pub digests: Vec<Hash>,
    pub decisions: Vec<Vec<(Hash, Decision)>>,
    pub invariant_failures: Vec<Vec<(Hash, String)>>,
    pub connections: Vec<ConnTrace>,
    /// Reconciliation rounds among correct replicas ran after the last
    /// broadcast and every replica was up at the end.
    pub quiescent: bool,
    /// No replica crashed during the run.
    pub crash_free: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Property {
    NonDuplication,
    Authenticity,
    CausalOrder,
    SelfDelivery,
    Convergence,
    Agreement,
    InvariantPreservation,
    EventualDelivery,
    Isolation,
    Completion,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyViolation {
    pub property: Property,
    pub replica: String,
    pub message: Option<Hash>,
    pub detail: String,
}

impl fmt::Display for PropertyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}", self.property, self.replica)?;
        if let Some(h) = self.message {
            write!(f, " on {}", &h.to_hex()[..12])?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Fixpoint of repeatedly merging the stores of correct neighbours.
pub fn oracle_full_exchange(stores: &[BTreeSet<Hash>], correct: &[bool], edges: &[[usize; 2]]) -> Vec<BTreeSet<Hash>> {
    let mut sets = stores.to_vec();
    let mut changed = true;
    while changed {
        changed = false;
        for &[a, b] in edges {
            if !correct[a] || !correct[b] {
                continue;
            }
            if sets[a] != sets[b] {
                let union: BTreeSet<Hash> = sets[a].union(&sets[b]).copied().collect();
                sets[a] = union.clone();
                sets[b] = union;
                changed = true;
            }
        }
    }
    sets
}

/// Checks every property on the correct replicas and returns all
/// violations found.
pub fn assert_trace_properties(t: &Trace) -> Vec<PropertyViolation> {
    let mut out = Vec::new();
    let index: HashMap<&ReplicaId, usize> = t.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let correct: Vec<usize> = (0..t.ids.len()).filter(|&i| t.correct[i]).collect();
    let mut push = |property, r: usize, message, detail: String| {
        out.push(PropertyViolation { property, replica: t.ids[r].name().to_owned(), message, detail })
    };

    for &r in &correct {
        let mut seen = HashSet::new();
        for d in &t.deliveries[r] {
            if !seen.insert(d.id) {
                push(Property::NonDuplication, r, Some(d.id), "delivered twice".into());
            }
            let signer = crypto::check(&d.msg.payload(), d.msg.sig(), &t.directory);
            if signer.as_ref() != Some(&d.sender) {
                push(Property::Authenticity, r, Some(d.id), format!("not signed by {}", d.sender.name()));
            } else if let Some(&s) = index.get(&d.sender) {
                if t.correct[s] && !t.broadcasts[s].contains(&d.id) {
                    push(Property::Authenticity, r, Some(d.id), format!("never broadcast by {}", d.sender.name()));
                }
            }
            for p in d.msg.hs() {
                if !seen.contains(p) {
                    push(
                        Property::CausalOrder,
                        r,
                        Some(d.id),
                        format!("predecessor {} not delivered first", &p.to_hex()[..12]),
                    );
                }
            }
        }
        for b in &t.broadcasts[r] {
            if !seen.contains(b) {
                push(Property::SelfDelivery, r, Some(*b), "own broadcast not delivered".into());
            }
        }
        for (h, why) in &t.invariant_failures[r] {
            push(Property::InvariantPreservation, r, Some(*h), why.clone());
        }
    }

    let delivered: BTreeMap<usize, BTreeSet<Hash>> =
        correct.iter().map(|&r| (r, t.deliveries[r].iter().map(|d| d.id).collect())).collect();
    let decisions: BTreeMap<usize, HashMap<Hash, &Decision>> =
        correct.iter().map(|&r| (r, t.decisions[r].iter().map(|(h, d)| (*h, d)).collect())).collect();
    for (i, &a) in correct.iter().enumerate() {
        for &b in &correct[i + 1..] {
            if delivered[&a] == delivered[&b] && t.digests[a] != t.digests[b] {
                push(
                    Property::Convergence,
                    b,
                    None,
                    format!("state differs from {} with equal deliveries", t.ids[a].name()),
                );
            }
            for (h, d) in &decisions[&a] {
                if let Some(e) = decisions[&b].get(h) {
                    if d != e {
                        push(Property::Agreement, b, Some(*h), format!("{e:?} but {} decided {d:?}", t.ids[a].name()));
                    }
                }
            }
        }
    }

    if t.quiescent {
        let oracle = oracle_full_exchange(&t.stores, &t.correct, &t.edges);
        for &r in &correct {
            let lacking = oracle[r].difference(&t.stores[r]).count();
            if lacking > 0 {
                push(Property::EventualDelivery, r, None, format!("{lacking} messages never delivered"));
            }
        }
    }

    for c in &t.connections {
        let faulty = c.ends.iter().any(|&e| !t.correct[e]);
        if faulty {
            for (to, m) in &c.delivered {
                if t.correct[*to] && crypto::check(&m.payload(), m.sig(), &t.directory).is_none() {
                    push(Property::Isolation, *to, Some(m.id()), "store changed by an invalid message".into());
                }
            }
        } else if t.crash_free && !c.completed {
            push(
                Property::Completion,
                c.ends[0],
                None,
                format!("reconciliation with {} did not complete", t.ids[c.ends[1]].name()),
            );
        }
    }
    out
}
