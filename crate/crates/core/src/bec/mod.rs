//! Replicated relational tuple store on top of causal broadcast.
//!
//! The state `S` is a set of [`Triple`]s. Each transaction's inserts and
//! deletes travel as one broadcast message; on delivery the update is
//! applied only if it is safe with respect to every declared invariant and
//! every deleted tuple was inserted by a causal predecessor. Both checks
//! depend only on the message and its causal past, so all correct replicas
//! make the same decision for every message.

pub mod orders;
mod schema;
mod update;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::codec::DecodeError;
use crate::crypto::{hash, Hash};
use crate::dag::{Dag, VerifiedMessage};
use crate::sync::{Application, Broadcast, Replica};

pub use schema::{AttrType, CmpOp, Invariant, Schema, Unsafe, ViewQuery};
pub use update::{Triple, Tuple, UpdateSet, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BecError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("relation `{0}` declared twice")]
    Duplicate(String),
    #[error("relation `{rel}` has {expected} attributes, tuple has {got}")]
    Arity { rel: String, expected: usize, got: usize },
    #[error("wrong type for attribute {attr} of `{rel}`")]
    Type { rel: String, attr: usize },
    #[error("unsafe update: {0}")]
    UnsafeUpdate(Unsafe),
    #[error("deleted tuple is not in the local state: {0:?}")]
    MissingTuple(Triple),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed update: {0}")]
    Malformed(#[from] DecodeError),
}

/// Outcome of delivering one message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Applied,
    Malformed,
    Invalid,
    Unsafe(Unsafe),
    /// A delete names a tuple not inserted by a causal predecessor.
    NotCausal,
    /// An insert references a foreign key target outside the causal past.
    DanglingReference,
}

impl Decision {
    pub fn applied(&self) -> bool {
        *self == Decision::Applied
    }
}

/// A consistent read-only view of the state: only whole messages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateView {
    s: im::OrdSet<Arc<Triple>>,
    views: BTreeMap<String, Vec<Tuple>>,
}

impl StateView {
    pub fn triples(&self) -> &im::OrdSet<Arc<Triple>> {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.s.contains(t)
    }

    /// `(h, tuple)` pairs of one relation.
    pub fn rows(&self, rel: &str) -> Vec<(Hash, Tuple)> {
        self.s.iter().filter(|t| t.rel == rel).map(|t| (t.h, t.tuple.clone())).collect()
    }

    pub fn view_rows(&self, rel: &str) -> Option<&[Tuple]> {
        self.views.get(rel).map(|v| v.as_slice())
    }

    /// Canonical encoding of `S`, equal on two replicas iff their states are.
    pub fn encode(&self) -> Vec<u8> {
        UpdateSet { ins: Default::default(), del: self.s.iter().map(|t| (**t).clone()).collect() }.encode()
    }

    pub fn digest(&self) -> Hash {
        hash(&self.encode())
    }
}

/// Handle for reading the state from other threads.
#[derive(Clone)]
pub struct StateReader(Arc<RwLock<StateView>>);

impl StateReader {
    pub fn snapshot(&self) -> StateView {
        self.0.read().unwrap().clone()
    }
}

#[derive(Clone, Debug, Default)]
pub struct BecStats {
    pub applied: usize,
    pub ignored: usize,
}

/// The replicated state `S` of one replica. Plugs into a [`Replica`] as its
/// [`Application`].
pub struct ReplicatedState {
    schema: Arc<Schema>,
    current: StateView,
    published: Arc<RwLock<StateView>>,
    decisions: Vec<(Hash, Decision)>,
    stats: BecStats,
    /// Skip the causal-predecessor check on deletes. Only for checking that
    /// convergence detectors catch the resulting divergence.
    #[doc(hidden)]
    pub skip_pred_check: bool,
}

impl ReplicatedState {
    pub fn new(schema: Arc<Schema>) -> Self {
        let mut current = StateView::default();
        refresh_views(&schema, &mut current);
        ReplicatedState {
            schema,
            published: Arc::new(RwLock::new(current.clone())),
            current,
            decisions: Vec::new(),
            stats: BecStats::default(),
            skip_pred_check: false,
        }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn view(&self) -> &StateView {
        &self.current
    }

    pub fn reader(&self) -> StateReader {
        StateReader(self.published.clone())
    }

    /// Read-committed rows of `rel`.
    pub fn query(&self, rel: &str) -> Result<Vec<(Hash, Tuple)>, BecError> {
        if !self.schema.has_relation(rel) {
            return Err(BecError::UnknownRelation(rel.to_owned()));
        }
        Ok(self.current.rows(rel))
    }

    pub fn view_rows(&self, rel: &str) -> Result<&[Tuple], BecError> {
        self.current.view_rows(rel).ok_or_else(|| BecError::UnknownRelation(rel.to_owned()))
    }

    /// Apply/ignore decision for every delivered message, in delivery order.
    pub fn decisions(&self) -> &[(Hash, Decision)] {
        &self.decisions
    }

    pub fn stats(&self) -> &BecStats {
        &self.stats
    }

    /// Invariants that do not hold on the current state.
    pub fn invariant_violations(&self) -> Vec<String> {
        self.schema.violations(&self.current.s, &self.current.views)
    }

    /// Recomputes every materialized view from `S`.
    pub fn refresh_materialized_views(&mut self) {
        refresh_views(&self.schema, &mut self.current);
    }

    /// Handles delivery of `msg`, whose predecessors are all in `store`.
    pub fn on_deliver(&mut self, msg: &VerifiedMessage, store: &Dag) -> Decision {
        let id = msg.id();
        let decision = match self.decide(msg, store) {
            Ok(u) => {
                let mut s = self.current.s.clone();
                for d in &u.del {
                    s.remove(d);
                }
                for t in u.inserted_triples(&id) {
                    s.insert(Arc::new(t));
                }
                self.current.s = s;
                self.refresh_materialized_views();
                *self.published.write().unwrap() = self.current.clone();
                Decision::Applied
            }
            Err(d) => d,
        };
        if decision.applied() {
            self.stats.applied += 1;
        } else {
            self.stats.ignored += 1;
        }
        self.decisions.push((id, decision.clone()));
        decision
    }

    fn decide(&self, msg: &VerifiedMessage, store: &Dag) -> Result<UpdateSet, Decision> {
        let id = msg.id();
        let u = UpdateSet::decode(msg.msg.value()).map_err(|_| Decision::Malformed)?;
        self.schema.validate(&u).map_err(|_| Decision::Invalid)?;
        self.schema.safety(&u).map_err(Decision::Unsafe)?;
        if !self.skip_pred_check && !u.del.iter().all(|d| store.precedes(&d.h, &id)) {
            return Err(Decision::NotCausal);
        }
        for inv in self.schema.invariants() {
            let Invariant::ForeignKey { src, src_attr, target, target_attr } = inv else { continue };
            for (_, tuple) in u.ins.iter().filter(|(r, _)| r == src) {
                let key = &tuple[*src_attr];
                let own = u.ins.iter().any(|(r, t)| r == target && &t[*target_attr] == key);
                let past = self
                    .current
                    .s
                    .iter()
                    .any(|t| &t.rel == target && &t.tuple[*target_attr] == key && store.precedes(&t.h, &id));
                if !own && !past {
                    return Err(Decision::DanglingReference);
                }
            }
        }
        Ok(u)
    }
}

fn refresh_views(schema: &Schema, state: &mut StateView) {
    for inv in schema.invariants() {
        if let Invariant::MaterializedView { rel, query } = inv {
            state.views.insert(rel.clone(), Schema::evaluate(query, &state.s));
        }
    }
}

impl AsRef<ReplicatedState> for ReplicatedState {
    fn as_ref(&self) -> &ReplicatedState {
        self
    }
}

impl Application for ReplicatedState {
    fn deliver(&mut self, msg: &VerifiedMessage, store: &Dag) {
        self.on_deliver(msg, store);
    }
}

/// A transaction reading a committed snapshot and producing an update.
pub struct Transaction {
    snapshot: StateView,
    pub updates: UpdateSet,
}

impl Transaction {
    pub fn begin(state: &ReplicatedState) -> Self {
        Transaction { snapshot: state.current.clone(), updates: UpdateSet::new() }
    }

    pub fn read(&self, rel: &str) -> Vec<(Hash, Tuple)> {
        self.snapshot.rows(rel)
    }

    pub fn insert(&mut self, rel: &str, tuple: Tuple) -> &mut Self {
        self.updates.ins.insert((rel.to_owned(), tuple));
        self
    }

    pub fn delete(&mut self, h: Hash, rel: &str, tuple: Tuple) -> &mut Self {
        self.updates.del.insert(Triple { h, rel: rel.to_owned(), tuple });
        self
    }

    /// Replaces a row with a new version in the same message.
    pub fn update(&mut self, h: Hash, rel: &str, old: Tuple, new: Tuple) -> &mut Self {
        self.delete(h, rel, old).insert(rel, new)
    }
}

/// Broadcasts the transaction's update after checking it is well-formed,
/// safe, and only deletes tuples present in the local state. Self-delivery
/// applies it before this returns.
pub fn commit_transaction<A>(replica: &mut Replica<A>, t: Transaction) -> Result<Broadcast, BecError>
where
    A: Application + AsRef<ReplicatedState>,
{
    let state = replica.app().as_ref();
    state.schema.validate(&t.updates)?;
    state.schema.safety(&t.updates).map_err(BecError::UnsafeUpdate)?;
    if let Some(missing) = t.updates.del.iter().find(|d| !state.current.contains(d)) {
        return Err(BecError::MissingTuple(missing.clone()));
    }
    Ok(replica.broadcast(t.updates.encode()))
}
