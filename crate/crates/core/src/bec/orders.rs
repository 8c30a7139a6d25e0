//! Exhaustive checks over delivery orders of small message sets.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Decision, ReplicatedState, Schema, Triple, UpdateSet, Value};
use crate::crypto::{Hash, KeyDirectory, ReplicaKey};
use crate::dag::{Message, MessageRef, MessageStore, VerifiedMessage};

/// Every ordering of `msgs` consistent with their predecessor edges.
pub fn linear_extensions(msgs: &[MessageRef]) -> Vec<Vec<MessageRef>> {
    fn go(rest: &mut Vec<MessageRef>, done: &mut Vec<MessageRef>, out: &mut Vec<Vec<MessageRef>>) {
        if rest.is_empty() {
            out.push(done.clone());
            return;
        }
        for i in 0..rest.len() {
            let ready = rest[i].hs().iter().all(|h| done.iter().any(|d| d.id() == *h));
            if ready {
                let m = rest.remove(i);
                done.push(m.clone());
                go(rest, done, out);
                done.pop();
                rest.insert(i, m);
            }
        }
    }
    let mut out = Vec::new();
    go(&mut msgs.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Delivers `msgs` one at a time in the given order.
pub fn deliver_in_order(
    state: &mut ReplicatedState,
    store: &mut MessageStore,
    dir: &KeyDirectory,
    msgs: &[MessageRef],
) -> Vec<Decision> {
    let mut out = Vec::new();
    for m in msgs {
        let v = VerifiedMessage::verify(m.clone(), dir).expect("workload messages are signed by directory keys");
        for v in store.insert_batch([v]).expect("order respects predecessors") {
            out.push(state.on_deliver(&v, store));
        }
    }
    out
}

/// A random workload of `n` messages over the `accounts`, `owners`,
/// `transfers` and `users` relations. Each message sees a random causally
/// closed subset of the earlier ones and issues updates against the state
/// that subset produces. Some messages delete tuples inserted outside their
/// causal past, as a faulty replica would.
pub fn random_workload(rng: &mut ChaCha8Rng, keys: &[ReplicaKey], schema: &Arc<Schema>, n: usize) -> Vec<MessageRef> {
    let dir = KeyDirectory::from_keys(keys).expect("distinct keys");
    let mut msgs: Vec<MessageRef> = Vec::new();
    for i in 0..n {
        let preds: Vec<&MessageRef> = msgs.iter().filter(|_| rng.gen_bool(0.4)).collect();
        let mut closure: BTreeSet<Hash> = preds.iter().map(|m| m.id()).collect();
        loop {
            let before = closure.len();
            for m in &msgs {
                if closure.contains(&m.id()) {
                    closure.extend(m.hs().iter().copied());
                }
            }
            if closure.len() == before {
                break;
            }
        }
        let past: Vec<MessageRef> = msgs.iter().filter(|m| closure.contains(&m.id())).cloned().collect();
        let mut state = ReplicatedState::new(schema.clone());
        deliver_in_order(&mut state, &mut MessageStore::new(), &dir, &past);
        let rows: Vec<Triple> = state.view().triples().iter().map(|t| (**t).clone()).collect();
        let owner = ["a", "b", "c"][rng.gen_range(0..3)];
        let mut u = UpdateSet::new();
        let outside: Vec<Triple> = msgs
            .iter()
            .filter(|m| !closure.contains(&m.id()))
            .filter_map(|m| UpdateSet::decode(m.value()).ok().map(|u| u.inserted_triples(&m.id()).collect::<Vec<_>>()))
            .flatten()
            .collect();
        match rng.gen_range(0..8) {
            7 if !outside.is_empty() => u = u.delete(outside[rng.gen_range(0..outside.len())].clone()),
            0 | 1 => u = u.insert("accounts", vec![owner.into(), rng.gen_range(0..10).into()]),
            2 => u = u.insert("transfers", vec![owner.into(), "z".into(), rng.gen_range(1..5).into()]),
            3 if rng.gen_bool(0.5) => u = u.insert("owners", vec![owner.into()]),
            3 => u = u.insert("users", vec![Value::MessageHash, owner.into()]),
            _ if !rows.is_empty() => {
                let t = rows[rng.gen_range(0..rows.len())].clone();
                if t.rel == "accounts" {
                    let bal = t.tuple[1].as_int().unwrap_or(0);
                    u = u.insert("accounts", vec![t.tuple[0].clone(), (bal + rng.gen_range(-2..4)).into()]);
                }
                u = u.delete(t);
            }
            _ => u = u.insert("accounts", vec![owner.into(), 1.into()]),
        }
        let hs = preds.iter().map(|m| m.id());
        msgs.push(Arc::new(Message::signed(&keys[i % keys.len()], u.encode(), hs)));
    }
    msgs
}

/// Outcome of [`check_delivery_orders`].
#[derive(Clone, Debug, Default)]
pub struct OrderCheck {
    pub workloads: usize,
    pub orders: usize,
    pub failures: Vec<String>,
}

/// For `trials` random workloads of 1 to `max_msgs` messages, delivers every
/// valid order and compares final states, per-message decisions and
/// invariants across orders.
pub fn check_delivery_orders(
    schema: &Arc<Schema>,
    trials: usize,
    max_msgs: usize,
    seed: u64,
    skip_pred_check: bool,
) -> OrderCheck {
    let keys: Vec<ReplicaKey> = (0..3).map(|i| ReplicaKey::derive(seed, &format!("w{i}"))).collect();
    let dir = KeyDirectory::from_keys(&keys).expect("distinct keys");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OrderCheck::default();
    for trial in 0..trials {
        let n = rng.gen_range(1..=max_msgs);
        let msgs = random_workload(&mut rng, &keys, schema, n);
        out.workloads += 1;
        let mut first: Option<(Hash, BTreeMap<Hash, Decision>)> = None;
        for order in linear_extensions(&msgs) {
            out.orders += 1;
            let mut state = ReplicatedState::new(schema.clone());
            state.skip_pred_check = skip_pred_check;
            deliver_in_order(&mut state, &mut MessageStore::new(), &dir, &order);
            for v in state.invariant_violations() {
                out.failures.push(format!("workload {trial}: invariant {v}"));
            }
            let digest = state.view().digest();
            let decisions: BTreeMap<Hash, Decision> = state.decisions().iter().cloned().collect();
            match &first {
                None => first = Some((digest, decisions)),
                Some((d, _)) if *d != digest => {
                    out.failures.push(format!("workload {trial}: final state depends on delivery order"));
                    break;
                }
                Some((_, dec)) if *dec != decisions => {
                    out.failures.push(format!("workload {trial}: decisions depend on delivery order"));
                    break;
                }
                _ => {}
            }
        }
    }
    out
}
