use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::crypto::ReplicaKey;
use crate::fixtures::{naive_closure, random_dag, DivergedPair};

fn key() -> ReplicaKey {
    ReplicaKey::derive(11, "p")
}

fn chain(k: &ReplicaKey, n: usize) -> Vec<MessageRef> {
    let mut out: Vec<MessageRef> = Vec::new();
    for i in 0..n {
        let hs: Vec<Hash> = out.last().map(|m| m.id()).into_iter().collect();
        out.push(Arc::new(Message::signed(k, vec![i as u8], hs)));
    }
    out
}

fn trusted(k: &ReplicaKey, msgs: &[MessageRef]) -> Vec<VerifiedMessage> {
    msgs.iter().map(|m| VerifiedMessage::trusted(m.clone(), k.id().clone())).collect()
}

fn ids(set: &MessageSet) -> BTreeSet<Hash> {
    set.keys().copied().collect()
}

#[test]
fn heads_of_small_stores() {
    let k = key();
    let mut s = MessageStore::new();
    assert!(s.heads().is_empty());
    let c = chain(&k, 1);
    s.insert_batch(trusted(&k, &c)).unwrap();
    assert_eq!(s.heads(), BTreeSet::from([c[0].id()]));
}

#[test]
fn diverged_pair_heads() {
    let f = DivergedPair::new();
    assert_eq!(f.store(DivergedPair::P).heads(), f.ids("EM"));
    assert_eq!(f.store(DivergedPair::Q).heads(), f.ids("GK"));
}

#[test]
fn chain_closures() {
    let k = key();
    let c = chain(&k, 3);
    let mut s = MessageStore::new();
    s.insert_batch(trusted(&k, &c)).unwrap();
    let (a, b, cc) = (c[0].id(), c[1].id(), c[2].id());
    assert_eq!(ids(&s.pred_star(&cc)), BTreeSet::from([a, b]));
    assert_eq!(ids(&s.succ_star(&a)), BTreeSet::from([b, cc]));
    assert!(s.succ_star(&cc).is_empty());
    assert!(s.pred_star(&a).is_empty());
    assert!(s.precedes(&a, &cc));
    assert!(!s.precedes(&cc, &a));
    assert!(!s.precedes(&a, &a));
}

#[test]
fn insert_empty_and_duplicates() {
    let k = key();
    let c = chain(&k, 2);
    let mut s = MessageStore::new();
    assert!(s.insert_batch(Vec::new()).unwrap().is_empty());
    assert_eq!(s.insert_batch(trusted(&k, &c)).unwrap().len(), 2);
    assert!(s.insert_batch(trusted(&k, &c)).unwrap().is_empty());
    assert_eq!(s.len(), 2);
}

#[test]
fn insert_rejects_dangling_predecessor_atomically() {
    let k = key();
    let c = chain(&k, 3);
    let mut s = MessageStore::new();
    let err = s.insert_batch(trusted(&k, &[c[0].clone(), c[2].clone()])).unwrap_err();
    assert!(matches!(err, DagError::DanglingPredecessor { missing, .. } if missing == c[1].id()));
    assert!(s.is_empty());
}

#[test]
fn union_after_reconciliation() {
    let f = DivergedPair::new();
    let mut p = f.store(DivergedPair::P);
    let added = p.insert_batch(f.verified("FGJK")).unwrap();
    let added: BTreeSet<Hash> = added.iter().map(|v| v.id()).collect();
    assert_eq!(added, f.ids("FG"));
    assert_eq!(p.ids(), f.ids("ABCDEFGJKLM"));
    assert_eq!(p.heads(), f.ids("EGM"));
}

#[test]
fn insert_returns_topological_order() {
    let k = key();
    let c = chain(&k, 5);
    let mut rev = c.clone();
    rev.reverse();
    let mut s = MessageStore::new();
    let out = s.insert_batch(trusted(&k, &rev)).unwrap();
    let order: Vec<Hash> = out.iter().map(|v| v.id()).collect();
    assert_eq!(order, c.iter().map(|m| m.id()).collect::<Vec<_>>());
}

#[test]
fn topo_sort_forced_and_tie_broken() {
    let k = key();
    let c = chain(&k, 3);
    assert_eq!(topo_sort(&c[..1]).unwrap(), c[..1].to_vec());
    let shuffled = [c[2].clone(), c[0].clone(), c[1].clone()];
    assert_eq!(topo_sort(&shuffled).unwrap(), c);

    // Two concurrent roots: of the two possible orders, only ascending id
    // order is acceptable.
    let x = Arc::new(Message::signed(&k, b"x".to_vec(), []));
    let y = Arc::new(Message::signed(&k, b"y".to_vec(), []));
    let (lo, hi) = if x.id() < y.id() { (x, y) } else { (y, x) };
    for input in [[lo.clone(), hi.clone()], [hi.clone(), lo.clone()]] {
        assert_eq!(topo_sort(&input).unwrap(), vec![lo.clone(), hi.clone()]);
    }
}

#[test]
fn messages_since_examples() {
    let f = DivergedPair::new();
    let p = f.store(DivergedPair::P);
    assert_eq!(ids(&p.messages_since(&BTreeSet::new())), p.ids());
    assert!(p.messages_since(&p.heads()).is_empty());
    assert_eq!(ids(&p.messages_since(&f.ids("B"))), f.ids("CDEJKLM"));
    let q = f.store(DivergedPair::Q);
    assert_eq!(ids(&q.messages_since(&f.ids("B"))), f.ids("FGJK"));
    // Unknown old heads are ignored.
    let mut with_unknown = f.ids("B");
    with_unknown.insert(Hash([0xee; 32]));
    assert_eq!(ids(&q.messages_since(&with_unknown)), f.ids("FGJK"));
    assert_eq!(ids(&q.messages_since(&f.ids("K"))), f.ids("FG"));
}

#[test]
fn snapshot_is_isolated() {
    let f = DivergedPair::new();
    let mut p = f.store("ABC");
    let snap = p.snapshot();
    p.insert_batch(f.verified("DE")).unwrap();
    assert_eq!(snap.ids(), f.ids("ABC"));
    assert_eq!(snap.heads(), f.ids("C"));
    assert!(snap.succ_star(&f.id('C')).is_empty());
    assert_eq!(p.heads(), f.ids("E"));
}

fn heads_map(dir: &KeyDirectory, heads: &[BTreeSet<Hash>]) -> BTreeMap<ReplicaId, BTreeSet<Hash>> {
    dir.replicas().cloned().zip(heads.iter().cloned()).collect()
}

#[test]
fn truncate_chain() {
    let f = DivergedPair::new();
    let mut s = f.store("ABC");
    let c = f.ids("C");
    let n = s.truncate_stable(&heads_map(&f.directory, &[c.clone(), c.clone(), c.clone()]), &f.directory);
    assert_eq!(n, 2);
    assert_eq!(s.ids(), f.ids("C"));
    assert!(s.resolves(&f.id('A')) && s.is_truncated(&f.id('B')));
    // Later references to truncated history still resolve.
    assert_eq!(s.insert_batch(f.verified("D")).unwrap().len(), 1);
    assert!(s.precedes(&f.id('A'), &f.id('D')));
    assert!(s.insert_batch(f.verified("B")).unwrap().is_empty());
}

#[test]
fn truncate_needs_every_replica() {
    let f = DivergedPair::new();
    let mut s = f.store("ABC");
    let c = f.ids("C");
    assert_eq!(s.truncate_stable(&heads_map(&f.directory, &[c.clone(), c.clone(), BTreeSet::new()]), &f.directory), 0);
    assert_eq!(s.truncate_stable(&heads_map(&f.directory, &[c.clone(), c.clone()]), &f.directory), 0);
    assert_eq!(s.len(), 3);
}

#[test]
fn truncate_keeps_concurrent_frontier() {
    // p has delivered C, q and r have delivered F: only A, B are stable and
    // only A precedes a stable message.
    let f = DivergedPair::new();
    let mut s = f.store("ABCFG");
    let n = s.truncate_stable(&heads_map(&f.directory, &[f.ids("C"), f.ids("F"), f.ids("G")]), &f.directory);
    assert_eq!(n, 1);
    assert_eq!(s.ids(), f.ids("BCFG"));
    assert_eq!(s.heads(), f.ids("CG"));
    assert_eq!(ids(&s.messages_since(&f.ids("B"))), f.ids("CFG"));
    assert_eq!(ids(&s.messages_since(&f.ids("A"))), f.ids("BCFG"));
}

#[test]
fn store_log_roundtrip() {
    let f = DivergedPair::new();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.log");
    {
        let mut s = MessageStore::open(&path, &f.directory).unwrap();
        s.insert_batch(f.verified("ABCDE")).unwrap();
        s.insert_batch(f.verified("JK")).unwrap();
    }
    let s = MessageStore::open(&path, &f.directory).unwrap();
    assert_eq!(s.ids(), f.ids("ABCDEJK"));
    assert_eq!(s.heads(), f.ids("EK"));
    assert_eq!(s.sender(&f.id('F')), None);
    assert_eq!(s.sender(&f.id('A')).unwrap().name(), "r");
}

#[test]
fn store_log_rejects_foreign_signatures() {
    let f = DivergedPair::new();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.log");
    MessageStore::open(&path, &f.directory).unwrap().insert_batch(f.verified("AB")).unwrap();
    let other = KeyDirectory::from_keys([&ReplicaKey::derive(99, "x")]).unwrap();
    assert!(matches!(MessageStore::open(&path, &other), Err(DagError::BadSignature { index: 0 })));
}

#[test]
fn messages_since_matches_naive_oracle_on_random_dags() {
    let keys: Vec<ReplicaKey> = (0..3).map(|i| ReplicaKey::derive(1, &format!("k{i}"))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for round in 0..30 {
        let all = random_dag(&mut rng, &keys, 40, 3);
        let mut s = MessageStore::new();
        s.insert_batch(all.iter().map(|m| VerifiedMessage::trusted(m.clone(), keys[0].id().clone()))).unwrap();
        let old: BTreeSet<Hash> = all.iter().filter(|_| rng.gen_bool(0.1)).map(|m| m.id()).collect();
        let known = naive_closure(&all, &old);
        let expected: BTreeSet<Hash> = all.iter().map(|m| m.id()).filter(|h| !known.contains(h)).collect();
        assert_eq!(ids(&s.messages_since(&old)), expected, "round {round}");
    }
}

use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn store_invariants(seed in any::<u64>(), n in 1usize..30, split in 0usize..30) {
        let keys: Vec<ReplicaKey> = (0..2).map(|i| ReplicaKey::derive(2, &format!("k{i}"))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = random_dag(&mut rng, &keys, n, 3);
        let split = split.min(n);
        let mut s = MessageStore::new();
        let v = |ms: &[MessageRef]| ms.iter().map(|m| VerifiedMessage::trusted(m.clone(), keys[0].id().clone())).collect::<Vec<_>>();
        s.insert_batch(v(&all[..split])).unwrap();
        s.insert_batch(v(&all[split..])).unwrap();
        let before = s.ids();
        prop_assert!(s.insert_batch(v(&all)).unwrap().is_empty());
        prop_assert_eq!(s.ids(), before);

        // predecessor closure
        for m in s.messages() {
            for h in m.hs() {
                prop_assert!(s.contains(h));
            }
        }
        // heads are exactly the messages without successors
        let referenced: BTreeSet<Hash> = all.iter().flat_map(|m| m.hs().iter().copied()).collect();
        let expected_heads: BTreeSet<Hash> = all.iter().map(|m| m.id()).filter(|h| !referenced.contains(h)).collect();
        prop_assert_eq!(s.heads(), expected_heads);

        prop_assert_eq!(ids(&s.messages_since(&BTreeSet::new())), s.ids());
        prop_assert!(s.messages_since(&s.heads()).is_empty());

        // topo_sort: permutation, respects predecessors, deterministic
        let mut shuffled = all.clone();
        shuffled.reverse();
        let order = topo_sort(&shuffled).unwrap();
        prop_assert_eq!(&order, &topo_sort(&all).unwrap());
        let pos: BTreeMap<Hash, usize> = order.iter().enumerate().map(|(i, m)| (m.id(), i)).collect();
        prop_assert_eq!(pos.len(), all.len());
        for m in &order {
            for p in s.pred_star(&m.id()).keys() {
                prop_assert!(pos[p] < pos[&m.id()]);
            }
        }
    }
}
