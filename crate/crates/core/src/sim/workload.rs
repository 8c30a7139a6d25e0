use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bec::{commit_transaction, Transaction, Triple, UpdateSet, Value};
use crate::dag::{Message, MessageRef};
use crate::sync::Replica;

use super::SimApp;

/// Schema for the append-only log workload.
pub const LOG_SCHEMA: &str = "relation log origin:str seq:int data:bytes\n";

/// Schema for the mixed workload.
pub const DEFAULT_SCHEMA: &str = "\
relation log origin:str seq:int data:bytes
relation owners name:str
relation accounts owner:str balance:int
relation transfers from:str to:str amount:int
relation users id:str name:str
invariant check transfers.amount > 0
invariant non-negative accounts.balance
invariant foreign-key transfers.from -> owners.name
invariant unique users.id hash-derived
invariant view log_count = count log
invariant view total_balance = sum accounts.balance
";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workload {
    /// One insert of a fixed-size payload per update.
    #[default]
    Log,
    /// Inserts, updates and deletes across all relations of the default
    /// schema.
    Mixed,
}

/// Attacks generated by a replica emitting unsafe updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnsafeKind {
    ForeignKeyTargetDelete,
    ChosenUnique,
    Subtraction,
    NegativeInsert,
    /// Deletes a tuple whose inserting message is not a predecessor.
    NonCausalDelete,
}

impl UnsafeKind {
    pub const ALL: [UnsafeKind; 5] = [
        UnsafeKind::ForeignKeyTargetDelete,
        UnsafeKind::ChosenUnique,
        UnsafeKind::Subtraction,
        UnsafeKind::NegativeInsert,
        UnsafeKind::NonCausalDelete,
    ];
}

fn log_insert(t: &mut Transaction, name: &str, seq: i64, rng: &mut ChaCha8Rng, bytes: usize) {
    let mut data = vec![0u8; bytes];
    rng.fill(&mut data[..]);
    t.insert("log", vec![name.into(), seq.into(), data.into()]);
}

/// Commits one safe transaction on a correct replica.
pub fn generate_safe(
    replica: &mut Replica<SimApp>,
    workload: Workload,
    seq: i64,
    payload_bytes: usize,
    rng: &mut ChaCha8Rng,
) -> MessageRef {
    let name = replica.id().name().to_owned();
    let mut t = Transaction::begin(&replica.app().state);
    match workload {
        Workload::Log => log_insert(&mut t, &name, seq, rng, payload_bytes),
        Workload::Mixed => {
            let owners = t.read("owners");
            let accounts = t.read("accounts");
            let mine: Vec<(crate::Hash, Vec<Value>)> =
                t.read("transfers").into_iter().filter(|(_, r)| r[0] == Value::Str(name.clone())).collect();
            match rng.gen_range(0..100) {
                0..=34 => log_insert(&mut t, &name, seq, rng, payload_bytes),
                35..=49 => {
                    t.insert("owners", vec![format!("{name}-{seq}").as_str().into()]);
                }
                50..=64 if !owners.is_empty() => {
                    let (_, o) = &owners[rng.gen_range(0..owners.len())];
                    t.insert("transfers", vec![o[0].clone(), name.as_str().into(), rng.gen_range(1..100).into()]);
                }
                65..=74 => {
                    t.insert("accounts", vec![format!("{name}-{seq}").as_str().into(), rng.gen_range(0..50).into()]);
                }
                75..=86 if !accounts.is_empty() => {
                    let (h, a) = accounts[rng.gen_range(0..accounts.len())].clone();
                    let raised = a[1].as_int().unwrap() + rng.gen_range(0..20);
                    t.update(h, "accounts", a.clone(), vec![a[0].clone(), raised.into()]);
                }
                87..=92 => {
                    t.insert("users", vec![Value::MessageHash, name.as_str().into()]);
                }
                93..=99 if !mine.is_empty() => {
                    let (h, row) = mine[rng.gen_range(0..mine.len())].clone();
                    t.delete(h, "transfers", row);
                }
                _ => log_insert(&mut t, &name, seq, rng, payload_bytes),
            }
        }
    }
    commit_transaction(replica, t).expect("generated transaction is safe").msg
}

/// Broadcasts an update a correct replica would refuse to commit. Falls
/// back to a fabricated target when the local state has none.
pub fn generate_unsafe(replica: &mut Replica<SimApp>, kind: UnsafeKind, seq: i64) -> MessageRef {
    let name = replica.id().name().to_owned();
    let state = &replica.app().state;
    let heads = replica.store().heads();
    let anchor = heads.iter().next().copied().unwrap_or(crate::Hash::ZERO);
    let first = |rel: &str| state.view().rows(rel).into_iter().next();
    let mut hs = heads.clone();
    let u = match kind {
        UnsafeKind::ForeignKeyTargetDelete => {
            let (h, row) = first("owners").unwrap_or((anchor, vec!["nobody".into()]));
            UpdateSet::new().delete(Triple { h, rel: "owners".into(), tuple: row })
        }
        UnsafeKind::ChosenUnique => UpdateSet::new().insert("users", vec!["chosen-id".into(), name.as_str().into()]),
        UnsafeKind::Subtraction => match first("accounts") {
            Some((h, row)) => {
                let lower = row[1].as_int().unwrap() - 1_000;
                UpdateSet::new()
                    .delete(Triple { h, rel: "accounts".into(), tuple: row.clone() })
                    .insert("accounts", vec![row[0].clone(), lower.into()])
            }
            None => UpdateSet::new().delete(Triple {
                h: anchor,
                rel: "accounts".into(),
                tuple: vec![name.as_str().into(), 0.into()],
            }),
        },
        UnsafeKind::NegativeInsert => {
            UpdateSet::new().insert("accounts", vec![name.as_str().into(), (-seq - 1).into()])
        }
        UnsafeKind::NonCausalDelete => {
            // Pick a tuple inserted by a head and leave that head out of hs.
            let target = state
                .view()
                .triples()
                .iter()
                .find(|t| heads.contains(&t.h) && t.rel != "owners")
                .map(|t| (**t).clone());
            match target {
                Some(t) => {
                    hs.remove(&t.h);
                    UpdateSet::new().delete(t)
                }
                None => UpdateSet::new().insert("users", vec!["chosen-id".into(), name.as_str().into()]),
            }
        }
    };
    let msg = Arc::new(Message::signed(replica.key(), u.encode(), hs));
    replica.broadcast_message(msg.clone());
    msg
}
