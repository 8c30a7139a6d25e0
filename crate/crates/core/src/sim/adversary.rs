use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bec::UpdateSet;
use crate::bloom::BloomFilter;
use crate::crypto::{Hash, ReplicaKey};
use crate::dag::{Message, MessageRef};
use crate::sync::{Replica, WireMessage};

use super::workload::{generate_safe, generate_unsafe, UnsafeKind, Workload};
use super::SimApp;

/// Behaviour of one replica. Faulty strategies only change what the replica
/// sends; they never touch another replica's state directly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Honest,
    /// Keeps a separate history per peer and broadcasts a different update
    /// into each.
    Equivocator,
    /// Advertises heads and predecessors that resolve to nothing.
    DanglingHasher,
    /// Sends a random bit array instead of its Bloom filter.
    BloomCorruptor,
    /// Drops each head from its opening message with probability 1/2.
    HeadsOmitter,
    /// Advertises and ships messages whose signature does not verify.
    SignatureForger,
    /// Broadcasts updates that are unsafe for the schema's invariants.
    UnsafeUpdater,
    /// Sends its opening message and nothing after it.
    Silent,
}

impl Strategy {
    pub const FAULTY: [Strategy; 7] = [
        Strategy::Equivocator,
        Strategy::DanglingHasher,
        Strategy::BloomCorruptor,
        Strategy::HeadsOmitter,
        Strategy::SignatureForger,
        Strategy::UnsafeUpdater,
        Strategy::Silent,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::Equivocator => "equivocator",
            Strategy::DanglingHasher => "dangling-hasher",
            Strategy::BloomCorruptor => "bloom-corruptor",
            Strategy::HeadsOmitter => "heads-omitter",
            Strategy::SignatureForger => "signature-forger",
            Strategy::UnsafeUpdater => "unsafe-updater",
            Strategy::Silent => "silent",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        std::iter::once(Strategy::Honest)
            .chain(Strategy::FAULTY)
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// A faulty replica: one or more internal replicas driven by the simulator,
/// whose outgoing wire messages are rewritten by the strategy.
pub struct Adversary {
    pub strategy: Strategy,
    /// Keyed by peer index for an equivocator, a single entry otherwise.
    views: BTreeMap<usize, Replica<SimApp>>,
    forged: Vec<MessageRef>,
    unsafe_next: usize,
    rng: ChaCha8Rng,
}

const SHARED_VIEW: usize = usize::MAX;

impl Adversary {
    pub(crate) fn new(
        strategy: Strategy,
        make: &mut dyn FnMut() -> Replica<SimApp>,
        peers: &[usize],
        rng: ChaCha8Rng,
    ) -> Self {
        let views = if strategy == Strategy::Equivocator {
            peers.iter().map(|&p| (p, make())).collect()
        } else {
            BTreeMap::from([(SHARED_VIEW, make())])
        };
        Adversary { strategy, views, forged: Vec::new(), unsafe_next: 0, rng }
    }

    pub fn replica_for(&mut self, peer: usize) -> &mut Replica<SimApp> {
        let key = if self.strategy == Strategy::Equivocator { peer } else { SHARED_VIEW };
        self.views.get_mut(&key).expect("peer outside the topology")
    }

    pub fn views(&self) -> impl Iterator<Item = &Replica<SimApp>> {
        self.views.values()
    }

    /// Produces this replica's next update(s) and returns every signed
    /// message it created.
    pub(crate) fn generate(
        &mut self,
        workload: Workload,
        seq: i64,
        payload_bytes: usize,
        kind: Option<UnsafeKind>,
    ) -> Vec<MessageRef> {
        let rng = &mut self.rng;
        match self.strategy {
            Strategy::Equivocator => self
                .views
                .iter_mut()
                .map(|(peer, r)| {
                    let mut data = vec![0u8; payload_bytes];
                    rng.fill(&mut data[..]);
                    let name = r.id().name().to_owned();
                    let u = UpdateSet::new()
                        .insert("log", vec![format!("{name}->r{peer}").as_str().into(), seq.into(), data.into()]);
                    r.broadcast(u.encode()).msg
                })
                .collect(),
            Strategy::UnsafeUpdater => {
                let kind = kind.unwrap_or_else(|| {
                    self.unsafe_next += 1;
                    UnsafeKind::ALL[(self.unsafe_next - 1) % UnsafeKind::ALL.len()]
                });
                let r = self.views.get_mut(&SHARED_VIEW).unwrap();
                vec![generate_unsafe(r, kind, seq)]
            }
            _ => {
                let r = self.views.get_mut(&SHARED_VIEW).unwrap();
                let mut out = vec![generate_safe(r, workload, seq, payload_bytes, rng)];
                match self.strategy {
                    Strategy::DanglingHasher => {
                        let dangling = Hash(rng.gen());
                        let mut hs = r.store().heads();
                        hs.insert(dangling);
                        let m = Arc::new(Message::signed(r.key(), UpdateSet::new().encode(), hs));
                        self.forged.push(m.clone());
                        out.push(m);
                    }
                    Strategy::SignatureForger => {
                        let outsider = ReplicaKey::derive(rng.gen(), r.id().name());
                        let m = Arc::new(Message::signed(&outsider, UpdateSet::new().encode(), r.store().heads()));
                        self.forged.push(m.clone());
                        out.push(m);
                    }
                    _ => {}
                }
                out
            }
        }
    }

    /// Rewrites one outgoing wire message; `None` drops it.
    pub(crate) fn shape(&mut self, msg: WireMessage, opening: bool) -> Option<WireMessage> {
        let rng = &mut self.rng;
        match (self.strategy, msg) {
            (Strategy::Silent, msg) => opening.then_some(msg),
            (Strategy::DanglingHasher | Strategy::SignatureForger, WireMessage::Heads { mut hs }) => {
                if self.strategy == Strategy::DanglingHasher {
                    hs.insert(Hash(rng.gen()));
                }
                hs.extend(self.forged.iter().map(|m| m.id()));
                Some(WireMessage::Heads { hs })
            }
            (
                Strategy::DanglingHasher | Strategy::SignatureForger,
                WireMessage::HeadsV2 { mut hs, old_heads, filter },
            ) => {
                if self.strategy == Strategy::DanglingHasher {
                    hs.insert(Hash(rng.gen()));
                }
                hs.extend(self.forged.iter().map(|m| m.id()));
                Some(WireMessage::HeadsV2 { hs, old_heads, filter })
            }
            (Strategy::DanglingHasher | Strategy::SignatureForger, WireMessage::Msgs { msgs }) => {
                Some(WireMessage::msgs(msgs.into_iter().chain(self.forged.iter().cloned())))
            }
            (Strategy::BloomCorruptor, WireMessage::HeadsV2 { hs, old_heads, filter }) => {
                let mut bits = vec![0u8; filter.encode().len().max(1)];
                rng.fill(&mut bits[..]);
                let k = rng.gen_range(1..=16);
                Some(WireMessage::HeadsV2 { hs, old_heads, filter: BloomFilter::from_bits(bits, k) })
            }
            (Strategy::HeadsOmitter, WireMessage::Heads { hs }) => {
                Some(WireMessage::Heads { hs: hs.into_iter().filter(|_| rng.gen_bool(0.5)).collect() })
            }
            (Strategy::HeadsOmitter, WireMessage::HeadsV2 { hs, old_heads, filter }) => Some(WireMessage::HeadsV2 {
                hs: hs.into_iter().filter(|_| rng.gen_bool(0.5)).collect(),
                old_heads,
                filter,
            }),
            (_, msg) => Some(msg),
        }
    }
}
