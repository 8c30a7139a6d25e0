//! Byzantine causal broadcast over a signed hash DAG, Byzantine Eventual
//! Consistency replication of a relational tuple store on top of it, and a
//! deterministic simulator with adversarial replicas.
//!
//! Layering, bottom up:
//!
//! * [`crypto`]: payload encoding, SHA-256, Ed25519 and the key directory.
//! * [`dag`]: the predecessor-closed set of delivered messages.
//! * [`bloom`]: filters summarising messages added since the last sync.
//! * [`sync`]: the broadcast engine and per-connection reconciliation.
//! * [`bec`]: the replicated tuple store with invariant safety checks.
//! * [`sim`]: the discrete-event simulator, adversaries and cost model.
//! * [`experiment`]: sweeps and verification matrices behind the CLI.

pub mod bec;
pub mod bloom;
pub mod codec;
pub mod crypto;
pub mod dag;
pub mod experiment;
pub mod fixtures;
pub mod sim;
pub mod sync;

pub use crypto::{Hash, KeyDirectory, ReplicaId, ReplicaKey, Signature};
pub use dag::{Message, MessageRef, MessageStore, StoreSnapshot, VerifiedMessage};
