use std::fmt;
use std::sync::Arc;

use crate::codec::{self, DecodeError, Reader};
use crate::crypto::{self, Hash, KeyDirectory, ReplicaId, ReplicaKey, Signature};

/// A broadcast message `(value, hs, sig)`: an application value, the hashes
/// of its predecessors, and a signature over both. The id is the hash of the
/// canonical payload encoding and is computed once at construction.
#[derive(Clone, PartialEq, Eq)]
pub struct Message {
    value: Vec<u8>,
    hs: Vec<Hash>,
    sig: Signature,
    id: Hash,
}

/// Messages are shared between replicas, connections and snapshots.
pub type MessageRef = Arc<Message>;

impl Message {
    /// Builds a message from raw parts. The signature is not checked.
    pub fn from_parts(value: Vec<u8>, hs: impl IntoIterator<Item = Hash>, sig: Signature) -> Self {
        let mut hs: Vec<Hash> = hs.into_iter().collect();
        hs.sort_unstable();
        hs.dedup();
        let id = crypto::hash(&crypto::encode_payload(&value, &hs));
        Message { value, hs, sig, id }
    }

    pub fn signed(key: &ReplicaKey, value: Vec<u8>, hs: impl IntoIterator<Item = Hash>) -> Self {
        let mut msg = Message::from_parts(value, hs, Signature(Vec::new()));
        msg.sig = crypto::sign(key, &msg.payload());
        msg
    }

    pub fn id(&self) -> Hash {
        self.id
    }

    pub fn value(&self) -> &[u8] {
        &self.value
    }

    /// Predecessor hashes, ascending and distinct.
    pub fn hs(&self) -> &[Hash] {
        &self.hs
    }

    pub fn sig(&self) -> &Signature {
        &self.sig
    }

    pub fn payload(&self) -> Vec<u8> {
        crypto::encode_payload(&self.value, &self.hs)
    }

    /// The directory member that signed this message, if any.
    pub fn verify(&self, directory: &KeyDirectory) -> Option<ReplicaId> {
        crypto::check(&self.payload(), &self.sig, directory)
    }

    /// Payload encoding followed by the length-prefixed signature.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.payload());
        codec::put_len_prefixed(out, &self.sig.0);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Message, DecodeError> {
        let version = r.u8()?;
        if version != 1 {
            return Err(DecodeError::Version(version));
        }
        let value = r.len_prefixed()?.to_vec();
        let n = r.count(32)?;
        let mut hs = Vec::with_capacity(n);
        for _ in 0..n {
            hs.push(r.hash()?);
        }
        if hs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::Invalid("predecessor hash order"));
        }
        let sig = Signature(r.len_prefixed()?.to_vec());
        Ok(Message::from_parts(value, hs, sig))
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(bytes);
        let m = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(m)
    }
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Message")
            .field("id", &self.id)
            .field("hs", &self.hs)
            .field("value_len", &self.value.len())
            .finish()
    }
}
