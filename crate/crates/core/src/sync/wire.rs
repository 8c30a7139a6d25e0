use std::collections::BTreeSet;
use std::sync::Arc;

use crate::bloom::BloomFilter;
use crate::codec::{self, DecodeError, Reader};
use crate::crypto::Hash;
use crate::dag::{Message, MessageRef};

const TAG_HEADS: u8 = 1;
const TAG_HEADS_V2: u8 = 2;
const TAG_NEEDS: u8 = 3;
const TAG_MSGS: u8 = 4;

/// Requests and responses exchanged on a reconciliation connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WireMessage {
    Heads {
        hs: BTreeSet<Hash>,
    },
    HeadsV2 {
        hs: BTreeSet<Hash>,
        old_heads: BTreeSet<Hash>,
        filter: BloomFilter,
    },
    Needs {
        hashes: BTreeSet<Hash>,
    },
    /// Messages ordered by id, without duplicates.
    Msgs {
        msgs: Vec<MessageRef>,
    },
}

impl WireMessage {
    pub fn msgs(msgs: impl IntoIterator<Item = MessageRef>) -> Self {
        let mut v: Vec<MessageRef> = msgs.into_iter().collect();
        v.sort_by_key(|m| m.id());
        v.dedup_by_key(|m| m.id());
        WireMessage::Msgs { msgs: v }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Heads { .. } => "heads",
            WireMessage::HeadsV2 { .. } => "heads-v2",
            WireMessage::Needs { .. } => "needs",
            WireMessage::Msgs { .. } => "msgs",
        }
    }

    /// One tag byte, then count-prefixed hash lists, the filter encoding, or
    /// a count-prefixed list of length-prefixed message encodings.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            WireMessage::Heads { hs } => {
                out.push(TAG_HEADS);
                codec::put_hashes(&mut out, hs.iter());
            }
            WireMessage::HeadsV2 { hs, old_heads, filter } => {
                out.push(TAG_HEADS_V2);
                codec::put_hashes(&mut out, hs.iter());
                codec::put_hashes(&mut out, old_heads.iter());
                filter.encode_into(&mut out);
            }
            WireMessage::Needs { hashes } => {
                out.push(TAG_NEEDS);
                codec::put_hashes(&mut out, hashes.iter());
            }
            WireMessage::Msgs { msgs } => {
                out.push(TAG_MSGS);
                codec::put_u32(&mut out, msgs.len() as u32);
                for m in msgs {
                    let enc = m.encode();
                    codec::put_len_prefixed(&mut out, &enc);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            TAG_HEADS => WireMessage::Heads { hs: hash_set(&mut r)? },
            TAG_HEADS_V2 => WireMessage::HeadsV2 {
                hs: hash_set(&mut r)?,
                old_heads: hash_set(&mut r)?,
                filter: BloomFilter::decode_from(&mut r)?,
            },
            TAG_NEEDS => WireMessage::Needs { hashes: hash_set(&mut r)? },
            TAG_MSGS => {
                let n = r.count(4)?;
                let mut msgs = Vec::with_capacity(n);
                for _ in 0..n {
                    msgs.push(Arc::new(Message::decode(r.len_prefixed()?)?));
                }
                WireMessage::msgs(msgs)
            }
            t => return Err(DecodeError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(msg)
    }
}

fn hash_set(r: &mut Reader<'_>) -> Result<BTreeSet<Hash>, DecodeError> {
    let n = r.count(32)?;
    (0..n).map(|_| r.hash()).collect()
}
