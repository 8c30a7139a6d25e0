use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::codec::{self, DecodeError, Reader};
use crate::crypto::Hash;

const TAG_INT: u8 = 0;
const TAG_STR: u8 = 1;
const TAG_BYTES: u8 = 2;
const TAG_MESSAGE_HASH: u8 = 3;

/// A typed attribute value.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Int(i64),
    Str(String),
    Bytes(Arc<[u8]>),
    /// Placeholder in an insert, replaced by the hex hash of the message
    /// carrying it when the insert is applied.
    MessageHash,
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    fn resolve(&self, h: &Hash) -> Value {
        match self {
            Value::MessageHash => Value::Str(h.to_hex()),
            v => v.clone(),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Bytes(b) if b.len() > 8 => write!(f, "0x{}..({} bytes)", hex::encode(&b[..8]), b.len()),
            Value::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
            Value::MessageHash => f.write_str("$hash"),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v.into())
    }
}

pub type Tuple = Vec<Value>;

/// An element of the replicated state: `tuple` in relation `rel`, inserted
/// by the message with id `h`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub h: Hash,
    pub rel: String,
    pub tuple: Tuple,
}

/// The inserts and deletes of one transaction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpdateSet {
    pub ins: BTreeSet<(String, Tuple)>,
    pub del: BTreeSet<Triple>,
}

impl UpdateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(mut self, rel: &str, tuple: Tuple) -> Self {
        self.ins.insert((rel.to_owned(), tuple));
        self
    }

    pub fn delete(mut self, t: Triple) -> Self {
        self.del.insert(t);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.ins.is_empty() && self.del.is_empty()
    }

    /// The triples this update adds when carried by message `h`.
    pub fn inserted_triples(&self, h: &Hash) -> impl Iterator<Item = Triple> + '_ {
        let h = *h;
        self.ins.iter().map(move |(rel, tuple)| Triple {
            h,
            rel: rel.clone(),
            tuple: tuple.iter().map(|v| v.resolve(&h)).collect(),
        })
    }

    /// Count-prefixed inserts `(relation, tuple)`, then count-prefixed
    /// deletes `(hash, relation, tuple)`, each in ascending order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        codec::put_u32(&mut out, self.ins.len() as u32);
        for (rel, tuple) in &self.ins {
            codec::put_len_prefixed(&mut out, rel.as_bytes());
            put_tuple(&mut out, tuple);
        }
        codec::put_u32(&mut out, self.del.len() as u32);
        for t in &self.del {
            out.extend_from_slice(t.h.as_bytes());
            codec::put_len_prefixed(&mut out, t.rel.as_bytes());
            put_tuple(&mut out, &t.tuple);
        }
        out
    }

    /// Inverse of [`encode`](Self::encode). Out-of-order or repeated
    /// entries, and placeholders inside deletes, are rejected.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let mut u = UpdateSet::new();
        let n = r.count(8)?;
        let mut last: Option<(String, Tuple)> = None;
        for _ in 0..n {
            let entry = (string(&mut r)?, tuple(&mut r)?);
            if last.as_ref().is_some_and(|l| l >= &entry) {
                return Err(DecodeError::Invalid("insert order"));
            }
            last = Some(entry.clone());
            u.ins.insert(entry);
        }
        let n = r.count(40)?;
        let mut last: Option<Triple> = None;
        for _ in 0..n {
            let t = Triple { h: r.hash()?, rel: string(&mut r)?, tuple: tuple(&mut r)? };
            if t.tuple.contains(&Value::MessageHash) {
                return Err(DecodeError::Invalid("placeholder in delete"));
            }
            if last.as_ref().is_some_and(|l| l >= &t) {
                return Err(DecodeError::Invalid("delete order"));
            }
            last = Some(t.clone());
            u.del.insert(t);
        }
        r.finish()?;
        Ok(u)
    }
}

fn put_tuple(out: &mut Vec<u8>, tuple: &Tuple) {
    codec::put_u32(out, tuple.len() as u32);
    for v in tuple {
        match v {
            Value::Int(i) => {
                out.push(TAG_INT);
                out.extend_from_slice(&i.to_be_bytes());
            }
            Value::Str(s) => {
                out.push(TAG_STR);
                codec::put_len_prefixed(out, s.as_bytes());
            }
            Value::Bytes(b) => {
                out.push(TAG_BYTES);
                codec::put_len_prefixed(out, &b[..]);
            }
            Value::MessageHash => out.push(TAG_MESSAGE_HASH),
        }
    }
}

fn string(r: &mut Reader<'_>) -> Result<String, DecodeError> {
    String::from_utf8(r.len_prefixed()?.to_vec()).map_err(|_| DecodeError::Invalid("utf-8"))
}

fn tuple(r: &mut Reader<'_>) -> Result<Tuple, DecodeError> {
    let n = r.count(1)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(match r.u8()? {
            TAG_INT => Value::Int(r.i64()?),
            TAG_STR => Value::Str(string(r)?),
            TAG_BYTES => Value::Bytes(r.len_prefixed()?.into()),
            TAG_MESSAGE_HASH => Value::MessageHash,
            t => return Err(DecodeError::UnknownTag(t)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use proptest::prelude::*;

    fn sample() -> UpdateSet {
        UpdateSet::new()
            .insert("accounts", vec!["alice".into(), 5.into()])
            .insert("users", vec![Value::MessageHash, vec![1, 2, 3].into()])
            .delete(Triple { h: hash(b"m"), rel: "accounts".into(), tuple: vec!["alice".into(), 7.into()] })
    }

    #[test]
    fn roundtrip() {
        let u = sample();
        assert_eq!(UpdateSet::decode(&u.encode()).unwrap(), u);
        let empty = UpdateSet::new();
        assert_eq!(empty.encode(), vec![0; 8]);
        assert_eq!(UpdateSet::decode(&[0; 8]).unwrap(), empty);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let enc = sample().encode();
        for len in 0..enc.len() {
            assert!(UpdateSet::decode(&enc[..len]).is_err());
        }
        assert!(UpdateSet::decode(b"not an update").is_err());
    }

    #[test]
    fn rejects_non_canonical_order() {
        let a = UpdateSet::new().insert("r", vec![1.into()]).encode();
        let b = UpdateSet::new().insert("r", vec![2.into()]).encode();
        // Two inserts, second smaller than the first.
        let mut bytes = vec![0, 0, 0, 2];
        bytes.extend_from_slice(&b[4..b.len() - 4]);
        bytes.extend_from_slice(&a[4..a.len() - 4]);
        bytes.extend_from_slice(&[0; 4]);
        assert_eq!(UpdateSet::decode(&bytes), Err(DecodeError::Invalid("insert order")));
    }

    #[test]
    fn placeholder_resolves_to_message_hash() {
        let h = hash(b"carrier");
        let t: Vec<Triple> = sample().inserted_triples(&h).collect();
        let users = t.iter().find(|t| t.rel == "users").unwrap();
        assert_eq!(users.tuple[0], Value::Str(h.to_hex()));
        assert!(t.iter().all(|t| t.h == h));
    }

    fn value() -> impl Strategy<Value = Value> {
        prop_oneof![
            any::<i64>().prop_map(Value::Int),
            "[a-z]{0,6}".prop_map(Value::Str),
            proptest::collection::vec(any::<u8>(), 0..6).prop_map(Value::from),
        ]
    }

    proptest! {
        #[test]
        fn arbitrary_roundtrip(ins in proptest::collection::btree_set(("[a-c]", proptest::collection::vec(value(), 0..4)), 0..5),
                               del in proptest::collection::btree_set((any::<[u8; 32]>(), "[a-c]", proptest::collection::vec(value(), 0..4)), 0..5)) {
            let u = UpdateSet {
                ins,
                del: del.into_iter().map(|(h, rel, tuple)| Triple { h: Hash(h), rel, tuple }).collect(),
            };
            prop_assert_eq!(UpdateSet::decode(&u.encode()).unwrap(), u);
        }

        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..120)) {
            let _ = UpdateSet::decode(&bytes);
        }
    }
}
