//! Canonical payload encoding, SHA-256 hashing and Ed25519 signatures over a
//! static key directory.
//!
//! Every replica in a run knows the verification key of every other replica.
//! A signature is accepted iff it verifies against one of those keys; the
//! matching entry is the message's sender.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Version byte at the start of every payload encoding.
const PAYLOAD_FORMAT: u8 = 1;

/// Length of the header produced for an empty value with no predecessors.
pub const PAYLOAD_HEADER_LEN: usize = 9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("line {line}: expected `<name> <hex key>`")]
    MalformedLine { line: usize },
    #[error("line {line}: invalid key: {reason}")]
    InvalidKey { line: usize, reason: String },
    #[error("duplicate replica name `{0}`")]
    DuplicateName(String),
    #[error("duplicate public key for `{0}`")]
    DuplicateKey(String),
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash(pub [u8; 32]);

impl Hash {
    pub const ZERO: Hash = Hash([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Hash> {
        let bytes = hex::decode(s).ok()?;
        Some(Hash(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", &self.to_hex()[..10])
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 of `bytes`.
pub fn hash(bytes: &[u8]) -> Hash {
    Hash(Sha256::digest(bytes).into())
}

/// Identity of a replica: its Ed25519 public key plus a label for logs.
///
/// Equality, ordering and hashing consider the key only.
#[derive(Clone)]
pub struct ReplicaId {
    key: [u8; 32],
    name: Arc<str>,
}

impl ReplicaId {
    pub fn new(key: [u8; 32], name: &str) -> Self {
        ReplicaId { key, name: name.into() }
    }

    pub fn public_key(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl PartialEq for ReplicaId {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for ReplicaId {}

impl PartialOrd for ReplicaId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReplicaId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

impl std::hash::Hash for ReplicaId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

impl fmt::Debug for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Raw signature bytes. Bytes received from the network are kept verbatim,
/// so a value of this type may be malformed.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown = self.0.len().min(6);
        write!(f, "Sig({}..)", hex::encode(&self.0[..shown]))
    }
}

/// A replica's private signing key together with its public identity.
#[derive(Clone)]
pub struct ReplicaKey {
    signing: SigningKey,
    id: ReplicaId,
}

impl ReplicaKey {
    pub fn from_secret(secret: [u8; 32], name: &str) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let id = ReplicaId::new(signing.verifying_key().to_bytes(), name);
        ReplicaKey { signing, id }
    }

    pub fn from_secret_hex(hex_secret: &str, name: &str) -> Option<Self> {
        let bytes: [u8; 32] = hex::decode(hex_secret.trim()).ok()?.try_into().ok()?;
        Some(Self::from_secret(bytes, name))
    }

    /// Deterministic key derived from a run seed and the replica name.
    pub fn derive(seed: u64, name: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"bec-replica-key");
        h.update(seed.to_be_bytes());
        h.update(name.as_bytes());
        Self::from_secret(h.finalize().into(), name)
    }

    pub fn id(&self) -> &ReplicaId {
        &self.id
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }
}

impl fmt::Debug for ReplicaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReplicaKey").field("id", &self.id).finish_non_exhaustive()
    }
}

/// Deterministic Ed25519 signature over `payload`.
pub fn sign(key: &ReplicaKey, payload: &[u8]) -> Signature {
    Signature(key.signing.sign(payload).to_bytes().to_vec())
}

/// The set of replicas participating in a run. Immutable once built.
#[derive(Clone, Default)]
pub struct KeyDirectory {
    entries: BTreeMap<ReplicaId, VerifyingKey>,
    memo: Option<Arc<Mutex<VerifyMemo>>>,
}

type VerifyMemo = HashMap<(Hash, [u8; 64]), Option<ReplicaId>>;

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a ReplicaKey>) -> Result<Self, CryptoError> {
        let mut dir = KeyDirectory::new();
        for k in keys {
            dir.insert(k.id.clone(), k.signing.verifying_key())?;
        }
        Ok(dir)
    }

    fn insert(&mut self, id: ReplicaId, key: VerifyingKey) -> Result<(), CryptoError> {
        if self.entries.keys().any(|e| e.name() == id.name()) {
            return Err(CryptoError::DuplicateName(id.name().to_owned()));
        }
        if self.entries.contains_key(&id) {
            return Err(CryptoError::DuplicateKey(id.name().to_owned()));
        }
        self.entries.insert(id, key);
        Ok(())
    }

    /// Parses the line-oriented `name hex_public_key` format. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, CryptoError> {
        let mut dir = KeyDirectory::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(key_hex), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(CryptoError::MalformedLine { line: line_no });
            };
            let bytes: [u8; 32] = hex::decode(key_hex)
                .map_err(|e| CryptoError::InvalidKey { line: line_no, reason: e.to_string() })?
                .try_into()
                .map_err(|_| CryptoError::InvalidKey { line: line_no, reason: "expected 32 bytes".into() })?;
            let vk = VerifyingKey::from_bytes(&bytes)
                .map_err(|e| CryptoError::InvalidKey { line: line_no, reason: e.to_string() })?;
            dir.insert(ReplicaId::new(bytes, name), vk)?;
        }
        Ok(dir)
    }

    pub fn to_text(&self) -> String {
        self.entries.keys().map(|id| format!("{} {}\n", id.name(), hex::encode(id.public_key()))).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &ReplicaId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn replicas(&self) -> impl Iterator<Item = &ReplicaId> {
        self.entries.keys()
    }

    pub fn by_name(&self, name: &str) -> Option<&ReplicaId> {
        self.entries.keys().find(|id| id.name() == name)
    }

    /// Records `id` as the signer of a signature it just produced, so a memo
    /// lookup replaces the key scan. No effect without a memo.
    pub fn note_signed(&self, payload: &[u8], sig: &Signature, id: &ReplicaId) {
        let (Some(memo), Ok(raw)) = (&self.memo, <[u8; 64]>::try_from(sig.0.as_slice())) else {
            return;
        };
        debug_assert!(self.entries.contains_key(id));
        memo.lock().unwrap().insert((hash(payload), raw), Some(id.clone()));
    }

    /// Remembers the outcome of every [`check`] against this directory and
    /// its clones. Memory grows with the number of distinct signatures seen.
    pub fn with_memo(mut self) -> Self {
        self.memo = Some(Arc::default());
        self
    }
}

impl fmt::Debug for KeyDirectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

/// Returns the directory member whose key verifies `sig` over `payload`.
pub fn check(payload: &[u8], sig: &Signature, directory: &KeyDirectory) -> Option<ReplicaId> {
    let raw: [u8; 64] = sig.0.as_slice().try_into().ok()?;
    let find = || {
        let sig = ed25519_dalek::Signature::from_bytes(&raw);
        directory.entries.iter().find(|(_, vk)| vk.verify(payload, &sig).is_ok()).map(|(id, _)| id.clone())
    };
    let Some(memo) = &directory.memo else {
        return find();
    };
    let key = (hash(payload), raw);
    if let Some(hit) = memo.lock().unwrap().get(&key) {
        return hit.clone();
    }
    let found = find();
    memo.lock().unwrap().insert(key, found.clone());
    found
}

/// Canonical bytes signed and hashed for a message `(value, hs)`:
/// format byte, big-endian u32 value length, value, big-endian u32 hash
/// count, then the distinct hashes in ascending byte order.
pub fn encode_payload<'a>(value: &[u8], hs: impl IntoIterator<Item = &'a Hash>) -> Vec<u8> {
    let mut hashes: Vec<&Hash> = hs.into_iter().collect();
    hashes.sort_unstable();
    hashes.dedup();
    let mut out = Vec::with_capacity(PAYLOAD_HEADER_LEN + value.len() + 32 * hashes.len());
    out.push(PAYLOAD_FORMAT);
    out.extend_from_slice(&(value.len() as u32).to_be_bytes());
    out.extend_from_slice(value);
    out.extend_from_slice(&(hashes.len() as u32).to_be_bytes());
    for h in hashes {
        out.extend_from_slice(&h.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<ReplicaKey> {
        (0..n).map(|i| ReplicaKey::derive(7, &format!("r{i}"))).collect()
    }

    #[test]
    fn sha256_vectors() {
        assert_eq!(hash(b"").to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(hash(b"abc").to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(hash(b"xyz"), hash(b"xyz"));
    }

    #[test]
    fn empty_payload_is_header_only() {
        let enc = encode_payload(&[], []);
        assert_eq!(enc.len(), PAYLOAD_HEADER_LEN);
        assert_eq!(enc, encode_payload(&[], []));
    }

    #[test]
    fn single_byte_values_encode_distinctly() {
        let all: std::collections::BTreeSet<Vec<u8>> = (0..=255u8).map(|b| encode_payload(&[b], [])).collect();
        assert_eq!(all.len(), 256);
        let hashes: std::collections::BTreeSet<Hash> = all.iter().map(|e| hash(e)).collect();
        assert_eq!(hashes.len(), 256);
    }

    #[test]
    fn value_and_hash_boundary_is_unambiguous() {
        let h = hash(b"a");
        let mut shifted = vec![0u8; 4];
        shifted.extend_from_slice(&h.0);
        assert_ne!(encode_payload(&shifted, []), encode_payload(&[], [&h]));
    }

    #[test]
    fn sign_and_check() {
        let ks = keys(3);
        let dir = KeyDirectory::from_keys(&ks).unwrap();
        let payload = encode_payload(b"hello", [&hash(b"p")]);
        let sig = sign(&ks[1], &payload);
        assert_eq!(check(&payload, &sig, &dir), Some(ks[1].id().clone()));
        assert_ne!(check(&payload, &sig, &dir), Some(ks[0].id().clone()));
    }

    #[test]
    fn signer_outside_directory_is_rejected() {
        let ks = keys(3);
        let dir = KeyDirectory::from_keys(&ks[..2]).unwrap();
        let sig = sign(&ks[2], b"payload");
        assert_eq!(check(b"payload", &sig, &dir), None);
    }

    #[test]
    fn any_flipped_payload_byte_fails() {
        let ks = keys(1);
        let dir = KeyDirectory::from_keys(&ks).unwrap();
        let payload = encode_payload(b"some value", [&hash(b"x"), &hash(b"y")]);
        let sig = sign(&ks[0], &payload);
        for i in 0..payload.len() {
            let mut bad = payload.clone();
            bad[i] ^= 0x01;
            assert_eq!(check(&bad, &sig, &dir), None, "byte {i}");
        }
    }

    #[test]
    fn memo_answers_like_a_fresh_check() {
        let ks = keys(3);
        let plain = KeyDirectory::from_keys(&ks[..2]).unwrap();
        let memo = plain.clone().with_memo();
        let payload = encode_payload(b"v", []);
        let mut bad = payload.clone();
        bad[0] ^= 1;
        let cases =
            [(&payload, sign(&ks[1], &payload)), (&bad, sign(&ks[1], &payload)), (&payload, sign(&ks[2], &payload))];
        memo.note_signed(&payload, &cases[0].1, ks[1].id());
        for _ in 0..2 {
            for (p, sig) in &cases {
                assert_eq!(check(p, sig, &memo.clone()), check(p, sig, &plain));
            }
        }
    }

    #[test]
    fn truncated_signatures_fail() {
        let ks = keys(2);
        let dir = KeyDirectory::from_keys(&ks).unwrap();
        let sig = sign(&ks[0], b"m");
        for len in 0..sig.0.len() {
            assert_eq!(check(b"m", &Signature(sig.0[..len].to_vec()), &dir), None);
        }
    }

    #[test]
    fn directory_text_roundtrip() {
        let ks = keys(4);
        let dir = KeyDirectory::from_keys(&ks).unwrap();
        let parsed = KeyDirectory::parse(&dir.to_text()).unwrap();
        assert_eq!(parsed.len(), 4);
        for k in &ks {
            assert!(parsed.contains(k.id()));
            assert_eq!(parsed.by_name(k.id().name()), Some(k.id()));
        }
        let sig = sign(&ks[3], b"z");
        assert_eq!(check(b"z", &sig, &parsed).unwrap().name(), "r3");
    }

    #[test]
    fn directory_parse_errors() {
        assert_eq!(KeyDirectory::parse("alice").unwrap_err(), CryptoError::MalformedLine { line: 1 });
        assert!(matches!(KeyDirectory::parse("# c\n\nalice zz").unwrap_err(), CryptoError::InvalidKey { line: 3, .. }));
        let k = keys(1).remove(0);
        let line = format!("a {}\n", hex::encode(k.id().public_key()));
        let twice = format!("{line}{}", line.replacen("a ", "b ", 1));
        assert!(matches!(KeyDirectory::parse(&twice), Err(CryptoError::DuplicateKey(_))));
    }

    #[test]
    fn secret_hex_fixture_roundtrip() {
        let k = ReplicaKey::derive(1, "p");
        let again = ReplicaKey::from_secret_hex(&k.secret_hex(), "p").unwrap();
        assert_eq!(again.id(), k.id());
        assert!(ReplicaKey::from_secret_hex("abcd", "p").is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encoding_ignores_hash_order(value in proptest::collection::vec(any::<u8>(), 0..64),
                                           seeds in proptest::collection::vec(any::<u64>(), 0..8)) {
                let hs: Vec<Hash> = seeds.iter().map(|s| hash(&s.to_le_bytes())).collect();
                let mut rev = hs.clone();
                rev.reverse();
                prop_assert_eq!(encode_payload(&value, &hs), encode_payload(&value, &rev));
            }

            #[test]
            fn distinct_payloads_hash_distinctly(a in proptest::collection::vec(any::<u8>(), 0..32),
                                                 b in proptest::collection::vec(any::<u8>(), 0..32)) {
                prop_assume!(a != b);
                prop_assert_ne!(hash(&encode_payload(&a, [])), hash(&encode_payload(&b, [])));
            }
        }
    }
}
