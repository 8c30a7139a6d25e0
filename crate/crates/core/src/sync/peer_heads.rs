use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::crypto::{Hash, KeyDirectory, ReplicaId};

/// Heads recorded at the end of the last completed reconciliation with each
/// peer. Optionally mirrored to a file of `<peer key hex> <hash hex>*` lines,
/// rewritten atomically on every update.
#[derive(Default, Debug)]
pub struct PeerHeadsStore {
    heads: BTreeMap<ReplicaId, BTreeSet<Hash>>,
    path: Option<PathBuf>,
}

impl PeerHeadsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(path: &Path, directory: &KeyDirectory) -> io::Result<Self> {
        let mut heads = BTreeMap::new();
        match fs::read_to_string(path) {
            Ok(text) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let mut parts = line.split_whitespace();
                    let key = parts.next().unwrap_or_default();
                    let peer = directory
                        .replicas()
                        .find(|r| hex::encode(r.public_key()) == key)
                        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("unknown peer {key}")))?;
                    let hs = parts
                        .map(|h| {
                            Hash::from_hex(h).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad hash"))
                        })
                        .collect::<io::Result<BTreeSet<Hash>>>()?;
                    heads.insert(peer.clone(), hs);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(PeerHeadsStore { heads, path: Some(path.to_owned()) })
    }

    /// The stored heads for `peer`, or the empty set before the first
    /// completed reconciliation.
    pub fn load(&self, peer: &ReplicaId) -> BTreeSet<Hash> {
        self.heads.get(peer).cloned().unwrap_or_default()
    }

    /// Overwrites the entry for `peer`.
    pub fn store(&mut self, peer: &ReplicaId, heads: BTreeSet<Hash>) -> io::Result<()> {
        self.heads.insert(peer.clone(), heads);
        self.persist()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ReplicaId, &BTreeSet<Hash>)> {
        self.heads.iter()
    }

    fn persist(&self) -> io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        for (peer, hs) in &self.heads {
            write!(f, "{}", hex::encode(peer.public_key()))?;
            for h in hs {
                write!(f, " {h}")?;
            }
            writeln!(f)?;
        }
        f.sync_all()?;
        fs::rename(tmp, path)
    }
}
