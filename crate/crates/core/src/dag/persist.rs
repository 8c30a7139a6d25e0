use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{DagError, Message};
use crate::codec::Reader;

/// Append-only log of delivered messages: each entry is a big-endian u32
/// byte length followed by the message encoding (payload then signature).
/// Entries are written in delivery order, so replaying the file in order
/// never hits a missing predecessor.
pub struct StoreLog {
    file: File,
}

impl StoreLog {
    pub fn open(path: &Path) -> Result<(StoreLog, Vec<Message>), DagError> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let msgs = decode_log(&buf)?;
        Ok((StoreLog { file }, msgs))
    }

    pub fn append<'a>(&mut self, msgs: impl IntoIterator<Item = &'a Message>) -> Result<(), DagError> {
        let mut w = BufWriter::new(&mut self.file);
        for m in msgs {
            let enc = m.encode();
            w.write_all(&(enc.len() as u32).to_be_bytes())?;
            w.write_all(&enc)?;
        }
        w.flush()?;
        drop(w);
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn decode_log(buf: &[u8]) -> Result<Vec<Message>, DagError> {
    let mut r = Reader::new(buf);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let index = out.len();
        let entry = r.len_prefixed().map_err(|source| DagError::Decode { index, source })?;
        out.push(Message::decode(entry).map_err(|source| DagError::Decode { index, source })?);
    }
    Ok(out)
}
