//! Append-only JSONL dataset store.
//!
//! Every line is one [`TxRecord`]. A hash may appear at most once as a pending
//! observation and at most once as a confirmation; later duplicates are
//! skipped. Writers only ever append whole lines, so a concurrent reader sees
//! some prefix of the file; a trailing line without its newline is an append
//! still in flight and is ignored by readers.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::warn;

use crate::tx::{TxError, TxHash, TxRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{path} ends in an incomplete line; repair the file before appending")]
    TornTail { path: PathBuf },
}

/// Parses a single store line.
pub fn parse_line(line: &str) -> Result<TxRecord, String> {
    let record: TxRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    match record.validate() {
        // Skewed records are kept on disk so they can be inspected; the join
        // quarantines them.
        Ok(()) | Err(TxError::ClockSkew { .. }) => Ok(record),
        Err(e) => Err(e.to_string()),
    }
}

/// Outcome of an [`DatasetStore::append`] call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppendSummary {
    pub written: usize,
    pub duplicates: usize,
    /// Records refused because they violate a structural invariant.
    pub rejected: Vec<(TxHash, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    hash: TxHash,
    confirmed: bool,
}

/// Single-writer handle on a store file.
#[derive(Debug)]
pub struct DatasetStore {
    path: PathBuf,
    file: File,
    index: HashMap<Key, u64>,
    len: u64,
    last_block_seen: Option<u64>,
}

impl DatasetStore {
    /// Opens (creating if needed) the store and indexes its contents.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
            return Err(StoreError::TornTail { path });
        }

        let mut store = Self { path, file, index: HashMap::new(), len: 0, last_block_seen: None };
        let mut offset = 0u64;
        for (i, raw) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
            let text = std::str::from_utf8(raw)
                .map_err(|e| StoreError::Malformed { line: i + 1, reason: e.to_string() })?;
            let text = text.trim_end();
            if !text.is_empty() {
                let record = parse_line(text).map_err(|reason| StoreError::Malformed { line: i + 1, reason })?;
                store.note(&record, offset);
            }
            offset += raw.len() as u64;
        }
        store.len = offset;
        Ok(store)
    }

    fn note(&mut self, record: &TxRecord, offset: u64) -> bool {
        let key = Key { hash: record.tx_hash, confirmed: record.is_confirmed() };
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, offset);
        if let Some(b) = record.block_number {
            self.last_block_seen = Some(self.last_block_seen.map_or(b, |l| l.max(b)));
        }
        true
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Highest block number of any stored confirmation.
    pub fn last_block_seen(&self) -> Option<u64> {
        self.last_block_seen
    }

    /// Byte length of the file as written through this handle.
    pub fn byte_len(&self) -> u64 {
        self.len
    }

    pub fn contains_confirmed(&self, hash: &TxHash) -> bool {
        self.index.contains_key(&Key { hash: *hash, confirmed: true })
    }

    pub fn contains_pending(&self, hash: &TxHash) -> bool {
        self.index.contains_key(&Key { hash: *hash, confirmed: false })
    }

    /// Byte offset of a stored line.
    pub fn offset_of(&self, hash: &TxHash, confirmed: bool) -> Option<u64> {
        self.index.get(&Key { hash: *hash, confirmed }).copied()
    }

    /// Appends records, skipping duplicates and refusing invalid records.
    /// Everything accepted by one call is written with a single `write_all`.
    pub fn append(&mut self, records: &[TxRecord]) -> Result<AppendSummary, StoreError> {
        let mut summary = AppendSummary::default();
        let mut buf = Vec::new();
        for record in records {
            match record.validate() {
                Ok(()) | Err(TxError::ClockSkew { .. }) => {}
                Err(e) => {
                    summary.rejected.push((record.tx_hash, e.to_string()));
                    continue;
                }
            }
            let offset = self.len + buf.len() as u64;
            if !self.note(record, offset) {
                summary.duplicates += 1;
                continue;
            }
            serde_json::to_writer(&mut buf, record).expect("records always serialize");
            buf.push(b'\n');
            summary.written += 1;
        }
        if !buf.is_empty() {
            self.file
                .write_all(&buf)
                .and_then(|_| self.file.flush())
                .map_err(|source| StoreError::Io { path: self.path.clone(), source })?;
            self.len += buf.len() as u64;
        }
        if summary.duplicates > 0 {
            warn!(duplicates = summary.duplicates, "skipped duplicate records");
        }
        if !summary.rejected.is_empty() {
            warn!(rejected = summary.rejected.len(), "refused invalid records");
        }
        Ok(summary)
    }

    pub fn load(&self) -> Result<Vec<TxRecord>, StoreError> {
        load_records(&self.path)
    }
}

/// Reads every complete line of a store file. A missing file is an empty
/// store.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<TxRecord>, StoreError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(StoreError::Io { path: path.to_path_buf(), source }),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    for n in 1.. {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        if read == 0 || !line.ends_with('\n') {
            break;
        }
        let text = line.trim_end();
        if text.is_empty() {
            continue;
        }
        records.push(parse_line(text).map_err(|reason| StoreError::Malformed { line: n, reason })?);
    }
    Ok(records)
}
