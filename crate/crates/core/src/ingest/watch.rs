//! Polling watchers for the pending pool and for newly mined blocks, and the
//! ingest loop that funnels both into one store writer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::rpc::{
    confirmed_records, decode_tx, decode_txpool_pending, fetch_block, fetch_receipt,
    head_block_number, pending_record, Block, BlockTx, NodeEndpoint, Receipt, RpcError, Transport,
};
use super::store::{DatasetStore, StoreError};
use crate::tx::{TxHash, TxRecord};

#[derive(Debug, Error)]
pub enum WatchError {
    #[error("node exposes neither txpool_content nor pending-transaction filters")]
    NoPendingApi,
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PendingSource {
    TxPool,
    Filter(String),
}

/// A transaction together with the local time it was first observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingObservation {
    pub tx: BlockTx,
    pub seen: u64,
}

/// Tracks first-seen times of pending transactions. Only the first sighting
/// of a hash is ever reported.
#[derive(Debug)]
pub struct PendingWatcher {
    source: PendingSource,
    first_seen: HashMap<TxHash, u64>,
}

impl PendingWatcher {
    /// Picks the enumeration API the node supports: `txpool_content` if
    /// available, otherwise a pending-transaction filter.
    pub fn connect(transport: &dyn Transport) -> Result<Self, WatchError> {
        let source = match transport.call("txpool_content", json!([])) {
            Ok(_) => PendingSource::TxPool,
            Err(RpcError::MethodNotFound(_)) => {
                match transport.call("eth_newPendingTransactionFilter", json!([])) {
                    Ok(Value::String(id)) => PendingSource::Filter(id),
                    Ok(other) => {
                        return Err(RpcError::Parse {
                            what: "filter id",
                            detail: "expected a string".into(),
                            raw: other.to_string(),
                        }
                        .into())
                    }
                    Err(RpcError::MethodNotFound(_)) => return Err(WatchError::NoPendingApi),
                    Err(e) => return Err(e.into()),
                }
            }
            Err(e) => return Err(e.into()),
        };
        info!(?source, "pending watcher connected");
        Ok(Self { source, first_seen: HashMap::new() })
    }

    pub fn uses_txpool(&self) -> bool {
        self.source == PendingSource::TxPool
    }

    /// Hashes observed so far with their first-seen time.
    pub fn first_seen(&self) -> &HashMap<TxHash, u64> {
        &self.first_seen
    }

    /// Forgets hashes that can no longer matter, e.g. once confirmed.
    pub fn forget(&mut self, hash: &TxHash) {
        self.first_seen.remove(hash);
    }

    /// One poll at local time `now`; returns only hashes not seen before.
    pub fn poll(&mut self, transport: &dyn Transport, now: u64) -> Result<Vec<PendingObservation>, RpcError> {
        let txs = match &self.source {
            PendingSource::TxPool => decode_txpool_pending(&transport.call("txpool_content", json!([]))?)?,
            PendingSource::Filter(id) => {
                let changes = transport.call("eth_getFilterChanges", json!([id]))?;
                let hashes = changes.as_array().ok_or_else(|| RpcError::Parse {
                    what: "filter changes",
                    detail: "expected an array".into(),
                    raw: changes.to_string(),
                })?;
                let mut txs = Vec::with_capacity(hashes.len());
                for h in hashes {
                    let hash: TxHash = h
                        .as_str()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| RpcError::Parse {
                            what: "filter changes",
                            detail: "expected a transaction hash".into(),
                            raw: h.to_string(),
                        })?;
                    if self.first_seen.contains_key(&hash) {
                        continue;
                    }
                    let v = transport.call("eth_getTransactionByHash", json!([hash.to_string()]))?;
                    // Already dropped or replaced between the two calls.
                    if !v.is_null() {
                        txs.push(decode_tx(&v)?);
                    }
                }
                txs
            }
        };
        let mut fresh = Vec::new();
        for tx in txs {
            if let std::collections::hash_map::Entry::Vacant(e) = self.first_seen.entry(tx.hash) {
                e.insert(now);
                fresh.push(PendingObservation { tx, seen: now });
            }
        }
        Ok(fresh)
    }
}

/// Follows the chain head one block at a time.
#[derive(Debug, Clone)]
pub struct BlockWatcher {
    next_block: u64,
}

impl BlockWatcher {
    pub fn starting_at(next_block: u64) -> Self {
        Self { next_block }
    }

    pub fn next_block(&self) -> u64 {
        self.next_block
    }

    /// Fetches every block from the cursor up to the current head along with
    /// its receipts. A block that is not available yet ends the poll.
    pub fn poll(&mut self, transport: &dyn Transport) -> Result<Vec<(Block, Vec<Receipt>)>, RpcError> {
        let head = head_block_number(transport)?;
        let mut out = Vec::new();
        while self.next_block <= head {
            let block = match fetch_block(transport, self.next_block) {
                Ok(b) => b,
                Err(RpcError::NotFound) => break,
                Err(e) => return Err(e),
            };
            let receipts = block
                .transactions
                .iter()
                .map(|tx| fetch_receipt(transport, &tx.hash))
                .collect::<Result<Vec<_>, _>>()?;
            debug!(number = block.number, txs = block.transactions.len(), "fetched block");
            self.next_block += 1;
            out.push((block, receipts));
        }
        Ok(out)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Totals reported by [`run_ingest`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub pending_written: usize,
    pub confirmed_written: usize,
    pub duplicates: usize,
    pub transient_errors: usize,
}

enum Batch {
    Pending(Vec<TxRecord>),
    Confirmed(Vec<TxRecord>),
    TransientError,
}

/// Runs both watchers until `stop` is set, serialising all appends through
/// this thread. Transport errors are logged and polling continues; a node
/// without a pending-pool API is a fatal configuration error.
pub fn run_ingest(
    transport: &dyn Transport,
    endpoint: &NodeEndpoint,
    store: &mut DatasetStore,
    stop: &AtomicBool,
) -> Result<IngestSummary, WatchError> {
    endpoint.validate()?;
    let mut pending = PendingWatcher::connect(transport)?;
    let start = match store.last_block_seen() {
        Some(b) => b + 1,
        None => head_block_number(transport)?,
    };
    let mut blocks = BlockWatcher::starting_at(start);
    let interval = endpoint.poll_interval;
    let (tx, rx) = mpsc::channel::<Batch>();

    let mut summary = IngestSummary::default();
    std::thread::scope(|scope| -> Result<(), WatchError> {
        let ptx = tx.clone();
        scope.spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                let batch = match pending.poll(transport, unix_now()) {
                    Ok(obs) => Batch::Pending(obs.iter().map(|o| pending_record(&o.tx, o.seen)).collect()),
                    Err(e) => {
                        warn!(error = %e, "pending poll failed");
                        Batch::TransientError
                    }
                };
                if ptx.send(batch).is_err() {
                    break;
                }
                sleep_unless_stopped(interval, stop);
            }
        });
        let btx = tx;
        scope.spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                let batch = match blocks.poll(transport) {
                    Ok(found) => Batch::Confirmed(
                        found.iter().flat_map(|(b, r)| confirmed_records(b, r)).collect(),
                    ),
                    Err(e) => {
                        warn!(error = %e, "block poll failed");
                        Batch::TransientError
                    }
                };
                if btx.send(batch).is_err() {
                    break;
                }
                sleep_unless_stopped(interval, stop);
            }
        });

        for batch in rx {
            match batch {
                Batch::Pending(records) if !records.is_empty() => {
                    let s = store.append(&records).inspect_err(|_| stop.store(true, Ordering::Relaxed))?;
                    summary.pending_written += s.written;
                    summary.duplicates += s.duplicates;
                }
                Batch::Confirmed(records) if !records.is_empty() => {
                    let s = store.append(&records).inspect_err(|_| stop.store(true, Ordering::Relaxed))?;
                    summary.confirmed_written += s.written;
                    summary.duplicates += s.duplicates;
                }
                Batch::TransientError => summary.transient_errors += 1,
                _ => {}
            }
        }
        Ok(())
    })?;
    Ok(summary)
}

fn sleep_unless_stopped(total: Duration, stop: &AtomicBool) {
    let step = Duration::from_millis(50).min(total);
    let mut slept = Duration::ZERO;
    while slept < total && !stop.load(Ordering::Relaxed) {
        std::thread::sleep(step);
        slept += step;
    }
}
