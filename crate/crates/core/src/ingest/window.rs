//! Turns stored observations into labelled training windows.
//!
//! The store holds pending sightings and confirmations as separate lines;
//! [`join_pending_confirmed`] merges them per hash. Network context for each
//! example is reconstructed from the store itself as of the moment the
//! transaction was first seen, so live and simulated stores go through exactly
//! the same path.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::stats::median;
use crate::tx::{
    extract_features, LabeledExample, NetworkContext, TxError, TxHash, TxRecord, WEI_PER_GWEI,
};
use crate::BLOCK_SECONDS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error("store holds no confirmed transactions")]
    NoConfirmed,
    #[error("no labelled transactions in blocks {first}..={head}")]
    Empty { first: u64, head: u64 },
    #[error(transparent)]
    Tx(#[from] TxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinStatus {
    /// Seen pending and later confirmed: usable for training.
    Complete,
    /// Confirmed without ever having been seen pending.
    NoSeenTimestamp,
    /// Seen pending, no confirmation (yet).
    Pending,
    /// Confirmed before it was seen; quarantined.
    ClockSkew,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinedRecord {
    pub record: TxRecord,
    pub status: JoinStatus,
}

/// Merges pending sightings with confirmations by hash. The earliest sighting
/// wins; confirmation fields come from the confirmation. Confirmed records
/// are returned in block order, followed by pending-only records in store
/// order.
pub fn join_pending_confirmed(records: &[TxRecord]) -> Vec<JoinedRecord> {
    let mut seen: HashMap<TxHash, u64> = HashMap::new();
    let mut confirmations: Vec<&TxRecord> = Vec::new();
    let mut confirmed_hashes: HashMap<TxHash, ()> = HashMap::new();
    let mut pending_order: Vec<&TxRecord> = Vec::new();

    for r in records {
        if let Some(t) = r.timestamp_seen {
            seen.entry(r.tx_hash).and_modify(|e| *e = (*e).min(t)).or_insert(t);
        }
        if r.is_confirmed() {
            if confirmed_hashes.insert(r.tx_hash, ()).is_none() {
                confirmations.push(r);
            }
        } else {
            pending_order.push(r);
        }
    }
    // Stable sort keeps store order within a block.
    confirmations.sort_by_key(|r| r.block_number);

    let mut out = Vec::with_capacity(confirmations.len() + pending_order.len());
    for c in confirmations {
        let mut record = c.clone();
        record.timestamp_seen = seen.get(&c.tx_hash).copied();
        let status = match (record.timestamp_seen, record.timestamp_confirmed) {
            (None, _) => JoinStatus::NoSeenTimestamp,
            (Some(s), Some(t)) if t < s => JoinStatus::ClockSkew,
            _ => JoinStatus::Complete,
        };
        out.push(JoinedRecord { record, status });
    }
    let mut emitted: HashMap<TxHash, ()> = HashMap::new();
    for p in pending_order {
        if confirmed_hashes.contains_key(&p.tx_hash) || emitted.insert(p.tx_hash, ()).is_some() {
            continue;
        }
        let mut record = p.clone();
        record.timestamp_seen = seen.get(&p.tx_hash).copied();
        out.push(JoinedRecord { record, status: JoinStatus::Pending });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOptions {
    /// Number of most recent blocks to train on.
    pub k: u64,
    /// Blocks looked back over when computing the median gas price and mean
    /// block interval of a context.
    pub context_blocks: usize,
    /// A sighting that never confirms stops counting towards the pending
    /// pool size after this many seconds.
    pub pending_expiry_s: u64,
    pub block_interval: f64,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self { k: 100, context_blocks: 20, pending_expiry_s: 3600, block_interval: BLOCK_SECONDS }
    }
}

#[derive(Debug, Clone)]
struct BlockStats {
    number: u64,
    timestamp: u64,
    median_gas_price: u128,
    mean_interval: f64,
}

/// Network context as it could have been observed at any instant, rebuilt
/// from the joined store.
#[derive(Debug, Clone)]
pub struct ContextTimeline {
    blocks: Vec<BlockStats>,
    seen: Vec<u64>,
    confirmed: Vec<u64>,
    expired: Vec<u64>,
}

fn count_le(sorted: &[u64], t: u64) -> usize {
    sorted.partition_point(|&x| x <= t)
}

impl ContextTimeline {
    pub fn build(joined: &[JoinedRecord], opts: &WindowOptions) -> Self {
        let mut by_block: BTreeMap<u64, (u64, Vec<u128>)> = BTreeMap::new();
        let (mut seen, mut confirmed, mut expired) = (Vec::new(), Vec::new(), Vec::new());
        for j in joined {
            let r = &j.record;
            if j.status == JoinStatus::ClockSkew {
                continue;
            }
            if let (Some(b), Some(ts)) = (r.block_number, r.timestamp_confirmed) {
                let entry = by_block.entry(b).or_insert((ts, Vec::new()));
                entry.0 = entry.0.min(ts);
                entry.1.push(r.gas_price);
            }
            if let Some(s) = r.timestamp_seen {
                seen.push(s);
                match r.timestamp_confirmed {
                    Some(c) => confirmed.push(c),
                    None => expired.push(s.saturating_add(opts.pending_expiry_s)),
                }
            }
        }
        seen.sort_unstable();
        confirmed.sort_unstable();
        expired.sort_unstable();

        let raw: Vec<(u64, u64, Vec<u128>)> = by_block.into_iter().map(|(n, (ts, g))| (n, ts, g)).collect();
        let span = opts.context_blocks.max(1);
        let mut blocks = Vec::with_capacity(raw.len());
        for i in 0..raw.len() {
            let lo = (i + 1).saturating_sub(span);
            let prices: Vec<f64> = raw[lo..=i].iter().flat_map(|b| b.2.iter().map(|&g| g as f64)).collect();
            let median_gas_price = median(&prices).map_or(0, |m| m.round() as u128);
            // Divide by the block-number span so missing (empty) blocks don't
            // inflate the interval.
            let (first, last) = (&raw[lo], &raw[i]);
            let mean_interval = if last.0 > first.0 && last.1 >= first.1 {
                (last.1 - first.1) as f64 / (last.0 - first.0) as f64
            } else {
                opts.block_interval
            };
            blocks.push(BlockStats {
                number: last.0,
                timestamp: last.1,
                median_gas_price,
                mean_interval: if mean_interval > 0.0 { mean_interval } else { opts.block_interval },
            });
        }
        Self { blocks, seen, confirmed, expired }
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Context at unix time `t`, using the latest block not after `t`. Before
    /// the first stored block the first block's figures are the best
    /// available.
    pub fn at(&self, t: u64) -> Option<NetworkContext> {
        let idx = self.blocks.partition_point(|b| b.timestamp <= t);
        let block = self.blocks.get(idx.saturating_sub(1))?;
        let pool = count_le(&self.seen, t)
            .saturating_sub(count_le(&self.confirmed, t))
            .saturating_sub(count_le(&self.expired, t));
        Some(NetworkContext {
            pending_pool_size: pool as u64,
            median_gas_price_recent: block.median_gas_price,
            mean_block_interval_recent: block.mean_interval,
        })
    }

    /// Head block number and timestamp.
    pub fn head(&self) -> Option<(u64, u64)> {
        self.blocks.last().map(|b| (b.number, b.timestamp))
    }
}

/// Labelled examples drawn from a block range together with the context a
/// prediction made at the head would see.
#[derive(Debug, Clone)]
pub struct Window {
    pub examples: Vec<LabeledExample>,
    /// The complete records behind `examples`, in the same order.
    pub records: Vec<TxRecord>,
    pub first_block: u64,
    pub head: u64,
    pub current_context: NetworkContext,
    pub unseen: usize,
    pub quarantined: usize,
}

impl Window {
    /// Short human-readable description, e.g. `blocks 901-1000 (13800 examples)`.
    pub fn descriptor(&self) -> String {
        format!("blocks {}-{} ({} examples)", self.first_block, self.head, self.examples.len())
    }
}

/// Examples from confirmed records with `block_number` in `(head - k, head]`.
/// `head` defaults to the highest stored block.
pub fn window_last_k_blocks(
    records: &[TxRecord],
    opts: &WindowOptions,
    head: Option<u64>,
) -> Result<Window, WindowError> {
    let joined = join_pending_confirmed(records);
    window_from_joined(&joined, opts, head)
}

pub fn window_from_joined(
    joined: &[JoinedRecord],
    opts: &WindowOptions,
    head: Option<u64>,
) -> Result<Window, WindowError> {
    let timeline = ContextTimeline::build(joined, opts);
    let (max_block, _) = timeline.head().ok_or(WindowError::NoConfirmed)?;
    let head = head.unwrap_or(max_block);
    let first = head.saturating_sub(opts.k.saturating_sub(1)).min(head);
    let in_range = |b: u64| b >= first && b <= head;

    let mut window = Window {
        examples: Vec::new(),
        records: Vec::new(),
        first_block: first,
        head,
        current_context: NetworkContext::default(),
        unseen: 0,
        quarantined: 0,
    };
    let mut head_time = None;
    for j in joined {
        let Some(b) = j.record.block_number else { continue };
        if !in_range(b) {
            continue;
        }
        if b == head {
            head_time = j.record.timestamp_confirmed;
        }
        match j.status {
            JoinStatus::Complete => {
                let r = &j.record;
                let seen = r.timestamp_seen.expect("complete records have a sighting");
                let ctx = timeline.at(seen).expect("timeline is non-empty");
                let features = extract_features(r, &ctx)?;
                window.examples.push(LabeledExample::new(features, r.label(opts.block_interval)?)?);
                window.records.push(r.clone());
            }
            JoinStatus::NoSeenTimestamp => window.unseen += 1,
            JoinStatus::ClockSkew => window.quarantined += 1,
            JoinStatus::Pending => {}
        }
    }
    if window.examples.is_empty() {
        return Err(WindowError::Empty { first, head });
    }
    let now = head_time.or_else(|| window.records.iter().filter_map(|r| r.timestamp_confirmed).max());
    window.current_context = now.and_then(|t| timeline.at(t)).unwrap_or_default();
    Ok(window)
}

/// Median gas price in gwei of a context, for display.
pub fn context_median_gwei(ctx: &NetworkContext) -> f64 {
    ctx.median_gas_price_recent as f64 / WEI_PER_GWEI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tx::{Address, ReceiptStatus};

    fn rec(id: u16, seen: Option<u64>, block: Option<(u64, u64)>) -> TxRecord {
        let mut hash = [0u8; 32];
        hash[..2].copy_from_slice(&id.to_be_bytes());
        TxRecord {
            tx_hash: TxHash(hash),
            sender: Address([2; 20]),
            nonce: id as u64,
            gas_price: (10 + id as u128 % 30) * 1_000_000_000,
            gas_limit: 21_000,
            gas_used: block.map(|_| 21_000),
            value: 0,
            receipt_status: if block.is_some() { ReceiptStatus::Success } else { ReceiptStatus::Pending },
            timestamp_seen: seen,
            timestamp_confirmed: block.map(|b| b.1),
            block_number: block.map(|b| b.0),
        }
    }

    #[test]
    fn pending_plus_confirmation_gives_label() {
        let pending = rec(1, Some(100), None);
        let confirmed = rec(1, None, Some((5, 129)));
        let joined = join_pending_confirmed(&[pending, confirmed]);
        assert_eq!(joined.len(), 1);
        assert_eq!(joined[0].status, JoinStatus::Complete);
        assert_eq!(joined[0].record.timestamp_seen, Some(100));
        assert_eq!(joined[0].record.label(15.0).unwrap(), 2.0);
    }

    #[test]
    fn earliest_sighting_wins() {
        let joined = join_pending_confirmed(&[
            rec(1, Some(110), None),
            rec(1, Some(100), None),
            rec(1, None, Some((5, 129))),
        ]);
        assert_eq!(joined[0].record.timestamp_seen, Some(100));
    }

    #[test]
    fn statuses() {
        let joined = join_pending_confirmed(&[
            rec(1, None, Some((5, 129))),
            rec(2, Some(200), None),
            rec(3, Some(200), Some((5, 129))),
        ]);
        let statuses: Vec<_> = joined.iter().map(|j| j.status).collect();
        assert_eq!(statuses, vec![JoinStatus::NoSeenTimestamp, JoinStatus::ClockSkew, JoinStatus::Pending]);
        assert_eq!(joined[2].record.timestamp_confirmed, None);
    }

    fn chain(first: u64, last: u64) -> Vec<TxRecord> {
        let mut out = Vec::new();
        let mut id = 0u16;
        for b in first..=last {
            let ts = 1_000 + (b - first) * 15;
            for _ in 0..3 {
                out.push(rec(id, Some(ts.saturating_sub(20)), Some((b, ts))));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn last_k_blocks_interval() {
        let records = chain(900, 1000);
        let w = window_last_k_blocks(&records, &WindowOptions::default(), None).unwrap();
        assert_eq!((w.first_block, w.head), (901, 1000));
        assert!(w.records.iter().all(|r| (901..=1000).contains(&r.block_number.unwrap())));
        assert_eq!(w.examples.len(), 300);
        assert_eq!(w.descriptor(), "blocks 901-1000 (300 examples)");
    }

    #[test]
    fn large_k_takes_everything() {
        let records = chain(0, 10);
        let opts = WindowOptions { k: 1_000, ..Default::default() };
        let w = window_last_k_blocks(&records, &opts, None).unwrap();
        assert_eq!(w.examples.len(), records.len());
        assert_eq!(w.first_block, 0);
    }

    #[test]
    fn unseen_excluded_and_counted() {
        let mut records = chain(0, 3);
        records.push(rec(999, None, Some((3, 1045))));
        let w = window_last_k_blocks(&records, &WindowOptions::default(), None).unwrap();
        assert_eq!(w.unseen, 1);
        assert_eq!(w.examples.len(), 12);
    }

    #[test]
    fn empty_window_and_store() {
        assert_eq!(
            window_last_k_blocks(&[], &WindowOptions::default(), None).unwrap_err(),
            WindowError::NoConfirmed
        );
        let records = vec![rec(1, None, Some((5, 129)))];
        assert!(matches!(
            window_last_k_blocks(&records, &WindowOptions::default(), None),
            Err(WindowError::Empty { .. })
        ));
    }

    #[test]
    fn context_reconstruction() {
        // Blocks every 15 s; three txs seen 20 s before their block.
        let records = chain(0, 20);
        let joined = join_pending_confirmed(&records);
        let tl = ContextTimeline::build(&joined, &WindowOptions::default());
        let ctx = tl.at(1_000 + 10 * 15).unwrap();
        assert_eq!(ctx.mean_block_interval_recent, 15.0);
        // Txs of blocks 11 and 12 have been seen (t-20 <= now) but not confirmed.
        assert_eq!(ctx.pending_pool_size, 3);
    }

    #[test]
    fn window_is_pure() {
        let records = chain(0, 30);
        let a = window_last_k_blocks(&records, &WindowOptions::default(), Some(25)).unwrap();
        let b = window_last_k_blocks(&records, &WindowOptions::default(), Some(25)).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.head, 25);
    }
}
