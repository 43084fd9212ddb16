//! Transaction records, unit conversions, feature extraction and labeling.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::BLOCK_SECONDS;

/// Width of the feature vector consumed by every regressor.
pub const N_FEATURES: usize = 7;

pub type Features = [f64; N_FEATURES];

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "gas_price_gwei",
    "gas_limit",
    "log10_value_wei",
    "nonce",
    "pending_pool_size",
    "median_gas_price_gwei",
    "mean_block_interval_s",
];

/// Index of the gas price in [`Features`].
pub const GAS_PRICE_FEATURE: usize = 0;
/// Index of the gas limit in [`Features`].
pub const GAS_LIMIT_FEATURE: usize = 1;

pub const WEI_PER_GWEI: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TxError {
    #[error("clock skew: confirmed at {confirmed} before first seen at {seen}")]
    ClockSkew { seen: u64, confirmed: u64 },
    #[error("block interval must be positive and finite, got {0}")]
    InvalidInterval(f64),
    #[error("invalid network context: {0}")]
    InvalidContext(&'static str),
    #[error("invalid record {hash}: {reason}")]
    InvalidRecord { hash: TxHash, reason: &'static str },
    #[error("record {0} has no first-seen timestamp")]
    MissingSeen(TxHash),
    #[error("record {0} is not confirmed")]
    Unconfirmed(TxHash),
    #[error("feature {index} is not finite")]
    NonFiniteFeature { index: usize },
    #[error("label {0} is below the one-block floor")]
    LabelBelowFloor(f64),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("split of {n} examples at fraction {fraction} leaves an empty side")]
    EmptySplit { n: usize, fraction: f64 },
    #[error("invalid hex identifier: {0}")]
    InvalidHex(String),
}

macro_rules! hex_id {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; $len]);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "0x{}", hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(self, f)
            }
        }

        impl FromStr for $name {
            type Err = TxError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let digits = s.strip_prefix("0x").unwrap_or(s);
                let mut out = [0u8; $len];
                hex::decode_to_slice(digits, &mut out)
                    .map_err(|_| TxError::InvalidHex(s.chars().take(80).collect()))?;
                Ok(Self(out))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(TxHash, 32);
hex_id!(Address, 20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiptStatus {
    Success,
    Failure,
    Pending,
}

/// One observed transaction.
///
/// A record written by the pending-pool watcher has `timestamp_seen` set and
/// no confirmation fields; a record written by the block watcher carries the
/// confirmation but may lack `timestamp_seen`. Complete records come out of
/// [`crate::ingest::join_pending_confirmed`] or the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxRecord {
    pub tx_hash: TxHash,
    pub sender: Address,
    pub nonce: u64,
    #[serde(rename = "gas_price_wei")]
    pub gas_price: u128,
    pub gas_limit: u64,
    pub gas_used: Option<u64>,
    #[serde(rename = "value_wei")]
    pub value: u128,
    pub receipt_status: ReceiptStatus,
    pub timestamp_seen: Option<u64>,
    pub timestamp_confirmed: Option<u64>,
    pub block_number: Option<u64>,
}

impl TxRecord {
    /// Checks the structural invariants that hold for every stored record.
    pub fn validate(&self) -> Result<(), TxError> {
        let invalid = |reason| TxError::InvalidRecord { hash: self.tx_hash, reason };
        if self.gas_limit == 0 {
            return Err(invalid("gas_limit must be positive"));
        }
        if matches!(self.gas_used, Some(used) if used > self.gas_limit) {
            return Err(invalid("gas_used exceeds gas_limit"));
        }
        if let (Some(seen), Some(confirmed)) = (self.timestamp_seen, self.timestamp_confirmed) {
            if confirmed < seen {
                return Err(TxError::ClockSkew { seen, confirmed });
            }
        }
        let confirmed = self.receipt_status != ReceiptStatus::Pending;
        if confirmed != self.block_number.is_some() || confirmed != self.timestamp_confirmed.is_some()
        {
            return Err(invalid("confirmation fields disagree with receipt_status"));
        }
        Ok(())
    }

    pub fn is_confirmed(&self) -> bool {
        self.receipt_status != ReceiptStatus::Pending
    }

    /// Confirmation delay in blocks, for a record that has both timestamps.
    pub fn label(&self, block_interval: f64) -> Result<f64, TxError> {
        let seen = self.timestamp_seen.ok_or(TxError::MissingSeen(self.tx_hash))?;
        let confirmed = self
            .timestamp_confirmed
            .ok_or(TxError::Unconfirmed(self.tx_hash))?;
        label_blocks(seen, confirmed, block_interval)
    }
}

/// Context features describing the network state a transaction competes in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkContext {
    pub pending_pool_size: u64,
    pub median_gas_price_recent: u128,
    pub mean_block_interval_recent: f64,
}

impl Default for NetworkContext {
    fn default() -> Self {
        Self {
            pending_pool_size: 0,
            median_gas_price_recent: 20_000_000_000,
            mean_block_interval_recent: BLOCK_SECONDS,
        }
    }
}

impl NetworkContext {
    pub fn validate(&self) -> Result<(), TxError> {
        let interval = self.mean_block_interval_recent;
        if !(interval.is_finite() && interval > 0.0) {
            return Err(TxError::InvalidContext(
                "mean_block_interval_recent must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// A feature vector paired with its confirmation delay in blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Features,
    pub label_blocks: f64,
}

impl LabeledExample {
    pub fn new(features: Features, label_blocks: f64) -> Result<Self, TxError> {
        if let Some(index) = features.iter().position(|x| !x.is_finite()) {
            return Err(TxError::NonFiniteFeature { index });
        }
        if !(label_blocks >= 1.0) || !label_blocks.is_finite() {
            return Err(TxError::LabelBelowFloor(label_blocks));
        }
        Ok(Self { features, label_blocks })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtherUnit {
    Wei,
    Gwei,
    Szabo,
    Finney,
    Ether,
}

impl EtherUnit {
    pub fn exponent(self) -> i32 {
        match self {
            EtherUnit::Wei => 0,
            EtherUnit::Gwei => 9,
            EtherUnit::Szabo => 12,
            EtherUnit::Finney => 15,
            EtherUnit::Ether => 18,
        }
    }
}

pub fn wei_to_unit(amount: u128, unit: EtherUnit) -> f64 {
    match unit {
        EtherUnit::Wei => amount as f64,
        _ => amount as f64 / 10f64.powi(unit.exponent()),
    }
}

pub fn gwei_to_wei(gwei: f64) -> u128 {
    (gwei * WEI_PER_GWEI).round().max(0.0) as u128
}

/// Confirmation delay in whole blocks, never less than one.
pub fn label_blocks(seen: u64, confirmed: u64, block_interval: f64) -> Result<f64, TxError> {
    if !(block_interval.is_finite() && block_interval > 0.0) {
        return Err(TxError::InvalidInterval(block_interval));
    }
    if confirmed < seen {
        return Err(TxError::ClockSkew { seen, confirmed });
    }
    let waited = (confirmed - seen) as f64;
    Ok((waited / block_interval).ceil().max(1.0))
}

/// Maps a record and its network context onto the fixed feature layout
/// described by [`FEATURE_NAMES`].
pub fn extract_features(record: &TxRecord, ctx: &NetworkContext) -> Result<Features, TxError> {
    ctx.validate()?;
    if record.gas_limit == 0 {
        return Err(TxError::InvalidRecord {
            hash: record.tx_hash,
            reason: "gas_limit must be positive",
        });
    }
    let features = [
        record.gas_price as f64 / WEI_PER_GWEI,
        record.gas_limit as f64,
        (1.0 + record.value as f64).log10(),
        record.nonce as f64,
        ctx.pending_pool_size as f64,
        ctx.median_gas_price_recent as f64 / WEI_PER_GWEI,
        ctx.mean_block_interval_recent,
    ];
    if let Some(index) = features.iter().position(|x| !x.is_finite()) {
        return Err(TxError::NonFiniteFeature { index });
    }
    Ok(features)
}

/// Shuffles `examples` with a seeded RNG and cuts the result into a training
/// prefix of `round(train_fraction * n)` items and a validation remainder.
pub fn split_dataset<T: Clone>(
    examples: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), TxError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TxError::InvalidFraction(train_fraction));
    }
    let n = examples.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(TxError::EmptySplit { n, fraction: train_fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| examples[i].clone()).collect();
    let valid = order[n_train..].iter().map(|&i| examples[i].clone()).collect();
    Ok((train, valid))
}
