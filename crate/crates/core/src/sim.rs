//! Synthetic mempool and single-miner block producer.
//!
//! Transactions arrive as a Poisson process with log-normally distributed
//! gas prices. The pending pool is ordered by gas price (highest first, ties
//! by arrival); each block takes the `block_capacity` best transactions. When
//! the pool is full an arrival displaces the lowest-priced pending
//! transaction, or is itself dropped if it would be the lowest.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tx::{gwei_to_wei, label_blocks, Address, ReceiptStatus, TxHash, TxRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(&'static str),
    #[error("horizon {horizon}s covers fewer than 10 block intervals of {interval}s")]
    ShortHorizon { horizon: f64, interval: f64 },
    #[error("ground-truth curve needs at least 100 trials per grid point, got {0}")]
    TooFewTrials(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockTiming {
    Fixed,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Mean arrivals per second.
    pub arrival_rate: f64,
    /// Median of the log-normal gas price distribution, in gwei.
    pub median_gas_price_gwei: f64,
    /// Standard deviation of ln(gas price).
    pub sigma_log: f64,
    /// Block interval in seconds (the mean, for exponential timing).
    pub block_interval: f64,
    pub block_timing: BlockTiming,
    /// Transactions per block.
    pub block_capacity: usize,
    /// Maximum pending transactions.
    pub pool_capacity: usize,
    /// Simulated seconds.
    pub horizon: f64,
    pub seed: u64,
    /// Unix time of the simulation start.
    pub start_time: u64,
    pub start_block: u64,
    /// Distinct sending accounts.
    pub senders: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 12.0,
            median_gas_price_gwei: 20.0,
            sigma_log: 0.6,
            block_interval: 15.0,
            block_timing: BlockTiming::Fixed,
            block_capacity: 138,
            pool_capacity: 5000,
            horizon: 3600.0,
            seed: 0,
            start_time: 1_542_499_200,
            start_block: 6_700_000,
            senders: 5000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.arrival_rate) {
            return Err(SimError::InvalidConfig("arrival_rate must be positive"));
        }
        if !positive(self.median_gas_price_gwei) || !(self.sigma_log.is_finite() && self.sigma_log >= 0.0) {
            return Err(SimError::InvalidConfig("gas price distribution needs median > 0 and sigma >= 0"));
        }
        if !positive(self.block_interval) || !positive(self.horizon) {
            return Err(SimError::InvalidConfig("block_interval and horizon must be positive"));
        }
        if self.block_capacity == 0 || self.pool_capacity == 0 || self.senders == 0 {
            return Err(SimError::InvalidConfig("capacities and sender count must be positive"));
        }
        Ok(())
    }

    /// Arrivals per block divided by block capacity.
    pub fn load_ratio(&self) -> f64 {
        self.arrival_rate * self.block_interval / self.block_capacity as f64
    }

    /// Gas price (gwei) `z` standard deviations from the log-median.
    pub fn gas_price_quantile(&self, z: f64) -> f64 {
        self.median_gas_price_gwei * (self.sigma_log * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingTx {
    pub seq: u64,
    pub arrival: f64,
    pub hash: TxHash,
    pub sender: Address,
    pub nonce: u64,
    pub gas_price: u128,
    pub gas_limit: u64,
    pub gas_used: u64,
    pub value: u128,
    pub fails: bool,
}

type PoolKey = (Reverse<u128>, u64);

fn key(tx: &PendingTx) -> PoolKey {
    (Reverse(tx.gas_price), tx.seq)
}

/// What happened in one call to [`SimState::step_block`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub number: u64,
    /// Block time in simulated seconds since start.
    pub time: f64,
    pub included: Vec<PendingTx>,
    /// Highest gas price left pending after selection.
    pub best_remaining: Option<u128>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub clock: f64,
    next_arrival: f64,
    next_block_time: f64,
    pub next_block_number: u64,
    pending: BTreeMap<PoolKey, PendingTx>,
    pub confirmed: Vec<TxRecord>,
    pub dropped: Vec<PendingTx>,
    pub arrived: u64,
    next_seq: u64,
    nonces: HashMap<u32, u64>,
    rng: ChaCha8Rng,
    inter_arrival: Exp<f64>,
    block_gap: Exp<f64>,
    gas_price: LogNormal<f64>,
}

impl SimState {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let inter_arrival = Exp::new(config.arrival_rate).expect("validated rate");
        let block_gap = Exp::new(1.0 / config.block_interval).expect("validated interval");
        let gas_price = LogNormal::new(config.median_gas_price_gwei.ln(), config.sigma_log)
            .expect("validated distribution");
        let next_arrival = inter_arrival.sample(&mut rng);
        let mut state = Self {
            clock: 0.0,
            next_arrival,
            next_block_time: 0.0,
            next_block_number: config.start_block,
            pending: BTreeMap::new(),
            confirmed: Vec::new(),
            dropped: Vec::new(),
            arrived: 0,
            next_seq: 0,
            nonces: HashMap::new(),
            rng,
            inter_arrival,
            block_gap,
            gas_price,
        };
        state.next_block_time = state.draw_block_gap(config);
        Ok(state)
    }

    fn draw_block_gap(&mut self, config: &SimConfig) -> f64 {
        match config.block_timing {
            BlockTiming::Fixed => config.block_interval,
            BlockTiming::Exponential => self.block_gap.sample(&mut self.rng),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingTx> {
        self.pending.values()
    }

    pub fn next_block_time(&self) -> f64 {
        self.next_block_time
    }

    fn draw_tx(&mut self, arrival: f64, config: &SimConfig) -> PendingTx {
        let rng = &mut self.rng;
        let gas_price = gwei_to_wei(self.gas_price.sample(rng)).max(1);
        let sender_id = rng.gen_range(0..config.senders as u32);
        let mut sender = [0u8; 20];
        sender[..8].copy_from_slice(&config.seed.to_be_bytes());
        sender[16..].copy_from_slice(&sender_id.to_be_bytes());
        let nonce = self.nonces.entry(sender_id).or_insert(0);
        let tx_nonce = *nonce;
        *nonce += 1;

        let transfer = rng.gen_bool(0.6);
        let (gas_limit, gas_used, value, fails) = if transfer {
            (21_000, 21_000, 10f64.powf(rng.gen_range(15.0..20.0)) as u128, false)
        } else {
            let limit = rng.gen_range(30..=500u64) * 1000;
            let fails = rng.gen_bool(0.01);
            let used = if fails { limit } else { rng.gen_range(21_000..=limit) };
            let value = if rng.gen_bool(0.5) { 0 } else { 10f64.powf(rng.gen_range(14.0..19.0)) as u128 };
            (limit, used, value, fails)
        };
        let mut hash = [0u8; 32];
        rng.fill(&mut hash);
        let seq = self.next_seq;
        self.next_seq += 1;
        PendingTx {
            seq,
            arrival,
            hash: TxHash(hash),
            sender: Address(sender),
            nonce: tx_nonce,
            gas_price,
            gas_limit,
            gas_used,
            value,
            fails,
        }
    }

    /// Adds a transaction to the pool, evicting the cheapest one if full.
    /// Returns `false` when the newcomer itself was the one dropped.
    pub fn admit(&mut self, tx: PendingTx, config: &SimConfig) -> bool {
        self.arrived += 1;
        if self.pending.len() >= config.pool_capacity {
            let (worst_key, _) = self.pending.last_key_value().expect("full pool is non-empty");
            if key(&tx) > *worst_key {
                self.dropped.push(tx);
                return false;
            }
            let (_, evicted) = self.pending.pop_last().expect("non-empty");
            self.dropped.push(evicted);
        }
        self.pending.insert(key(&tx), tx);
        true
    }

    /// Builds a probe transaction at the given gas price arriving now.
    pub fn probe(&mut self, gas_price: u128) -> PendingTx {
        let seq = self.next_seq;
        self.next_seq += 1;
        let mut hash = [0xffu8; 32];
        hash[24..].copy_from_slice(&seq.to_be_bytes());
        PendingTx {
            seq,
            arrival: self.clock,
            hash: TxHash(hash),
            sender: Address([0xff; 20]),
            nonce: 0,
            gas_price,
            gas_limit: 21_000,
            gas_used: 21_000,
            value: 0,
            fails: false,
        }
    }

    /// Advances to the next block: admits every arrival up to the block time,
    /// then confirms the best `block_capacity` pending transactions.
    pub fn step_block(&mut self, config: &SimConfig) -> BlockSummary {
        let block_time = self.next_block_time;
        while self.next_arrival <= block_time {
            let tx = self.draw_tx(self.next_arrival, config);
            self.admit(tx, config);
            self.next_arrival += self.inter_arrival.sample(&mut self.rng);
        }

        let number = self.next_block_number;
        let block_ts = config.start_time + block_time.floor() as u64;
        let mut included = Vec::with_capacity(config.block_capacity.min(self.pending.len()));
        while included.len() < config.block_capacity {
            let Some((_, tx)) = self.pending.pop_first() else { break };
            let seen = config.start_time + tx.arrival.floor() as u64;
            self.confirmed.push(TxRecord {
                tx_hash: tx.hash,
                sender: tx.sender,
                nonce: tx.nonce,
                gas_price: tx.gas_price,
                gas_limit: tx.gas_limit,
                gas_used: Some(tx.gas_used),
                value: tx.value,
                receipt_status: if tx.fails { ReceiptStatus::Failure } else { ReceiptStatus::Success },
                timestamp_seen: Some(seen),
                timestamp_confirmed: Some(block_ts),
                block_number: Some(number),
            });
            included.push(tx);
        }

        self.clock = block_time;
        self.next_block_number += 1;
        self.next_block_time = block_time + self.draw_block_gap(config);
        BlockSummary {
            number,
            time: block_time,
            included,
            best_remaining: self.pending.first_key_value().map(|(k, _)| k.0 .0),
        }
    }
}

/// Runs the simulation to the horizon and returns every confirmed
/// transaction in block order. Dropped transactions are not emitted.
pub fn generate_dataset(config: &SimConfig) -> Result<Vec<TxRecord>, SimError> {
    let state = run_to_horizon(config)?;
    Ok(state.confirmed)
}

/// Like [`generate_dataset`], followed by pending-only sightings for every
/// transaction that was dropped or is still pending at the horizon: what an
/// ingester watching this network would have stored. The extra lines carry no
/// label.
pub fn generate_store(config: &SimConfig) -> Result<Vec<TxRecord>, SimError> {
    let state = run_to_horizon(config)?;
    let mut unconfirmed: Vec<&PendingTx> = state.dropped.iter().chain(state.pending()).collect();
    unconfirmed.sort_by_key(|t| t.seq);
    let sightings = unconfirmed.into_iter().map(|t| TxRecord {
        tx_hash: t.hash,
        sender: t.sender,
        nonce: t.nonce,
        gas_price: t.gas_price,
        gas_limit: t.gas_limit,
        gas_used: None,
        value: t.value,
        receipt_status: ReceiptStatus::Pending,
        timestamp_seen: Some(config.start_time + t.arrival.floor() as u64),
        timestamp_confirmed: None,
        block_number: None,
    });
    let mut records = state.confirmed.clone();
    records.extend(sightings);
    Ok(records)
}

/// Runs the simulation to the horizon and returns the final state.
pub fn run_to_horizon(config: &SimConfig) -> Result<SimState, SimError> {
    config.validate()?;
    if config.horizon < 10.0 * config.block_interval {
        return Err(SimError::ShortHorizon { horizon: config.horizon, interval: config.block_interval });
    }
    let mut state = SimState::new(config)?;
    while state.next_block_time() <= config.horizon {
        state.step_block(config);
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeOutcome {
    Confirmed { blocks: f64 },
    Dropped,
    /// Still pending after the allowed number of blocks.
    Stuck,
}

/// Injects a probe at `gas_price` into a copy of `state` and follows it for
/// at most `max_wait_blocks` blocks.
pub fn run_probe(state: &SimState, config: &SimConfig, gas_price: u128, max_wait_blocks: usize) -> ProbeOutcome {
    let mut sim = state.clone();
    let probe = sim.probe(gas_price);
    let probe_key = key(&probe);
    let inject_at = sim.clock;
    if !sim.admit(probe, config) {
        return ProbeOutcome::Dropped;
    }
    for _ in 0..max_wait_blocks {
        let block = sim.step_block(config);
        if block.included.iter().any(|t| t.seq == probe_key.1) {
            let seen = inject_at.floor() as u64;
            let confirmed = block.time.floor() as u64;
            let blocks = label_blocks(seen, confirmed, config.block_interval).expect("block after injection");
            return ProbeOutcome::Confirmed { blocks };
        }
        if !sim.pending.contains_key(&probe_key) {
            return ProbeOutcome::Dropped;
        }
    }
    ProbeOutcome::Stuck
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSettings {
    pub trials: usize,
    /// Blocks simulated before each probe so the pool reaches steady state.
    pub warmup_blocks: usize,
    pub max_wait_blocks: usize,
}

impl Default for CurveSettings {
    fn default() -> Self {
        Self { trials: 100, warmup_blocks: 200, max_wait_blocks: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub gas_price_gwei: f64,
    /// Mean confirmation delay in blocks over trials that confirmed;
    /// `f64::INFINITY` when more than half the trials failed to confirm.
    pub expected_blocks: f64,
    pub unconfirmed_fraction: f64,
}

/// Monte-Carlo expected confirmation delay for a probe at each grid price.
/// Every trial warms up an independent simulation; all grid prices within a
/// trial see the same arrival stream.
pub fn ground_truth_curve(
    config: &SimConfig,
    gas_grid_gwei: &[f64],
    settings: &CurveSettings,
) -> Result<Vec<TruthPoint>, SimError> {
    config.validate()?;
    if settings.trials < 100 {
        return Err(SimError::TooFewTrials(settings.trials));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..settings.trials).map(|_| seeder.gen()).collect();
    let outcomes: Vec<Vec<ProbeOutcome>> = seeds
        .par_iter()
        .map(|&seed| {
            let trial = SimConfig { seed, ..config.clone() };
            let mut state = SimState::new(&trial).expect("validated config");
            for _ in 0..settings.warmup_blocks {
                state.step_block(&trial);
            }
            gas_grid_gwei
                .iter()
                .map(|&g| run_probe(&state, &trial, gwei_to_wei(g), settings.max_wait_blocks))
                .collect()
        })
        .collect();

    Ok(gas_grid_gwei
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let delays: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| match o[j] {
                    ProbeOutcome::Confirmed { blocks } => Some(blocks),
                    _ => None,
                })
                .collect();
            let unconfirmed = 1.0 - delays.len() as f64 / outcomes.len() as f64;
            let expected_blocks = if unconfirmed > 0.5 || delays.is_empty() {
                f64::INFINITY
            } else {
                delays.iter().sum::<f64>() / delays.len() as f64
            };
            TruthPoint { gas_price_gwei: g, expected_blocks, unconfirmed_fraction: unconfirmed }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig { arrival_rate: 0.01, horizon: 150.0, ..SimConfig::default() }
    }

    fn manual(state: &mut SimState, gas_gwei: u64) -> u64 {
        let tx = state.probe(gas_gwei as u128 * 1_000_000_000);
        let seq = tx.seq;
        state.admit(tx, &cfg());
        seq
    }

    /// State with no random arrivals before `far` seconds.
    fn quiet_state(config: &SimConfig) -> SimState {
        let mut s = SimState::new(config).unwrap();
        s.next_arrival = 1e12;
        s
    }

    #[test]
    fn lone_tx_confirms_next_block() {
        let config = cfg();
        let mut s = quiet_state(&config);
        manual(&mut s, 5);
        let b = s.step_block(&config);
        assert_eq!(b.included.len(), 1);
        assert_eq!(s.confirmed[0].label(15.0).unwrap(), 1.0);
    }

    #[test]
    fn priority_with_unit_capacity() {
        let config = SimConfig { block_capacity: 1, ..cfg() };
        let mut s = quiet_state(&config);
        let low = manual(&mut s, 10);
        let high = manual(&mut s, 50);
        assert_eq!(s.step_block(&config).included[0].seq, high);
        assert_eq!(s.step_block(&config).included[0].seq, low);
        let labels: Vec<f64> = s.confirmed.iter().map(|r| r.label(15.0).unwrap()).collect();
        assert_eq!(labels, vec![1.0, 2.0]);
    }

    #[test]
    fn eviction_of_cheapest() {
        let config = SimConfig { pool_capacity: 2, ..cfg() };
        let mut s = quiet_state(&config);
        let cheap = manual(&mut s, 5);
        manual(&mut s, 30);
        let tx = s.probe(20_000_000_000);
        assert!(s.admit(tx, &config));
        assert_eq!(s.dropped.len(), 1);
        assert_eq!(s.dropped[0].seq, cheap);
        let tx = s.probe(1_000_000_000);
        assert!(!s.admit(tx, &config));
        assert_eq!(s.pending_len(), 2);
    }

    #[test]
    fn low_load_labels_are_one() {
        let config = SimConfig { arrival_rate: 2.0, horizon: 900.0, seed: 5, ..SimConfig::default() };
        let records = generate_dataset(&config).unwrap();
        assert!(records.len() > 1000);
        assert!(records.iter().all(|r| r.label(15.0).unwrap() == 1.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let config = SimConfig { horizon: 600.0, seed: 9, ..SimConfig::default() };
        assert_eq!(generate_dataset(&config).unwrap(), generate_dataset(&config).unwrap());
        let other = SimConfig { seed: 10, ..config.clone() };
        assert_ne!(generate_dataset(&config).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn saturation_causes_queueing() {
        let config = SimConfig { horizon: 7200.0, seed: 1, ..SimConfig::default() };
        assert!((config.load_ratio() - 1.3043).abs() < 1e-3);
        let records = generate_dataset(&config).unwrap();
        let mean = records.iter().map(|r| r.label(15.0).unwrap()).sum::<f64>() / records.len() as f64;
        assert!(mean > 1.5, "mean label {mean}");
    }

    #[test]
    fn records_validate() {
        let config = SimConfig { horizon: 600.0, ..SimConfig::default() };
        for r in generate_dataset(&config).unwrap() {
            r.validate().unwrap();
        }
    }

    #[test]
    fn short_horizon_rejected() {
        let config = SimConfig { horizon: 100.0, ..SimConfig::default() };
        assert!(matches!(generate_dataset(&config), Err(SimError::ShortHorizon { .. })));
    }

    #[test]
    fn curve_needs_trials() {
        let settings = CurveSettings { trials: 10, ..CurveSettings::default() };
        assert_eq!(
            ground_truth_curve(&SimConfig::default(), &[1.0], &settings),
            Err(SimError::TooFewTrials(10))
        );
    }
}
