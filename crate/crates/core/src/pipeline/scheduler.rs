//! Periodic sliding-window retraining with swap-on-success.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{error, info, warn};

use super::model::{ModelKind, ModelSnapshot, ModelSpec};
use super::ops::{snapshot_from_window, unix_now, PipelineError};
use super::registry::SnapshotRegistry;
use crate::ingest::store::load_records;
use crate::ingest::window::{window_last_k_blocks, Window, WindowError, WindowOptions};
use crate::tx::TxRecord;

/// Consecutive skipped retrains of one kind that raise an operator alert.
pub const ALERT_AFTER: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub forest_interval: Duration,
    pub mlp_interval: Duration,
    pub glm_interval: Duration,
    pub window_blocks: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            forest_interval: Duration::from_secs(180),
            mlp_interval: Duration::from_secs(480),
            glm_interval: Duration::from_secs(180),
            window_blocks: 100,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid scheduler config: {0}")]
pub struct SchedulerConfigError(&'static str);

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerConfigError> {
        if [self.forest_interval, self.mlp_interval, self.glm_interval].iter().any(Duration::is_zero) {
            return Err(SchedulerConfigError("intervals must be positive"));
        }
        if self.window_blocks == 0 {
            return Err(SchedulerConfigError("window_blocks must be at least 1"));
        }
        Ok(())
    }

    pub fn interval(&self, kind: ModelKind) -> Duration {
        match kind {
            ModelKind::Forest | ModelKind::Baseline => self.forest_interval,
            ModelKind::Mlp => self.mlp_interval,
            ModelKind::Glm => self.glm_interval,
        }
    }

    /// Same interval for every kind; handy for accelerated runs.
    pub fn uniform(interval: Duration, window_blocks: u64) -> Self {
        Self { forest_interval: interval, mlp_interval: interval, glm_interval: interval, window_blocks }
    }
}

/// Where the scheduler reads records from at each retrain.
pub trait RecordSource: Send + Sync {
    fn records(&self) -> Result<Vec<TxRecord>, String>;
}

/// Re-reads a JSONL store file on every call.
#[derive(Debug, Clone)]
pub struct StoreSource {
    pub path: PathBuf,
}

impl RecordSource for StoreSource {
    fn records(&self) -> Result<Vec<TxRecord>, String> {
        load_records(&self.path).map_err(|e| e.to_string())
    }
}

/// Replays a finished store as if it were being written live: the visible
/// head advances by `blocks_per_second` from the moment the source is
/// created, starting at `initial_blocks` blocks.
#[derive(Debug)]
pub struct ReplaySource {
    confirmed: Vec<TxRecord>,
    unconfirmed: Vec<TxRecord>,
    blocks: Vec<(u64, u64)>,
    initial_blocks: usize,
    blocks_per_second: f64,
    started: Instant,
}

impl ReplaySource {
    pub fn new(records: Vec<TxRecord>, initial_blocks: usize, blocks_per_second: f64) -> Self {
        let (mut confirmed, mut unconfirmed): (Vec<_>, Vec<_>) =
            records.into_iter().partition(TxRecord::is_confirmed);
        confirmed.sort_by_key(|r| r.block_number);
        unconfirmed.sort_by_key(|r| r.timestamp_seen);
        let mut blocks: Vec<(u64, u64)> = confirmed
            .iter()
            .filter_map(|r| Some((r.block_number?, r.timestamp_confirmed?)))
            .collect();
        blocks.dedup_by_key(|b| b.0);
        Self { confirmed, unconfirmed, blocks, initial_blocks, blocks_per_second, started: Instant::now() }
    }

    /// Number of distinct blocks currently visible.
    pub fn visible_blocks(&self) -> usize {
        let advanced = (self.started.elapsed().as_secs_f64() * self.blocks_per_second) as usize;
        (self.initial_blocks + advanced).min(self.blocks.len())
    }
}

impl RecordSource for ReplaySource {
    fn records(&self) -> Result<Vec<TxRecord>, String> {
        let visible = self.visible_blocks();
        let Some(&(head, head_time)) = visible.checked_sub(1).and_then(|i| self.blocks.get(i)) else {
            return Ok(Vec::new());
        };
        let mut out: Vec<TxRecord> =
            self.confirmed.iter().take_while(|r| r.block_number <= Some(head)).cloned().collect();
        out.extend(
            self.unconfirmed.iter().take_while(|r| r.timestamp_seen.is_some_and(|s| s <= head_time)).cloned(),
        );
        Ok(out)
    }
}

/// Produces a snapshot from a window. The default implementation fits a
/// fixed [`ModelSpec`] per kind; tests substitute failing trainers.
pub trait Trainer: Send + Sync {
    fn train(&self, kind: ModelKind, window: &Window, version: u64) -> Result<ModelSnapshot, PipelineError>;
}

#[derive(Debug, Clone)]
pub struct SpecTrainer {
    pub specs: BTreeMap<ModelKind, ModelSpec>,
}

impl SpecTrainer {
    pub fn new(specs: impl IntoIterator<Item = ModelSpec>) -> Self {
        Self { specs: specs.into_iter().map(|s| (s.kind(), s)).collect() }
    }
}

impl Default for SpecTrainer {
    fn default() -> Self {
        Self::new(ModelKind::SERVED.map(ModelSpec::default_for))
    }
}

impl Trainer for SpecTrainer {
    fn train(&self, kind: ModelKind, window: &Window, version: u64) -> Result<ModelSnapshot, PipelineError> {
        let spec = self.specs.get(&kind).cloned().unwrap_or_else(|| ModelSpec::default_for(kind));
        snapshot_from_window(window, &spec, version, unix_now())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerEvent {
    Published { kind: ModelKind, version: u64 },
    Skipped { kind: ModelKind, reason: String, consecutive: u32 },
    Alert { kind: ModelKind, consecutive: u32 },
}

/// Retrains one kind at a time per kind and publishes into a registry.
/// Shared by the scheduler and on-demand retrain requests.
pub struct Retrainer {
    pub source: Arc<dyn RecordSource>,
    pub trainer: Arc<dyn Trainer>,
    pub registry: Arc<SnapshotRegistry>,
    pub window: WindowOptions,
    // Held for the duration of a retrain; counts consecutive skips.
    locks: BTreeMap<ModelKind, Mutex<u32>>,
}

impl Retrainer {
    pub fn new(
        source: Arc<dyn RecordSource>,
        trainer: Arc<dyn Trainer>,
        registry: Arc<SnapshotRegistry>,
        window_blocks: u64,
    ) -> Self {
        let locks = [ModelKind::Forest, ModelKind::Mlp, ModelKind::Glm, ModelKind::Baseline]
            .into_iter()
            .map(|k| (k, Mutex::new(0)))
            .collect();
        Self {
            source,
            trainer,
            registry,
            window: WindowOptions { k: window_blocks, ..WindowOptions::default() },
            locks,
        }
    }

    /// Trains `kind` on the current window and swaps it in. On failure the
    /// live snapshot is untouched.
    pub fn retrain(&self, kind: ModelKind) -> Result<Arc<ModelSnapshot>, PipelineError> {
        self.retrain_with_events(kind, &|_| {})
    }

    pub fn retrain_with_events(
        &self,
        kind: ModelKind,
        on_event: &(dyn Fn(SchedulerEvent) + Sync),
    ) -> Result<Arc<ModelSnapshot>, PipelineError> {
        let mut skips = self.locks[&kind].lock().unwrap_or_else(|p| p.into_inner());
        match self.attempt(kind) {
            Ok(snapshot) => {
                *skips = 0;
                info!(%kind, version = snapshot.version, window = %snapshot.window, "published snapshot");
                on_event(SchedulerEvent::Published { kind, version: snapshot.version });
                Ok(snapshot)
            }
            Err(e) => {
                *skips += 1;
                warn!(%kind, error = %e, consecutive = *skips, "retrain skipped; previous snapshot stays live");
                on_event(SchedulerEvent::Skipped { kind, reason: e.to_string(), consecutive: *skips });
                if *skips >= ALERT_AFTER {
                    error!(%kind, consecutive = *skips, "ALERT: retraining keeps failing");
                    on_event(SchedulerEvent::Alert { kind, consecutive: *skips });
                }
                Err(e)
            }
        }
    }

    fn attempt(&self, kind: ModelKind) -> Result<Arc<ModelSnapshot>, PipelineError> {
        let records = self.source.records().map_err(PipelineError::Source)?;
        let window = window_last_k_blocks(&records, &self.window, None).map_err(|e| match e {
            WindowError::NoConfirmed | WindowError::Empty { .. } => PipelineError::Skip(e),
            other => PipelineError::Window(other),
        })?;
        let version = self.registry.version(kind) + 1;
        let snapshot = self.trainer.train(kind, &window, version)?;
        Ok(self.registry.publish(snapshot)?)
    }

    /// Consecutive failed retrains of `kind` so far.
    pub fn consecutive_skips(&self, kind: ModelKind) -> u32 {
        *self.locks[&kind].lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Retrains every kind in `kinds` at its configured interval (the first
/// retrain happens immediately) until `stop` is set. Kinds run on their own
/// threads so a slow fit of one never delays another.
pub fn run_scheduler(
    retrainer: &Retrainer,
    config: &SchedulerConfig,
    kinds: &[ModelKind],
    stop: &AtomicBool,
    on_event: &(dyn Fn(SchedulerEvent) + Sync),
) -> Result<(), SchedulerConfigError> {
    config.validate()?;
    std::thread::scope(|scope| {
        for &kind in kinds {
            let interval = config.interval(kind);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let started = Instant::now();
                    let _ = retrainer.retrain_with_events(kind, on_event);
                    let next = started + interval;
                    while !stop.load(Ordering::Relaxed) {
                        let now = Instant::now();
                        if now >= next {
                            break;
                        }
                        std::thread::sleep((next - now).min(Duration::from_millis(25)));
                    }
                }
            });
        }
    });
    Ok(())
}
