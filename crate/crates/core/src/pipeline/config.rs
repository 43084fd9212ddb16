//! Flat `section.key = value` settings files.
//!
//! ```text
//! # comments and blank lines are ignored
//! sim.arrival_rate = 12
//! scheduler.window_blocks = 100
//! node.url = http://127.0.0.1:8545
//! ```
//!
//! Every key can also be applied one at a time through [`Settings::apply`],
//! which is how command-line overrides are layered on top of a file.

use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use super::scheduler::SchedulerConfig;
use crate::forest::ForestConfig;
use crate::glm::GlmOptions;
use crate::mlp::MlpConfig;
use crate::sim::{BlockTiming, SimConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("line {line}: `{key}` set twice")]
    Duplicate { line: usize, key: String },
}

impl ConfigError {
    fn at_line(self, line: usize) -> Self {
        match self {
            ConfigError::Syntax { .. } => ConfigError::Syntax { line },
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
            ConfigError::BadValue { key, reason, .. } => ConfigError::BadValue { line, key, reason },
            ConfigError::Duplicate { key, .. } => ConfigError::Duplicate { line, key },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSettings {
    pub url: Option<String>,
    pub request_timeout: Duration,
    pub poll_interval: Duration,
}

impl Default for NodeSettings {
    fn default() -> Self {
        Self { url: None, request_timeout: Duration::from_secs(10), poll_interval: Duration::from_secs(1) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub sim: SimConfig,
    pub scheduler: SchedulerConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub glm: GlmOptions,
    pub node: NodeSettings,
    pub eval: EvalSettings,
}

/// Every recognised key, in documentation order.
pub const KEYS: &[&str] = &[
    "sim.arrival_rate",
    "sim.median_gas_price_gwei",
    "sim.sigma_log",
    "sim.block_interval",
    "sim.block_timing",
    "sim.block_capacity",
    "sim.pool_capacity",
    "sim.horizon",
    "sim.seed",
    "sim.start_time",
    "sim.start_block",
    "sim.senders",
    "scheduler.forest_interval",
    "scheduler.mlp_interval",
    "scheduler.glm_interval",
    "scheduler.window_blocks",
    "forest.trees",
    "forest.min_samples_leaf",
    "forest.max_features",
    "forest.seed",
    "mlp.hidden_layers",
    "mlp.alpha",
    "mlp.learning_rate",
    "mlp.batch_size",
    "mlp.max_epochs",
    "mlp.seed",
    "mlp.early_stop_tolerance",
    "mlp.validation_fraction",
    "glm.max_iterations",
    "glm.tolerance",
    "node.url",
    "node.request_timeout",
    "node.poll_interval",
    "eval.train_fraction",
    "eval.seed",
];

/// Splits a settings file into `(line, key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line });
        };
        let (key, value) = (key.trim(), value.trim());
        let well_formed = key
            .split_once('.')
            .is_some_and(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'));
        if !well_formed || key.chars().any(char::is_whitespace) {
            return Err(ConfigError::Syntax { line });
        }
        if out.iter().any(|(_, k, _): &(usize, String, String)| k == key) {
            return Err(ConfigError::Duplicate { line, key: key.to_string() });
        }
        out.push((line, key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue { line: 0, key: key.into(), reason: e.to_string() })
}

fn seconds(key: &str, value: &str) -> Result<Duration, ConfigError> {
    let s: f64 = parse(key, value)?;
    Duration::try_from_secs_f64(s).map_err(|e| ConfigError::BadValue { line: 0, key: key.into(), reason: e.to_string() })
}

impl Settings {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut settings = Settings::default();
        for (line, key, value) in parse_entries(text)? {
            settings.apply(&key, &value).map_err(|e| e.at_line(line))?;
        }
        Ok(settings)
    }

    /// Sets one key. Errors carry line 0; file parsing fills in the line.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "sim.arrival_rate" => self.sim.arrival_rate = parse(key, value)?,
            "sim.median_gas_price_gwei" => self.sim.median_gas_price_gwei = parse(key, value)?,
            "sim.sigma_log" => self.sim.sigma_log = parse(key, value)?,
            "sim.block_interval" => self.sim.block_interval = parse(key, value)?,
            "sim.block_timing" => {
                self.sim.block_timing = match value {
                    "fixed" => BlockTiming::Fixed,
                    "exponential" => BlockTiming::Exponential,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line: 0,
                            key: key.into(),
                            reason: "expected fixed or exponential".into(),
                        })
                    }
                }
            }
            "sim.block_capacity" => self.sim.block_capacity = parse(key, value)?,
            "sim.pool_capacity" => self.sim.pool_capacity = parse(key, value)?,
            "sim.horizon" => self.sim.horizon = parse(key, value)?,
            "sim.seed" => self.sim.seed = parse(key, value)?,
            "sim.start_time" => self.sim.start_time = parse(key, value)?,
            "sim.start_block" => self.sim.start_block = parse(key, value)?,
            "sim.senders" => self.sim.senders = parse(key, value)?,
            "scheduler.forest_interval" => self.scheduler.forest_interval = seconds(key, value)?,
            "scheduler.mlp_interval" => self.scheduler.mlp_interval = seconds(key, value)?,
            "scheduler.glm_interval" => self.scheduler.glm_interval = seconds(key, value)?,
            "scheduler.window_blocks" => self.scheduler.window_blocks = parse(key, value)?,
            "forest.trees" => self.forest.tree_count = parse(key, value)?,
            "forest.min_samples_leaf" => self.forest.min_samples_leaf = parse(key, value)?,
            "forest.max_features" => self.forest.max_features = parse(key, value)?,
            "forest.seed" => self.forest.seed = parse(key, value)?,
            "mlp.hidden_layers" => {
                self.mlp.hidden_layer_sizes =
                    value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_, _>>()?
            }
            "mlp.alpha" => self.mlp.l2_alpha = parse(key, value)?,
            "mlp.learning_rate" => self.mlp.learning_rate = parse(key, value)?,
            "mlp.batch_size" => self.mlp.batch_size = parse(key, value)?,
            "mlp.max_epochs" => self.mlp.max_epochs = parse(key, value)?,
            "mlp.seed" => self.mlp.seed = parse(key, value)?,
            "mlp.early_stop_tolerance" => self.mlp.early_stop_tolerance = parse(key, value)?,
            "mlp.validation_fraction" => self.mlp.validation_fraction = parse(key, value)?,
            "glm.max_iterations" => self.glm.max_iterations = parse(key, value)?,
            "glm.tolerance" => self.glm.tolerance = parse(key, value)?,
            "node.url" => self.node.url = Some(value.to_string()),
            "node.request_timeout" => self.node.request_timeout = seconds(key, value)?,
            "node.poll_interval" => self.node.poll_interval = seconds(key, value)?,
            "eval.train_fraction" => self.eval.train_fraction = parse(key, value)?,
            "eval.seed" => self.eval.seed = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() }),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.apply(key.trim(), value.trim())
    }
}
