use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::forest::{Forest, ForestConfig};
use crate::glm::{GlmModel, GlmOptions};
use crate::mlp::{MlpConfig, MlpModel};
use crate::tx::{Features, NetworkContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Forest,
    Mlp,
    Glm,
    /// Predicts the mean training label; a yardstick, never served.
    Baseline,
}

impl ModelKind {
    pub const SERVED: [ModelKind; 3] = [ModelKind::Forest, ModelKind::Mlp, ModelKind::Glm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Mlp => "mlp",
            ModelKind::Glm => "glm",
            ModelKind::Baseline => "baseline",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Forest => "Random Forest",
            ModelKind::Mlp => "MLP",
            ModelKind::Glm => "Poisson GLM",
            ModelKind::Baseline => "Mean baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown model kind {0:?} (expected forest, mlp, glm or baseline)")]
pub struct UnknownKind(pub String);

impl FromStr for ModelKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forest" => Ok(ModelKind::Forest),
            "mlp" => Ok(ModelKind::Mlp),
            "glm" => Ok(ModelKind::Glm),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(UnknownKind(s.to_string())),
        }
    }
}

/// What to train: a model kind together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Forest(ForestConfig),
    Mlp(MlpConfig),
    Glm(GlmOptions),
    Baseline,
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Forest(_) => ModelKind::Forest,
            ModelSpec::Mlp(_) => ModelKind::Mlp,
            ModelSpec::Glm(_) => ModelKind::Glm,
            ModelSpec::Baseline => ModelKind::Baseline,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Forest => ModelSpec::Forest(ForestConfig::default()),
            ModelKind::Mlp => ModelSpec::Mlp(MlpConfig::default()),
            ModelKind::Glm => ModelSpec::Glm(GlmOptions::default()),
            ModelKind::Baseline => ModelSpec::Baseline,
        }
    }

    /// Variant name as used in sweep tables.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Forest(c) => c.label(),
            ModelSpec::Mlp(c) => c.label(),
            ModelSpec::Glm(_) => "Poisson GLM".into(),
            ModelSpec::Baseline => "Mean baseline".into(),
        }
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(Forest),
    Mlp(MlpModel),
    Glm(GlmModel),
    Baseline { mean: f64 },
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Forest,
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Glm(_) => ModelKind::Glm,
            Model::Baseline { .. } => ModelKind::Baseline,
        }
    }

    /// Predicted delay in blocks, never below one block.
    pub fn predict(&self, x: &Features) -> f64 {
        let raw = match self {
            Model::Forest(f) => f.predict(x),
            Model::Mlp(m) => m.predict(x),
            Model::Glm(g) => g.predict(x),
            Model::Baseline { mean } => *mean,
        };
        raw.max(1.0)
    }
}

/// Block range and size of the data a snapshot was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDescriptor {
    pub first_block: u64,
    pub head: u64,
    pub examples: usize,
}

impl fmt::Display for WindowDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "blocks {}-{} ({} examples)", self.first_block, self.head, self.examples)
    }
}

/// An immutable trained model plus everything needed to use and audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub kind: ModelKind,
    pub version: u64,
    /// Unix seconds.
    pub trained_at: u64,
    pub window: WindowDescriptor,
    /// Network context at the head of the training window; the default
    /// context for curve queries.
    pub context: NetworkContext,
    pub model: Model,
}

impl ModelSnapshot {
    /// Means and standard deviations the model standardizes its inputs with,
    /// if any.
    pub fn normalization(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.model {
            Model::Mlp(m) => Some((m.scaler.means.clone(), m.scaler.sigmas.clone())),
            Model::Glm(g) => Some((g.feature_means.to_vec(), g.feature_sigmas.to_vec())),
            _ => None,
        }
    }
}
