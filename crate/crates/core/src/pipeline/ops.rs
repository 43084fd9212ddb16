use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use super::registry::RegistryError;
use super::model::{Model, ModelKind, ModelSnapshot, ModelSpec, WindowDescriptor};
use crate::forest::{fit_forest, forest_variants};
use crate::glm::fit_poisson_with;
use crate::ingest::window::{window_last_k_blocks, Window, WindowError, WindowOptions};
use crate::metrics::{metric_cells, render_rows, report, EvalPair, MetricError, MetricReport, TableRow};
use crate::mlp::{mlp_variants, train_mlp};
use crate::tx::{
    extract_features, gwei_to_wei, split_dataset, LabeledExample, NetworkContext, TxError, TxRecord,
    GAS_PRICE_FEATURE,
};
use crate::BLOCK_SECONDS;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Nothing to train on; the previous snapshot stays live.
    #[error("skipping: {0}")]
    Skip(WindowError),
    #[error("{kind} training failed: {reason}")]
    Training { kind: ModelKind, reason: String },
    #[error(transparent)]
    Window(WindowError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Publish(#[from] RegistryError),
    #[error("record source unavailable: {0}")]
    Source(String),
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Fits a model of the requested kind.
pub fn fit_model(spec: &ModelSpec, examples: &[LabeledExample]) -> Result<Model, PipelineError> {
    let failed = |reason: String| PipelineError::Training { kind: spec.kind(), reason };
    match spec {
        ModelSpec::Forest(c) => fit_forest(examples, c).map(Model::Forest).map_err(|e| failed(e.to_string())),
        ModelSpec::Mlp(c) => train_mlp(examples, c).map(Model::Mlp).map_err(|e| failed(e.to_string())),
        ModelSpec::Glm(o) => fit_poisson_with(examples, o).map(Model::Glm).map_err(|e| failed(e.to_string())),
        ModelSpec::Baseline => {
            if examples.is_empty() {
                return Err(failed("no training examples".into()));
            }
            let mean = examples.iter().map(|e| e.label_blocks).sum::<f64>() / examples.len() as f64;
            Ok(Model::Baseline { mean })
        }
    }
}

/// Fits `spec` on an already extracted window and stamps the result.
pub fn snapshot_from_window(
    window: &Window,
    spec: &ModelSpec,
    version: u64,
    trained_at: u64,
) -> Result<ModelSnapshot, PipelineError> {
    let model = fit_model(spec, &window.examples)?;
    Ok(ModelSnapshot {
        kind: spec.kind(),
        version,
        trained_at,
        window: WindowDescriptor {
            first_block: window.first_block,
            head: window.head,
            examples: window.examples.len(),
        },
        context: window.current_context,
        model,
    })
}

/// Trains on the last `window.k` blocks of `records`. The snapshot gets
/// version `previous_version + 1`. An empty window yields
/// [`PipelineError::Skip`].
pub fn train_snapshot(
    records: &[TxRecord],
    spec: &ModelSpec,
    window: &WindowOptions,
    previous_version: u64,
) -> Result<ModelSnapshot, PipelineError> {
    let w = window_last_k_blocks(records, window, None).map_err(|e| match e {
        WindowError::NoConfirmed | WindowError::Empty { .. } => PipelineError::Skip(e),
        other => PipelineError::Window(other),
    })?;
    let start = Instant::now();
    let snapshot = snapshot_from_window(&w, spec, previous_version + 1, unix_now())?;
    info!(kind = %spec.kind(), version = snapshot.version, window = %w.descriptor(), elapsed = ?start.elapsed(), "trained snapshot");
    Ok(snapshot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub blocks: f64,
    pub seconds: f64,
}

/// Predicted delay for an unconfirmed transaction under `ctx`.
pub fn predict_one(
    snapshot: &ModelSnapshot,
    record: &TxRecord,
    ctx: &NetworkContext,
) -> Result<Prediction, PipelineError> {
    let features = extract_features(record, ctx)?;
    let blocks = snapshot.model.predict(&features);
    Ok(Prediction { blocks, seconds: blocks * BLOCK_SECONDS })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gas_price_gwei: f64,
    pub blocks: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Aligned text table, one row per grid price.
    pub fn render_table(&self) -> String {
        let labels: Vec<String> = self.points.iter().map(|p| format!("{}", p.gas_price_gwei)).collect();
        let rows: Vec<TableRow<'_>> = self
            .points
            .iter()
            .zip(&labels)
            .map(|(p, label)| TableRow {
                label,
                cells: vec![format!("{:.3}", p.blocks), format!("{:.1}", p.seconds)],
            })
            .collect();
        render_rows(&["Gas price (gwei)", "Blocks", "Seconds"], &rows)
    }
}

/// The integer gwei prices 0 through 100.
pub fn curve_grid() -> Vec<f64> {
    (0..=100).map(f64::from).collect()
}

/// Predictions for `template` with only its gas price varied over
/// [`curve_grid`].
pub fn predict_curve(
    snapshot: &ModelSnapshot,
    template: &TxRecord,
    ctx: &NetworkContext,
) -> Result<Curve, PipelineError> {
    let points = curve_grid()
        .into_iter()
        .map(|g| {
            let mut features = extract_features(template, ctx)?;
            features[GAS_PRICE_FEATURE] = g;
            let blocks = snapshot.model.predict(&features);
            Ok(CurvePoint { gas_price_gwei: g, blocks, seconds: blocks * BLOCK_SECONDS })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(Curve { points })
}

/// Convenience: a template record at the given gas price in gwei.
pub fn with_gas_price(template: &TxRecord, gwei: f64) -> TxRecord {
    TxRecord { gas_price: gwei_to_wei(gwei), ..template.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub train_time: Duration,
}

/// Splits, trains on the first part and reports metrics on the rest.
pub fn evaluate_examples(
    examples: &[LabeledExample],
    train_fraction: f64,
    spec: &ModelSpec,
    seed: u64,
    model_name: &str,
    window_descriptor: &str,
) -> Result<Evaluation, PipelineError> {
    let (train, test) = split_dataset(examples, train_fraction, seed)?;
    let start = Instant::now();
    let model = fit_model(spec, &train)?;
    let train_time = start.elapsed();
    let pairs: Vec<EvalPair> =
        test.iter().map(|e| EvalPair::new(e.label_blocks, model.predict(&e.features))).collect();
    Ok(Evaluation { report: report(&pairs, model_name, window_descriptor)?, train_time })
}

/// Every labelled example in the store, in block order.
pub fn all_examples(records: &[TxRecord]) -> Result<Window, PipelineError> {
    let opts = WindowOptions { k: u64::MAX, ..WindowOptions::default() };
    window_last_k_blocks(records, &opts, None).map_err(|e| match e {
        WindowError::NoConfirmed | WindowError::Empty { .. } => PipelineError::Skip(e),
        other => PipelineError::Window(other),
    })
}

/// Static-dataset protocol: all stored examples, split once.
pub fn evaluate_split(
    records: &[TxRecord],
    train_fraction: f64,
    spec: &ModelSpec,
    seed: u64,
) -> Result<Evaluation, PipelineError> {
    let window = all_examples(records)?;
    evaluate_examples(
        &window.examples,
        train_fraction,
        spec,
        seed,
        spec.kind().display_name(),
        &window.descriptor(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub outcome: Result<MetricReport, String>,
    pub train_time: Duration,
}

/// The variants compared in a sweep of `kind`.
pub fn sweep_specs(kind: ModelKind) -> Vec<ModelSpec> {
    match kind {
        ModelKind::Forest => forest_variants().into_iter().map(ModelSpec::Forest).collect(),
        ModelKind::Mlp => mlp_variants().into_iter().map(ModelSpec::Mlp).collect(),
        other => vec![ModelSpec::default_for(other)],
    }
}

/// Evaluates each variant on the same split. A failing variant is reported
/// and the sweep moves on.
pub fn sweep(
    examples: &[LabeledExample],
    specs: &[ModelSpec],
    train_fraction: f64,
    seed: u64,
    window_descriptor: &str,
) -> Result<Vec<SweepRow>, PipelineError> {
    // Validate the split up front so a bad fraction fails the whole sweep.
    split_dataset(examples, train_fraction, seed)?;
    Ok(specs
        .iter()
        .map(|spec| {
            let variant = spec.label();
            match evaluate_examples(examples, train_fraction, spec, seed, &variant, window_descriptor) {
                Ok(e) => SweepRow { variant, outcome: Ok(e.report), train_time: e.train_time },
                Err(e) => {
                    warn!(%variant, error = %e, "sweep variant failed");
                    SweepRow { variant, outcome: Err(e.to_string()), train_time: Duration::ZERO }
                }
            }
        })
        .collect())
}

/// Metric table followed by the training-time table.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let metric_rows: Vec<TableRow<'_>> = rows
        .iter()
        .map(|r| TableRow {
            label: &r.variant,
            cells: match &r.outcome {
                Ok(report) => metric_cells(report),
                Err(e) => vec![format!("failed: {e}"), String::new(), String::new(), String::new()],
            },
        })
        .collect();
    let time_rows: Vec<TableRow<'_>> = rows
        .iter()
        .map(|r| TableRow {
            label: &r.variant,
            cells: vec![match r.outcome {
                Ok(_) => format!("{:.2}", r.train_time.as_secs_f64()),
                Err(_) => "-".into(),
            }],
        })
        .collect();
    let mut out = render_rows(&["Variant", "MAE", "RMSE", "MAPE", "Pred (0.20)"], &metric_rows);
    out.push('\n');
    out.push_str(&render_rows(&["Variant", "Training time (s)"], &time_rows));
    out
}
