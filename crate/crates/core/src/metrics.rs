//! Error measures for confirmation-time predictions: MAE, RMSE, MAPE and
//! PRED(n), plus the tabular and JSON report that bundles them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// PRED threshold reported by default.
pub const DEFAULT_PRED_THRESHOLD: f64 = 0.20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no evaluation pairs")]
    Empty,
    #[error("pair {index}: actual value {act} is below the one-block floor")]
    ActBelowFloor { index: usize, act: f64 },
    #[error("pair {index} is not finite")]
    NonFinite { index: usize },
    #[error("PRED threshold must be non-negative, got {0}")]
    InvalidThreshold(f64),
}

/// An actual/estimated confirmation delay, both in blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub act: f64,
    pub est: f64,
}

impl EvalPair {
    pub fn new(act: f64, est: f64) -> Self {
        Self { act, est }
    }

    fn abs_err(&self) -> f64 {
        (self.act - self.est).abs()
    }

    fn ape(&self) -> f64 {
        self.abs_err() / self.act
    }
}

fn non_empty(pairs: &[EvalPair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(index) = pairs.iter().position(|p| !(p.act.is_finite() && p.est.is_finite())) {
        return Err(MetricError::NonFinite { index });
    }
    Ok(())
}

fn floored(pairs: &[EvalPair]) -> Result<(), MetricError> {
    non_empty(pairs)?;
    match pairs.iter().position(|p| p.act < 1.0) {
        Some(index) => Err(MetricError::ActBelowFloor { index, act: pairs[index].act }),
        None => Ok(()),
    }
}

pub fn mae(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    non_empty(pairs)?;
    Ok(pairs.iter().map(EvalPair::abs_err).sum::<f64>() / pairs.len() as f64)
}

pub fn rmse(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    non_empty(pairs)?;
    let mse = pairs.iter().map(|p| p.abs_err() * p.abs_err()).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    floored(pairs)?;
    Ok(100.0 * pairs.iter().map(EvalPair::ape).sum::<f64>() / pairs.len() as f64)
}

/// Fraction of pairs whose absolute percentage error `|act - est| / act` is at
/// most `threshold`.
pub fn pred_n(pairs: &[EvalPair], threshold: f64) -> Result<f64, MetricError> {
    floored(pairs)?;
    if !(threshold >= 0.0) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    let hits = pairs.iter().filter(|p| p.ape() <= threshold).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// All four measures for one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    #[serde(rename = "mape_pct")]
    pub mape: f64,
    /// Keyed by the threshold formatted with two decimals, e.g. `"0.20"`.
    pub pred: BTreeMap<String, f64>,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(rename = "window")]
    pub window_descriptor: String,
}

pub fn threshold_key(threshold: f64) -> String {
    format!("{threshold:.2}")
}

pub fn report(
    pairs: &[EvalPair],
    model_name: &str,
    window_descriptor: &str,
) -> Result<MetricReport, MetricError> {
    report_with_thresholds(pairs, model_name, window_descriptor, &[])
}

/// Like [`report`], with PRED evaluated at `extra` thresholds in addition to
/// [`DEFAULT_PRED_THRESHOLD`].
pub fn report_with_thresholds(
    pairs: &[EvalPair],
    model_name: &str,
    window_descriptor: &str,
    extra: &[f64],
) -> Result<MetricReport, MetricError> {
    let mut pred = BTreeMap::new();
    for &t in std::iter::once(&DEFAULT_PRED_THRESHOLD).chain(extra) {
        pred.insert(threshold_key(t), pred_n(pairs, t)?);
    }
    Ok(MetricReport {
        n: pairs.len(),
        mae: mae(pairs)?,
        rmse: rmse(pairs)?,
        mape: mape(pairs)?,
        pred,
        model_name: model_name.to_string(),
        window_descriptor: window_descriptor.to_string(),
    })
}

impl MetricReport {
    pub fn default_pred(&self) -> f64 {
        self.pred[&threshold_key(DEFAULT_PRED_THRESHOLD)]
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// One row of a rendered result table.
pub struct TableRow<'a> {
    pub label: &'a str,
    pub cells: Vec<String>,
}

/// Renders rows as a left/right aligned plain-text table.
pub fn render_rows(header: &[&str], rows: &[TableRow<'_>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        widths[0] = widths[0].max(row.label.chars().count());
        for (j, cell) in row.cells.iter().enumerate().take(cols - 1) {
            widths[j + 1] = widths[j + 1].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, first: &str, rest: &[String]| {
        let _ = write!(out, "{first:<w$}", w = widths[0]);
        for (j, cell) in rest.iter().enumerate() {
            let _ = write!(out, "  {cell:>w$}", w = widths[j + 1]);
        }
        out.push('\n');
    };
    let head_rest: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    line(&mut out, header[0], &head_rest);
    let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        line(&mut out, row.label, &row.cells);
    }
    out
}

/// Metric cells in the fixed column order MAE, RMSE, MAPE, Pred (0.20).
pub fn metric_cells(r: &MetricReport) -> Vec<String> {
    vec![
        format!("{:.4}", r.mae),
        format!("{:.4}", r.rmse),
        format!("{:.2}%", r.mape),
        format!("{:.2}%", 100.0 * r.default_pred()),
    ]
}

pub const METRIC_HEADER: [&str; 5] = ["Model", "MAE", "RMSE", "MAPE", "Pred (0.20)"];

/// Renders reports as a results table, one row per model.
pub fn render_table(reports: &[MetricReport]) -> String {
    let rows: Vec<TableRow<'_>> = reports
        .iter()
        .map(|r| TableRow { label: &r.model_name, cells: metric_cells(r) })
        .collect();
    render_rows(&METRIC_HEADER, &rows)
}
