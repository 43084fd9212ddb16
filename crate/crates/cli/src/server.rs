//! HTTP front end over the snapshot registry.
//!
//! Handlers only ever clone an `Arc` of a complete snapshot, so a retrain
//! publishing mid-request cannot produce a mixed answer.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;
use tracing::info;

use gaswait::pipeline::{
    parse_model_query, parse_predict_query, predict_curve, predict_one, query_record, ModelKind,
    PipelineError, Retrainer, SnapshotRegistry,
};

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<SnapshotRegistry>,
    /// Present when the service was started with a record source.
    pub retrainer: Option<Arc<Retrainer>>,
}

fn error(status: StatusCode, reason: &str, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string(), "reason": reason }))).into_response()
}

fn bad_request(message: impl ToString) -> Response {
    error(StatusCode::BAD_REQUEST, "invalid_query", message)
}

fn no_snapshot(kind: ModelKind) -> Response {
    error(
        StatusCode::SERVICE_UNAVAILABLE,
        "no_live_snapshot",
        format!("no live {kind} snapshot"),
    )
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    versions: BTreeMap<ModelKind, Option<u64>>,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let live = state.registry.versions();
    let versions = ModelKind::SERVED.iter().map(|k| (*k, live.get(k).copied())).collect();
    Json(Health { status: "ok", versions })
}

#[derive(Serialize)]
pub struct PredictResponse {
    pub blocks: f64,
    pub seconds: f64,
    pub model: ModelKind,
    pub model_version: u64,
    pub window: String,
}

async fn predict(State(state): State<AppState>, RawQuery(query): RawQuery) -> Response {
    let query = match parse_predict_query(query.as_deref().unwrap_or("")) {
        Ok(q) => q,
        Err(e) => return bad_request(e),
    };
    let Some(snapshot) = state.registry.get(query.model) else {
        return no_snapshot(query.model);
    };
    match predict_one(&snapshot, &query.to_record(), &snapshot.context) {
        Ok(p) => Json(PredictResponse {
            blocks: p.blocks,
            seconds: p.seconds,
            model: snapshot.kind,
            model_version: snapshot.version,
            window: snapshot.window.to_string(),
        })
        .into_response(),
        Err(e) => bad_request(e),
    }
}

async fn curve(State(state): State<AppState>, RawQuery(query): RawQuery) -> Response {
    let kind = match parse_model_query(query.as_deref().unwrap_or("")) {
        Ok(k) => k,
        Err(e) => return bad_request(e),
    };
    let Some(snapshot) = state.registry.get(kind) else {
        return no_snapshot(kind);
    };
    match predict_curve(&snapshot, &query_record(0.0, 21_000, 0, 0), &snapshot.context) {
        Ok(c) => Json(json!({
            "points": c.points,
            "model": snapshot.kind,
            "model_version": snapshot.version,
        }))
        .into_response(),
        Err(e) => bad_request(e),
    }
}

async fn retrain(State(state): State<AppState>, RawQuery(query): RawQuery) -> Response {
    let kind = match parse_model_query(query.as_deref().unwrap_or("")) {
        Ok(k) => k,
        Err(e) => return bad_request(e),
    };
    let Some(retrainer) = state.retrainer.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no_record_source", "service has no record store to retrain from");
    };
    match tokio::task::spawn_blocking(move || retrainer.retrain(kind)).await {
        Ok(Ok(snapshot)) => Json(json!({ "version": snapshot.version, "model": kind })).into_response(),
        Ok(Err(PipelineError::Skip(e))) => error(StatusCode::SERVICE_UNAVAILABLE, "empty_window", e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "training_failed", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "training_failed", e),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/predict", get(predict))
        .route("/curve", get(curve))
        .route("/retrain", post(retrain))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
