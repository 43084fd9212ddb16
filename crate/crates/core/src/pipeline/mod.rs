//! Training snapshots, evaluation, variant sweeps, curve prediction and the
//! retraining scheduler.

pub mod codec;
pub mod config;
pub mod model;
pub mod ops;
pub mod query;
pub mod registry;
pub mod scheduler;

pub use codec::{decode_snapshot, encode_snapshot, CodecError};
pub use config::{ConfigError, Settings};
pub use model::{Model, ModelKind, ModelSnapshot, ModelSpec, WindowDescriptor};
pub use ops::{
    all_examples, curve_grid, evaluate_examples, evaluate_split, fit_model, predict_curve, predict_one,
    render_sweep, sweep, sweep_specs, train_snapshot, Curve, CurvePoint, Evaluation, PipelineError,
    Prediction, SweepRow, snapshot_from_window, unix_now, with_gas_price,
};
pub use query::{parse_model_query, parse_predict_query, query_record, PredictQuery, QueryError};
pub use registry::{RegistryError, SnapshotRegistry};
pub use scheduler::{
    run_scheduler, RecordSource, ReplaySource, Retrainer, SchedulerConfig, SchedulerEvent, SpecTrainer,
    StoreSource, Trainer, ALERT_AFTER,
};
