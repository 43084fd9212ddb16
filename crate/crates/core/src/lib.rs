//! Confirmation-time prediction for Ethereum transactions.
//!
//! The crate estimates how many blocks a pending transaction will wait before
//! it is mined, given its gas price and a handful of transaction and network
//! features. Three regressors are provided and compared:
//!
//! * [`forest`]: bagged CART regression trees,
//! * [`mlp`]: a ReLU multilayer perceptron trained by backpropagation,
//! * [`glm`]: a Poisson log-link GLM fitted by IRLS, the statistical baseline.
//!
//! Data comes either from a live node ([`ingest`]) or from the synthetic
//! mempool in [`sim`]; both produce the same JSONL record format. The
//! [`pipeline`] module ties everything together: snapshot training,
//! sliding-window retraining, evaluation, variant sweeps and curve queries.

pub mod forest;
pub mod glm;
pub mod ingest;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod sim;
pub mod stats;
pub mod tx;

pub use tx::{Features, LabeledExample, NetworkContext, TxRecord, N_FEATURES};

/// Seconds per block used to convert between block and second estimates.
pub const BLOCK_SECONDS: f64 = 15.0;
