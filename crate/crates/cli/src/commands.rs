//! Command-line front end.
//!
//! Settings are layered: built-in defaults, then `--config FILE`, then each
//! `--set section.key=value`, then the subcommand's own flags.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use gaswait::ingest::{load_records, run_ingest, DatasetStore, HttpTransport, NodeEndpoint, WindowOptions};
use gaswait::metrics::render_table;
use gaswait::pipeline::{
    all_examples, decode_snapshot, encode_snapshot, evaluate_split, predict_curve, query_record,
    render_sweep, run_scheduler, sweep, sweep_specs, train_snapshot, ModelKind, ModelSnapshot,
    ModelSpec, PipelineError, Retrainer, SchedulerEvent, Settings, SnapshotRegistry, SpecTrainer,
    StoreSource,
};
use gaswait::sim::{generate_store, BlockTiming};
use gaswait::tx::TxRecord;

use crate::server::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "gaswait", version, about = "Ethereum transaction confirmation-time prediction")]
pub struct Cli {
    /// Settings file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set forest.trees=250`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic JSONL store from the mempool simulator.
    Simulate(SimulateArgs),
    /// Record pending and confirmed transactions from a node.
    Ingest(IngestArgs),
    /// Train one model on the most recent window of a store.
    Train(TrainArgs),
    /// 80/20 evaluation of one or more models on a store.
    Evaluate(EvaluateArgs),
    /// Predicted delay for gas prices 0-100 gwei.
    Curve(CurveArgs),
    /// Evaluate every variant of a model family.
    Sweep(SweepArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Timing {
    Fixed,
    Exponential,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean arrivals per second.
    #[arg(long)]
    pub arrival_rate: Option<f64>,
    /// Simulated seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_enum)]
    pub block_timing: Option<Timing>,
    #[arg(long)]
    pub gas_price_median: Option<f64>,
    #[arg(long)]
    pub gas_price_sigma: Option<f64>,
    #[arg(long)]
    pub block_capacity: Option<usize>,
    #[arg(long)]
    pub pool_capacity: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, env = "ETH_RPC_URL")]
    pub node_url: Option<String>,
    /// Stop after this many seconds; runs until interrupted otherwise.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "forest")]
    pub model: ModelKind,
    /// Snapshot file to write. An existing snapshot of the same kind there
    /// is superseded with the next version.
    #[arg(long)]
    pub out: PathBuf,
    /// Train on the last N blocks.
    #[arg(long, conflicts_with = "all_blocks")]
    pub window_blocks: Option<u64>,
    /// Train on every block in the store.
    #[arg(long)]
    pub all_blocks: bool,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Repeatable; defaults to forest, mlp and glm.
    #[arg(long)]
    pub model: Vec<ModelKind>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, default_value_t = 21_000)]
    pub gas_limit: u64,
    #[arg(long, default_value_t = 0)]
    pub value_wei: u128,
    #[arg(long, default_value_t = 0)]
    pub nonce: u64,
    /// Print the points as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "forest")]
    pub model: ModelKind,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Snapshot file to serve. Repeatable.
    #[arg(long)]
    pub snapshot: Vec<PathBuf>,
    /// Store to retrain from; enables the scheduler and POST /retrain.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// With --store, accept on-demand retrains but run no periodic ones.
    #[arg(long)]
    pub no_scheduler: bool,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Settings::from_text(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => Settings::default(),
    };
    for o in &cli.overrides {
        s.apply_override(o).with_context(|| format!("--set {o}"))?;
    }
    Ok(s)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut s = settings(&cli)?;
    match cli.command {
        Command::Simulate(a) => simulate(&mut s, a),
        Command::Ingest(a) => ingest(&mut s, a),
        Command::Train(a) => train(&mut s, a),
        Command::Evaluate(a) => evaluate(&mut s, a),
        Command::Curve(a) => curve(a),
        Command::Sweep(a) => run_sweep(&mut s, a),
        Command::Serve(a) => run_serve(&s, a),
    }
}

fn simulate(s: &mut Settings, a: SimulateArgs) -> Result<()> {
    let sim = &mut s.sim;
    if let Some(v) = a.seed { sim.seed = v }
    if let Some(v) = a.arrival_rate { sim.arrival_rate = v }
    if let Some(v) = a.horizon { sim.horizon = v }
    if let Some(v) = a.gas_price_median { sim.median_gas_price_gwei = v }
    if let Some(v) = a.gas_price_sigma { sim.sigma_log = v }
    if let Some(v) = a.block_capacity { sim.block_capacity = v }
    if let Some(v) = a.pool_capacity { sim.pool_capacity = v }
    if let Some(t) = a.block_timing {
        sim.block_timing = match t {
            Timing::Fixed => BlockTiming::Fixed,
            Timing::Exponential => BlockTiming::Exponential,
        }
    }
    let records = generate_store(sim)?;
    info!(records = records.len(), load = sim.load_ratio(), "simulated");
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(BufWriter::new(file), &records).with_context(|| format!("writing {}", path.display()))
        }
        None => write_jsonl(BufWriter::new(std::io::stdout().lock()), &records).context("writing stdout"),
    }
}

fn write_jsonl(mut w: impl Write, records: &[TxRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Sets `stop` on Ctrl-C.
fn stop_on_interrupt(stop: Arc<AtomicBool>) {
    std::thread::spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() else { return };
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            stop.store(true, Ordering::Relaxed);
        }
    });
}

fn ingest(s: &mut Settings, a: IngestArgs) -> Result<()> {
    let url = a.node_url.or(s.node.url.clone()).context("no node url: pass --node-url or set ETH_RPC_URL")?;
    let endpoint = NodeEndpoint { url, request_timeout: s.node.request_timeout, poll_interval: s.node.poll_interval };
    let transport = HttpTransport::new(&endpoint)?;
    let mut store = DatasetStore::open(&a.store)?;
    let stop = Arc::new(AtomicBool::new(false));
    stop_on_interrupt(stop.clone());
    if let Some(secs) = a.duration {
        let d = Duration::try_from_secs_f64(secs).context("--duration")?;
        let stop = stop.clone();
        std::thread::spawn(move || {
            std::thread::sleep(d);
            stop.store(true, Ordering::Relaxed);
        });
    }
    let summary = run_ingest(&transport, &endpoint, &mut store, &stop)?;
    println!(
        "pending written {}, confirmed written {}, duplicates {}, transient errors {}",
        summary.pending_written, summary.confirmed_written, summary.duplicates, summary.transient_errors
    );
    Ok(())
}

fn apply_forest_flags(s: &mut Settings, trees: Option<usize>, leaf: Option<usize>) {
    if let Some(t) = trees { s.forest.tree_count = t }
    if let Some(l) = leaf { s.forest.min_samples_leaf = l }
}

fn spec_for(s: &Settings, kind: ModelKind) -> ModelSpec {
    match kind {
        ModelKind::Forest => ModelSpec::Forest(s.forest.clone()),
        ModelKind::Mlp => ModelSpec::Mlp(s.mlp.clone()),
        ModelKind::Glm => ModelSpec::Glm(s.glm.clone()),
        ModelKind::Baseline => ModelSpec::Baseline,
    }
}

/// Records of a store that must contain at least one confirmed transaction.
fn load_store(path: &Path) -> Result<Vec<TxRecord>> {
    let records = load_records(path).with_context(|| format!("reading store {}", path.display()))?;
    if !records.iter().any(TxRecord::is_confirmed) {
        bail!("store {} has no confirmed transactions", path.display());
    }
    Ok(records)
}

fn read_snapshot(path: &Path) -> Result<ModelSnapshot> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_snapshot(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Writes via a sibling temp file so readers never see a partial snapshot.
fn write_snapshot(path: &Path, snapshot: &ModelSnapshot) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_snapshot(snapshot)).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn train(s: &mut Settings, a: TrainArgs) -> Result<()> {
    apply_forest_flags(s, a.trees, a.min_samples_leaf);
    let records = load_store(&a.store)?;
    let k = if a.all_blocks { u64::MAX } else { a.window_blocks.unwrap_or(s.scheduler.window_blocks) };
    let previous = match a.out.exists() {
        true => match read_snapshot(&a.out) {
            Ok(old) if old.kind == a.model => old.version,
            Ok(_) => 0,
            Err(e) => {
                warn!(error = %format!("{e:#}"), "existing snapshot unreadable; starting at version 1");
                0
            }
        },
        false => 0,
    };
    let window = WindowOptions { k, ..WindowOptions::default() };
    let snapshot = train_snapshot(&records, &spec_for(s, a.model), &window, previous).map_err(|e| match e {
        PipelineError::Skip(w) => anyhow::anyhow!("store {}: nothing to train on ({w})", a.store.display()),
        other => other.into(),
    })?;
    write_snapshot(&a.out, &snapshot)?;
    println!("{} snapshot v{} trained on {} -> {}", snapshot.kind, snapshot.version, snapshot.window, a.out.display());
    Ok(())
}

fn evaluate(s: &mut Settings, a: EvaluateArgs) -> Result<()> {
    apply_forest_flags(s, a.trees, a.min_samples_leaf);
    let records = load_store(&a.store)?;
    let fraction = a.train_fraction.unwrap_or(s.eval.train_fraction);
    let seed = a.seed.unwrap_or(s.eval.seed);
    let kinds = if a.model.is_empty() { ModelKind::SERVED.to_vec() } else { a.model };
    let mut reports = Vec::new();
    for kind in kinds {
        let e = evaluate_split(&records, fraction, &spec_for(s, kind), seed)
            .with_context(|| format!("evaluating {kind} on {}", a.store.display()))?;
        info!(%kind, train_time = ?e.train_time, "evaluated");
        reports.push(e.report);
    }
    print!("{}", render_table(&reports));
    for r in &reports {
        println!("{}", r.to_json_line());
    }
    Ok(())
}

fn curve(a: CurveArgs) -> Result<()> {
    let snapshot = read_snapshot(&a.snapshot)?;
    let template = query_record(0.0, a.gas_limit, a.value_wei, a.nonce);
    let c = predict_curve(&snapshot, &template, &snapshot.context)?;
    if a.json {
        println!("{}", serde_json::to_string(&c)?);
    } else {
        println!("{} v{} ({})", snapshot.kind.display_name(), snapshot.version, snapshot.window);
        print!("{}", c.render_table());
    }
    Ok(())
}

fn run_sweep(s: &mut Settings, a: SweepArgs) -> Result<()> {
    let records = load_store(&a.store)?;
    let window = all_examples(&records).with_context(|| format!("store {}", a.store.display()))?;
    let rows = sweep(
        &window.examples,
        &sweep_specs(a.model),
        a.train_fraction.unwrap_or(s.eval.train_fraction),
        a.seed.unwrap_or(s.eval.seed),
        &window.descriptor(),
    )?;
    print!("{}", render_sweep(&rows));
    Ok(())
}

fn run_serve(s: &Settings, a: ServeArgs) -> Result<()> {
    s.scheduler.validate()?;
    let registry = Arc::new(SnapshotRegistry::new());
    for path in &a.snapshot {
        let snap = read_snapshot(path)?;
        info!(kind = %snap.kind, version = snap.version, path = %path.display(), "loaded snapshot");
        registry.install(snap).with_context(|| format!("installing {}", path.display()))?;
    }
    if a.snapshot.is_empty() && a.store.is_none() {
        bail!("nothing to serve: pass --snapshot or --store");
    }
    let retrainer = a.store.as_ref().map(|path| {
        let trainer = SpecTrainer::new(ModelKind::SERVED.map(|k| spec_for(s, k)));
        Arc::new(Retrainer::new(
            Arc::new(StoreSource { path: path.clone() }),
            Arc::new(trainer),
            registry.clone(),
            s.scheduler.window_blocks,
        ))
    });

    let stop = Arc::new(AtomicBool::new(false));
    let scheduler = match (&retrainer, a.no_scheduler) {
        (Some(r), false) => {
            let (r, stop, config) = (r.clone(), stop.clone(), s.scheduler.clone());
            Some(std::thread::spawn(move || {
                let log = |e: SchedulerEvent| {
                    if let SchedulerEvent::Alert { kind, consecutive } = e {
                        eprintln!("ALERT: {kind} retraining skipped {consecutive} times in a row");
                    }
                };
                run_scheduler(&r, &config, &ModelKind::SERVED, &stop, &log)
            }))
        }
        _ => None,
    };

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let state = AppState { registry, retrainer };
    let result = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")
    });
    stop.store(true, Ordering::Relaxed);
    if let Some(h) = scheduler {
        let _ = h.join();
    }
    result
}
