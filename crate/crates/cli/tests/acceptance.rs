//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Nothing here touches the network except loopback.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use gaswait::forest::{fit_tree, ForestConfig, TreeNode};
use gaswait::glm::{fit_counts, GlmOptions};
use gaswait::ingest::{load_records, DatasetStore, Window};
use gaswait::metrics::{mae, mape, pred_n, rmse, EvalPair};
use gaswait::mlp::{forward, init_mlp, loss, loss_gradient, MlpConfig};
use gaswait::pipeline::{
    all_examples, decode_snapshot, encode_snapshot, evaluate_examples, predict_one, query_record,
    run_scheduler, snapshot_from_window, ModelKind, ModelSnapshot, ModelSpec, PipelineError,
    ReplaySource, Retrainer, SchedulerConfig, SchedulerEvent, SnapshotRegistry, SpecTrainer,
    Trainer,
};
use gaswait::sim::{generate_store, run_probe, run_to_horizon, BlockTiming, ProbeOutcome, SimConfig, SimState};
use gaswait::stats::spearman;
use gaswait::tx::{gwei_to_wei, Address, LabeledExample, ReceiptStatus, TxHash, TxRecord, N_FEATURES};
use gaswait_cli::server::{serve, AppState};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(started: Instant, budget: Duration) -> Result<(), String> {
    let t = started.elapsed();
    check(t < budget, || format!("took {t:.1?}, budget {budget:?}"))
}

/// The 20k-example static dataset shared by criteria 5 and 6: default
/// simulator load (12 tx/s, 138 per 15 s block, ratio ~1.3).
fn static_dataset() -> Window {
    let config = SimConfig { seed: 1, horizon: 2175.0, ..SimConfig::default() };
    assert!((config.load_ratio() - 1.3).abs() < 0.01);
    all_examples(&generate_store(&config).unwrap()).unwrap()
}

// 1. Metric oracle equivalence.

fn brute_force(act: &[f64], est: &[f64]) -> [f64; 4] {
    let n = act.len() as f64;
    let (mut abs, mut sq, mut pct, mut hits) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..act.len() {
        let d = if act[i] > est[i] { act[i] - est[i] } else { est[i] - act[i] };
        abs += d;
        sq += d * d;
        pct += d / act[i];
        if d / act[i] <= 0.20 {
            hits += 1;
        }
    }
    [abs / n, (sq / n).sqrt(), 100.0 * pct / n, hits as f64 / n]
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=10_000);
        let act: Vec<f64> = (0..len).map(|_| rng.gen_range(1.0..50.0f64).round()).collect();
        let est: Vec<f64> = (0..len).map(|_| rng.gen_range(0.5..60.0)).collect();
        let pairs: Vec<EvalPair> = act.iter().zip(&est).map(|(&a, &e)| EvalPair::new(a, e)).collect();
        let got = [
            mae(&pairs).unwrap(),
            rmse(&pairs).unwrap(),
            mape(&pairs).unwrap(),
            pred_n(&pairs, 0.20).unwrap(),
        ];
        for (g, w) in got.iter().zip(brute_force(&act, &est)) {
            worst = worst.max((g - w).abs());
        }
    }
    check(worst <= 1e-9, || format!("max deviation {worst:e} > 1e-9"))?;
    within_budget(started, Duration::from_secs(10))?;
    Ok(format!("1000 vectors, max deviation {worst:.2e}"))
}

// 2. MLP gradient check.

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    while checked < 50 {
        let depth = rng.gen_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=6)).collect();
        let alpha = rng.gen_range(0.0..1e-2);
        let config = MlpConfig { hidden_layer_sizes: hidden, seed: rng.gen(), ..MlpConfig::default() };
        let base = init_mlp(&config);
        let params: Vec<f64> = base.parameters().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights = base.with_parameters(&params);
        let x: Vec<f64> = (0..N_FEATURES).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = rng.gen_range(1.0..10.0);

        // Finite differences straddling a ReLU kink measure the wrong slope.
        let near_kink = weights.hidden_pre_activations(&x).iter().flatten().any(|z| z.abs() < 1e-3);
        if near_kink {
            skipped += 1;
            continue;
        }
        let (_, grad) = loss_gradient(&weights, &x, y, alpha);
        let analytic = grad.parameters();
        let objective = |p: &[f64]| {
            let w = weights.with_parameters(p);
            loss(forward(&w, &x), y, &w, alpha)
        };
        for i in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[i] += h;
            down[i] -= h;
            let numeric = (objective(&up) - objective(&down)) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
        checked += 1;
    }
    check(worst < 1e-4, || format!("max relative error {worst:e} >= 1e-4"))?;
    within_budget(started, Duration::from_secs(30))?;
    Ok(format!("50 networks ({skipped} near-kink draws redrawn), max relative error {worst:.2e}"))
}

// 3. Poisson GLM recovery.

fn glm_recovery() -> Outcome {
    let started = Instant::now();
    let truth = [1.0, -0.8, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<[f64; 2]> = (0..10_000).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let counts: Vec<u64> = rows
        .iter()
        .map(|r| {
            let mu: f64 = truth[0] + truth[1] * r[0] + truth[2] * r[1];
            Poisson::new(mu.exp()).unwrap().sample(&mut rng) as u64
        })
        .collect();
    let model = fit_counts(&rows, &counts, &GlmOptions::default()).map_err(|e| e.to_string())?;
    let got = model.raw_coefficients();
    let err = got.iter().zip(truth).map(|(g, t)| (g - t).abs()).fold(0.0, f64::max);
    check(err <= 0.05, || format!("coefficients {got:?} off by {err:.3}"))?;
    let trace = &model.log_likelihood_trace;
    check(trace.len() >= 2, || "empty log-likelihood trace".into())?;
    for w in trace.windows(2) {
        check(w[1] >= w[0], || format!("log-likelihood decreased: {} -> {}", w[0], w[1]))?;
    }
    within_budget(started, Duration::from_secs(10))?;
    Ok(format!(
        "coefficients ({:.3}, {:.3}, {:.3}), max error {err:.3}, {} monotone iterations",
        got[0],
        got[1],
        got[2],
        trace.len() - 1
    ))
}

// 4. Tree-split oracle.

fn sse(labels: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = labels.clone().count() as f64;
    let mean = labels.clone().sum::<f64>() / n;
    labels.map(|y| (y - mean).powi(2)).sum()
}

fn partition_sse(data: &[LabeledExample], feature: usize, threshold: f64) -> f64 {
    let left = data.iter().filter(|e| e.features[feature] <= threshold).map(|e| e.label_blocks);
    let right = data.iter().filter(|e| e.features[feature] > threshold).map(|e| e.label_blocks);
    sse(left) + sse(right)
}

/// Lowest SSE over every (feature, midpoint) split with both sides
/// non-empty.
fn exhaustive_best(data: &[LabeledExample]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..N_FEATURES {
        let mut values: Vec<f64> = data.iter().map(|e| e.features[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let s = partition_sse(data, f, (pair[0] + pair[1]) / 2.0);
            best = Some(best.map_or(s, |b: f64| b.min(s)));
        }
    }
    best
}

fn tree_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut splits, mut worst) = (0, 0.0f64);
    for _ in 0..200 {
        let n = rng.gen_range(2..=64);
        let levels = rng.gen_range(2..=12);
        let data: Vec<LabeledExample> = (0..n)
            .map(|_| {
                let features = std::array::from_fn(|_| rng.gen_range(0..levels) as f64 * 1.5);
                LabeledExample::new(features, rng.gen_range(1..=20) as f64).unwrap()
            })
            .collect();
        let tree = fit_tree(&data, 1, N_FEATURES, &mut rng).map_err(|e| e.to_string())?;
        let parent = sse(data.iter().map(|e| e.label_blocks));
        match (*tree.root(), exhaustive_best(&data)) {
            (TreeNode::Split { feature, threshold, .. }, Some(best)) => {
                let got = partition_sse(&data, feature as usize, threshold);
                worst = worst.max((got - best).abs());
                check((got - best).abs() <= 1e-10, || {
                    format!("n={n}: root SSE {got} vs exhaustive {best}")
                })?;
                splits += 1;
            }
            // A leaf root is right only when no split reduces the SSE.
            (TreeNode::Leaf { .. }, best) => {
                let best = best.unwrap_or(parent);
                check(parent - best <= 1e-10, || format!("n={n}: leaf root but split reaches {best} < {parent}"))?;
            }
            (TreeNode::Split { .. }, None) => return Err("split chosen on constant features".into()),
        }
    }
    within_budget(started, Duration::from_secs(30))?;
    Ok(format!("200 datasets ({splits} split roots), max SSE gap {worst:.1e}"))
}

// 5 and 6. Model ordering and diminishing returns on the static dataset.

struct StaticRun {
    mae: BTreeMap<&'static str, f64>,
    time: BTreeMap<&'static str, Duration>,
}

fn static_run(window: &Window) -> Result<StaticRun, String> {
    let specs: [(&str, ModelSpec); 5] = [
        ("baseline", ModelSpec::Baseline),
        ("forest 500/5", ModelSpec::Forest(ForestConfig::with_trees(500, 5))),
        ("forest 2000/20", ModelSpec::Forest(ForestConfig::with_trees(2000, 20))),
        ("mlp", ModelSpec::Mlp(MlpConfig::default())),
        ("glm", ModelSpec::Glm(GlmOptions::default())),
    ];
    let mut run = StaticRun { mae: BTreeMap::new(), time: BTreeMap::new() };
    for (name, spec) in specs {
        let e = evaluate_examples(&window.examples, 0.8, &spec, 42, name, &window.descriptor())
            .map_err(|e| format!("{name}: {e}"))?;
        run.mae.insert(name, e.report.mae);
        run.time.insert(name, e.train_time);
    }
    Ok(run)
}

fn model_ordering(run: &StaticRun, n: usize, elapsed: Duration) -> Outcome {
    let m = &run.mae;
    let (forest, mlp, glm, base) = (m["forest 500/5"], m["mlp"], m["glm"], m["baseline"]);
    let summary = format!("n={n} MAE forest {forest:.3}, mlp {mlp:.3}, glm {glm:.3}, baseline {base:.3}");
    check((19_000..=21_000).contains(&n), || format!("dataset has {n} examples, wanted ~20k"))?;
    check(forest <= glm, || format!("{summary}: forest worse than glm"))?;
    check(forest <= mlp, || format!("{summary}: forest worse than mlp"))?;
    check(forest <= 0.7 * base, || format!("{summary}: forest not 30% below baseline"))?;
    check(elapsed < Duration::from_secs(300), || format!("{summary}: took {elapsed:.1?}"))?;
    Ok(summary)
}

fn diminishing_returns(run: &StaticRun) -> Outcome {
    let (small, large) = (run.mae["forest 500/5"], run.mae["forest 2000/20"]);
    let (t_small, t_large) = (run.time["forest 500/5"], run.time["forest 2000/20"]);
    let rel = (large - small).abs() / small;
    let summary = format!(
        "MAE 500/5 {small:.3} vs 2000/20 {large:.3} ({:+.1}%), training {t_small:.1?} vs {t_large:.1?}",
        100.0 * (large - small) / small
    );
    check(rel <= 0.10, || format!("{summary}: MAE differs by more than 10%"))?;
    check(t_large >= 2 * t_small, || format!("{summary}: large forest not 2x slower"))?;
    Ok(summary)
}

// 7. Simulator correctness.

fn simulator_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut probes, mut blocks) = (0, 0);
    for run in 0..100 {
        let config = SimConfig {
            arrival_rate: rng.gen_range(2.0..20.0),
            sigma_log: rng.gen_range(0.2..1.2),
            block_capacity: rng.gen_range(10..150),
            pool_capacity: rng.gen_range(50..2000),
            block_timing: if rng.gen() { BlockTiming::Fixed } else { BlockTiming::Exponential },
            horizon: rng.gen_range(300.0..1200.0),
            seed: rng.gen(),
            ..SimConfig::default()
        };
        let end = run_to_horizon(&config).map_err(|e| e.to_string())?;
        let accounted = end.confirmed.len() + end.dropped.len() + end.pending_len();
        check(end.arrived as usize == accounted, || {
            format!("run {run}: arrived {} != confirmed {} + dropped {} + pending {}", end.arrived, end.confirmed.len(), end.dropped.len(), end.pending_len())
        })?;

        let mut state = SimState::new(&config).map_err(|e| e.to_string())?;
        for _ in 0..40 {
            let block = state.step_block(&config);
            blocks += 1;
            if let (Some(lowest), Some(best)) = (block.included.iter().map(|t| t.gas_price).min(), block.best_remaining) {
                check(lowest >= best, || format!("run {run}: block {} included {lowest} while {best} waited", block.number))?;
            }
            check(block.included.len() <= config.block_capacity, || format!("run {run}: block over capacity"))?;
        }

        let lo = config.gas_price_quantile(rng.gen_range(-2.0..1.0));
        let hi = lo * rng.gen_range(1.01..3.0);
        let a = run_probe(&state, &config, gwei_to_wei(lo), 200);
        let b = run_probe(&state, &config, gwei_to_wei(hi), 200);
        probes += 1;
        let ok = match (a, b) {
            (ProbeOutcome::Confirmed { blocks: slow }, ProbeOutcome::Confirmed { blocks: fast }) => fast <= slow,
            (ProbeOutcome::Confirmed { .. }, _) => false,
            _ => true,
        };
        check(ok, || format!("run {run}: probe at {hi:.2} gwei ({b:?}) fared worse than {lo:.2} gwei ({a:?})"))?;
    }
    within_budget(started, Duration::from_secs(60))?;
    Ok(format!("100 runs conserved, {blocks} blocks priority-ordered, {probes} paired probes monotone"))
}

// 8. End-to-end CLI pipeline.

fn gaswait(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gaswait")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("gaswait {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn end_to_end(dir: &Path) -> Outcome {
    let started = Instant::now();
    let store = dir.join("e2e.jsonl");
    let snap = dir.join("forest.snap");
    let (store_s, snap_s) = (store.to_str().unwrap(), snap.to_str().unwrap());
    gaswait(&[
        "simulate", "--seed", "1", "--horizon", "2175", "--block-timing", "exponential",
        "--gas-price-median", "50", "--gas-price-sigma", "1.0", "--out", store_s,
    ])?;
    gaswait(&["train", "--store", store_s, "--model", "forest", "--all-blocks", "--out", snap_s])?;
    let report = gaswait(&["evaluate", "--store", store_s, "--model", "forest"])?;

    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split("  ").map(str::trim).filter(|s| !s.is_empty()).collect();
    check(header == ["Model", "MAE", "RMSE", "MAPE", "Pred (0.20)"], || format!("report header {header:?}"))?;
    let row = report.lines().find(|l| l.starts_with("Random Forest")).ok_or("no forest row")?;
    let cells: Vec<&str> = row["Random Forest".len()..].split_whitespace().collect();
    check(cells.len() == 4 && cells.iter().all(|c| c.trim_end_matches('%').parse::<f64>().is_ok()), || {
        format!("forest row {row:?}")
    })?;
    let json_line = report.lines().find(|l| l.starts_with('{')).ok_or("no JSON report line")?;
    let json: serde_json::Value = serde_json::from_str(json_line).map_err(|e| e.to_string())?;
    for key in ["n", "mae", "rmse", "mape_pct", "pred", "model", "window"] {
        check(json.get(key).is_some(), || format!("JSON report lacks {key}"))?;
    }

    let curve: serde_json::Value =
        serde_json::from_str(&gaswait(&["curve", "--snapshot", snap_s, "--json"])?).map_err(|e| e.to_string())?;
    let points = curve["points"].as_array().ok_or("curve has no points")?;
    let price: Vec<f64> = points.iter().map(|p| p["gas_price_gwei"].as_f64().unwrap_or(f64::NAN)).collect();
    let blocks: Vec<f64> = points.iter().map(|p| p["blocks"].as_f64().unwrap_or(f64::NAN)).collect();
    check(price == (0..=100).map(f64::from).collect::<Vec<_>>(), || "curve grid is not 0..=100".into())?;
    let rho = spearman(&price, &blocks);
    check(rho <= -0.9, || format!("curve Spearman {rho:.3} > -0.9"))?;
    within_budget(started, Duration::from_secs(300))?;
    Ok(format!("report {} cells, curve 101 points, Spearman {rho:.3}, {:.1?}", cells.len(), started.elapsed()))
}

// 9. Scheduler liveness and atomicity.

/// Fits normally until told to fail.
struct Flaky {
    inner: SpecTrainer,
    fail: AtomicBool,
}

impl Trainer for Flaky {
    fn train(&self, kind: ModelKind, window: &Window, version: u64) -> Result<ModelSnapshot, PipelineError> {
        if self.fail.load(Ordering::Relaxed) {
            return Err(PipelineError::Training { kind, reason: "injected failure".into() });
        }
        self.inner.train(kind, window, version)
    }
}

fn scheduler_atomicity() -> Outcome {
    let kinds = [ModelKind::Forest, ModelKind::Glm];
    let sim = SimConfig { seed: 9, horizon: 1200.0, ..SimConfig::default() };
    let source = ReplaySource::new(generate_store(&sim).unwrap(), 10, 4.0);
    let trainer = Arc::new(Flaky {
        inner: SpecTrainer::new([
            ModelSpec::Forest(ForestConfig::with_trees(100, 5)),
            ModelSpec::Glm(GlmOptions::default()),
        ]),
        fail: AtomicBool::new(false),
    });
    let registry = Arc::new(SnapshotRegistry::new());
    let retrainer = Arc::new(Retrainer::new(Arc::new(source), trainer.clone(), registry.clone(), 100));

    // What each published version must answer for the probe query.
    let query = query_record(25.0, 40_000, 0, 0);
    let expected: Mutex<BTreeMap<(ModelKind, u64), (String, f64)>> = Mutex::new(BTreeMap::new());
    let published: Mutex<Vec<(ModelKind, u64)>> = Mutex::new(Vec::new());
    let on_event = |e: SchedulerEvent| {
        if let SchedulerEvent::Published { kind, version } = e {
            let snap = registry.get(kind).expect("just published");
            let blocks = predict_one(&snap, &query, &snap.context).unwrap().blocks;
            expected.lock().unwrap().insert((kind, version), (snap.window.to_string(), blocks));
            published.lock().unwrap().push((kind, version));
        }
    };

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (shutdown, stopped) = tokio::sync::oneshot::channel::<()>();
    let state = AppState { registry: registry.clone(), retrainer: Some(retrainer.clone()) };
    let server = rt.spawn(serve(listener, state, async {
        let _ = stopped.await;
    }));

    let stop = AtomicBool::new(false);
    let config = SchedulerConfig::uniform(Duration::from_secs(2), 100);
    let responses: Vec<Result<(ModelKind, u64, String, f64), String>> = std::thread::scope(|scope| {
        scope.spawn(|| run_scheduler(&retrainer, &config, &kinds, &stop, &on_event).unwrap());
        let deadline = Instant::now() + Duration::from_secs(30);
        while kinds.iter().any(|&k| registry.get(k).is_none()) && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(20));
        }
        let clients: Vec<_> = (0..10)
            .map(|t| {
                scope.spawn(move || {
                    (0..100)
                        .map(|i| {
                            let kind = kinds[(t + i) % 2];
                            std::thread::sleep(Duration::from_millis(80));
                            let url = format!(
                                "http://{addr}/predict?gas_price_gwei=25&gas_limit=40000&value_wei=0&model={kind}"
                            );
                            let body: serde_json::Value = ureq::get(&url)
                                .call()
                                .map_err(|e| e.to_string())?
                                .into_json()
                                .map_err(|e| e.to_string())?;
                            Ok((
                                kind,
                                body["model_version"].as_u64().ok_or("no model_version")?,
                                body["window"].as_str().ok_or("no window")?.to_string(),
                                body["blocks"].as_f64().ok_or("no blocks")?,
                            ))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let out = clients.into_iter().flat_map(|c| c.join().unwrap()).collect();
        stop.store(true, Ordering::Relaxed);
        out
    });

    // Injected failures: the live snapshot must survive untouched.
    trainer.fail.store(true, Ordering::Relaxed);
    let before = registry.get(ModelKind::Glm).ok_or("no glm snapshot")?;
    let alerts = Mutex::new(0);
    for _ in 0..3 {
        let r = retrainer.retrain_with_events(ModelKind::Glm, &|e| {
            if matches!(e, SchedulerEvent::Alert { .. }) {
                *alerts.lock().unwrap() += 1;
            }
        });
        check(r.is_err(), || "injected failure published a snapshot".into())?;
    }
    let after = registry.get(ModelKind::Glm).ok_or("glm snapshot vanished")?;
    check(Arc::ptr_eq(&before, &after), || "failed retrain replaced the live snapshot".into())?;
    check(*alerts.lock().unwrap() == 1, || "no alert after three consecutive failures".into())?;

    let _ = shutdown.send(());
    let _ = rt.block_on(server);

    let published = published.into_inner().unwrap();
    for kind in kinds {
        let versions: Vec<u64> = published.iter().filter(|p| p.0 == kind).map(|p| p.1).collect();
        check(versions.len() >= 3, || format!("{kind}: only {} publishes in the run", versions.len()))?;
        check(versions.iter().zip(1..).all(|(&v, want)| v == want), || format!("{kind}: versions {versions:?}"))?;
    }
    let expected = expected.into_inner().unwrap();
    let mut versions_seen = std::collections::BTreeSet::new();
    for r in &responses {
        let (kind, version, window, blocks) = r.clone()?;
        let (want_window, want_blocks) =
            expected.get(&(kind, version)).ok_or_else(|| format!("{kind} v{version} was never published"))?;
        check(&window == want_window && blocks == *want_blocks, || {
            format!("{kind} v{version}: got ({window}, {blocks}), published ({want_window}, {want_blocks})")
        })?;
        versions_seen.insert((kind, version));
    }
    check(responses.len() == 1000, || format!("{} responses", responses.len()))?;
    Ok(format!(
        "{} publishes, 1000 predictions consistent across {} snapshot versions, failure kept v{} live",
        published.len(),
        versions_seen.len(),
        before.version
    ))
}

// 10. Persistence round trips.

fn random_record(rng: &mut ChaCha8Rng) -> TxRecord {
    let seen = rng.gen_range(1_500_000_000u64..1_600_000_000);
    let confirmed = rng.gen_bool(0.7);
    let gas_limit = rng.gen_range(21_000..8_000_000);
    TxRecord {
        tx_hash: TxHash(rng.gen()),
        sender: Address(rng.gen()),
        nonce: rng.gen_range(0..100_000),
        gas_price: rng.gen_range(0..u128::MAX / 2),
        gas_limit,
        gas_used: confirmed.then(|| rng.gen_range(0..=gas_limit)),
        value: rng.gen(),
        receipt_status: match (confirmed, rng.gen_bool(0.9)) {
            (false, _) => ReceiptStatus::Pending,
            (true, true) => ReceiptStatus::Success,
            (true, false) => ReceiptStatus::Failure,
        },
        timestamp_seen: (!confirmed || rng.gen_bool(0.9)).then_some(seen),
        timestamp_confirmed: confirmed.then(|| seen + rng.gen_range(0..3600)),
        block_number: confirmed.then(|| rng.gen_range(0..20_000_000)),
    }
}

fn persistence(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let records: Vec<TxRecord> = (0..1000).map(|_| random_record(&mut rng)).collect();
    let path = dir.join("roundtrip.jsonl");
    let mut store = DatasetStore::open(&path).map_err(|e| e.to_string())?;
    let summary = store.append(&records).map_err(|e| e.to_string())?;
    check(summary.written == 1000, || format!("wrote {} of 1000", summary.written))?;
    drop(store);
    let back = load_records(&path).map_err(|e| e.to_string())?;
    check(back == records, || "store reload differs".into())?;

    let sim = SimConfig { seed: 10, horizon: 900.0, ..SimConfig::default() };
    let window = all_examples(&generate_store(&sim).unwrap()).map_err(|e| e.to_string())?;
    let specs = [
        ModelSpec::Forest(ForestConfig::with_trees(50, 5)),
        ModelSpec::Mlp(MlpConfig { max_epochs: 20, ..MlpConfig::default() }),
        ModelSpec::Glm(GlmOptions::default()),
    ];
    for spec in specs {
        let snap = snapshot_from_window(&window, &spec, 1, 1_700_000_000).map_err(|e| e.to_string())?;
        let back = decode_snapshot(&encode_snapshot(&snap)).map_err(|e| e.to_string())?;
        check(back == snap, || format!("{} snapshot fields differ after reload", snap.kind))?;
        for e in &window.examples {
            let (a, b) = (snap.model.predict(&e.features), back.model.predict(&e.features));
            check(a.to_bits() == b.to_bits(), || format!("{} prediction {a} became {b}", snap.kind))?;
        }
    }
    Ok(format!("1000 records and 3 model kinds round-trip; {} predictions bit-identical per model", window.examples.len()))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "metric oracle equivalence", metric_oracle()));
    results.push((2, "MLP gradient check", gradient_check()));
    results.push((3, "Poisson GLM recovery", glm_recovery()));
    results.push((4, "tree-split oracle", tree_oracle()));

    let started = Instant::now();
    let window = static_dataset();
    match static_run(&window) {
        Ok(run) => {
            results.push((5, "model ordering", model_ordering(&run, window.examples.len(), started.elapsed())));
            results.push((6, "diminishing returns", diminishing_returns(&run)));
        }
        Err(e) => {
            results.push((5, "model ordering", Err(e.clone())));
            results.push((6, "diminishing returns", Err(e)));
        }
    }
    results.push((7, "simulator correctness", simulator_correctness()));
    results.push((8, "end-to-end CLI pipeline", end_to_end(dir.path())));
    results.push((9, "scheduler liveness and atomicity", scheduler_atomicity()));
    results.push((10, "persistence round trips", persistence(dir.path())));

    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {name}: {detail}"),
            Err(why) => println!("FAIL criterion {n}: {name}: {why}"),
        }
    }
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
