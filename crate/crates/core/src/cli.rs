//! Batch drivers for the ledger benchmark, tamper sweep, active-learning
//! curve and cost estimate, plus `serve` for the HTTP gateway.
//!
//! Every batch command builds one in-memory report and renders it twice:
//! canonical bytes and a plain-text table.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::audit::batch_audit_experiment;
use crate::crypto::{canonical_serialize, CanonicalBytes, KeyVault, OrgId};
use crate::gateway::{http, Gateway, GatewayConfig, Role};
use crate::hitl::{active_learning_run, initial_labeled, synth_dataset, ActiveLearningConfig, IterationRecord, SynthParams};
use crate::ledger::{
    bench_workload, format_usd, onchain_cost_estimate, AnchorPayload, AnchorTx, Ledger, ModelAnchorPayload, NetworkConfig,
    Preset,
};
use crate::model::train::{train, TrainOptions};
use crate::model::{ModelConfig, Sample, Schema};
use crate::offchain::OffChainStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_CONFIG: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "trustboost", version, about = "Anchored explanations, consent audits and entropy-gated loan decisions")]
pub struct Cli {
    /// Directory for the canonical report and text table.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fixed workload committed at each org count.
    LedgerBench {
        /// One count or a comma-separated sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 4, 6, 8])]
        orgs: Vec<u32>,
        #[arg(long, default_value_t = 800)]
        txs: usize,
        #[arg(long, default_value = "fabric-like")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Spacing between submissions.
        #[arg(long, default_value_t = 5)]
        gap_ms: u64,
    },
    /// Batch audits with a growing tampered fraction.
    TamperSweep {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 0.02)]
        from: f64,
        #[arg(long, default_value_t = 0.20)]
        to: f64,
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Entropy-sampled retraining rounds on synthetic loan data.
    ActiveLearning {
        #[arg(long, default_value_t = 6)]
        iterations: usize,
        #[arg(long, default_value_t = 150)]
        batch: usize,
        #[arg(long, default_value_t = crate::hitl::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 150)]
        initial: usize,
        /// Seed for the stratified choice of starting labels.
        #[arg(long, default_value_t = 1)]
        label_seed: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Cost of storing `bytes` on a public chain.
    Cost {
        #[arg(long, allow_hyphen_values = true)]
        bytes: i64,
        #[arg(long, default_value_t = 50.93, allow_hyphen_values = true)]
        usd_per_kb: f64,
    },
    /// Starts the HTTP gateway.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Persist off-chain records and org keys here instead of in memory.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CliError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadConfig(_) => EXIT_BAD_CONFIG,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

fn bad(e: impl std::fmt::Display) -> CliError {
    CliError::BadConfig(e.to_string())
}

fn broken(e: impl std::fmt::Display) -> CliError {
    CliError::Invariant(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub orgs: u32,
    pub tx_count: usize,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub throughput_tps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub preset: Preset,
    pub txs: usize,
    pub gap_ms: u64,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub tampered: u64,
    pub detected: u64,
    pub elapsed_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub count: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub config: ActiveLearningConfig,
    pub initial: usize,
    pub label_seed: u64,
    pub records: Vec<IterationRecord>,
    pub model_anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub bytes: i64,
    pub usd_per_kb: f64,
    pub usd: f64,
}

/// A rendered batch result.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub name: &'static str,
    pub canonical: CanonicalBytes,
    pub table: String,
    /// Whitespace-separated columns for external plotting.
    pub plot: Option<String>,
}

impl Output {
    fn new<T: Serialize>(name: &'static str, report: &T, table: String, plot: Option<String>) -> Result<Output, CliError> {
        Ok(Output { name, canonical: canonical_serialize(report).map_err(broken)?, table, plot })
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.canon", self.name)), self.canonical.as_bytes())?;
        std::fs::write(dir.join(format!("{}.txt", self.name)), &self.table)?;
        if let Some(plot) = &self.plot {
            std::fs::write(dir.join(format!("{}.dat", self.name)), plot)?;
        }
        Ok(())
    }
}

pub fn ledger_bench(orgs: &[u32], txs: usize, preset: &str, seed: u64, gap_ms: u64) -> Result<Output, CliError> {
    let preset: Preset = preset.parse().map_err(bad)?;
    if orgs.is_empty() || orgs.contains(&0) || txs == 0 {
        return Err(bad("need at least one positive org count and one transaction"));
    }
    let mut rows = Vec::new();
    for &n in orgs {
        let r = bench_workload(preset, n, txs, gap_ms, seed).map_err(bad)?;
        if r.tx_count != txs {
            return Err(broken(format!("{} of {txs} transactions committed at {n} orgs", r.tx_count)));
        }
        rows.push(BenchRow {
            orgs: n,
            tx_count: r.tx_count,
            mean_latency_ms: r.mean_latency_ms,
            median_latency_ms: r.median_latency_ms,
            p95_latency_ms: r.p95_latency_ms,
            throughput_tps: r.throughput_tps,
        });
    }
    let mut table = format!("{:>5} {:>6} {:>10} {:>10} {:>10} {:>12}\n", "orgs", "txs", "mean_ms", "median_ms", "p95_ms", "tps");
    let mut plot = String::from("# orgs mean_latency_ms throughput_tps\n");
    for r in &rows {
        table += &format!(
            "{:>5} {:>6} {:>10.2} {:>10.1} {:>10.1} {:>12.3}\n",
            r.orgs, r.tx_count, r.mean_latency_ms, r.median_latency_ms, r.p95_latency_ms, r.throughput_tps
        );
        plot += &format!("{} {:.6} {:.6}\n", r.orgs, r.mean_latency_ms, r.throughput_tps);
    }
    Output::new("ledger_bench", &BenchReport { preset, txs, gap_ms, seed, rows }, table, Some(plot))
}

/// `from, from+step, ..` up to `to` inclusive, computed on an integer grid.
pub fn fraction_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(0.0..=1.0).contains(&from) || !(0.0..=1.0).contains(&to) || to < from || !(step > 0.0) {
        return Err(bad(format!("fractions must satisfy 0 <= from <= to <= 1 with step > 0, got {from}..{to} by {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((from + k as f64 * step) * 1e9).round() / 1e9).collect())
}

pub fn tamper_sweep(count: usize, from: f64, to: f64, step: f64, seed: u64) -> Result<Output, CliError> {
    if count < 50 {
        return Err(bad(format!("count must be at least 50, got {count}")));
    }
    let mut rows = Vec::new();
    for fraction in fraction_grid(from, to, step)? {
        let report = batch_audit_experiment(count, fraction, seed).map_err(bad)?;
        let tampered = (fraction * count as f64 + 1e-9).floor() as u64;
        if report.tampered_found != tampered {
            return Err(broken(format!("fraction {fraction}: {} detected, {tampered} tampered", report.tampered_found)));
        }
        rows.push(SweepRow { fraction, tampered, detected: report.tampered_found, elapsed_ops: report.elapsed_ops });
    }
    let mut table = format!("{:>8} {:>9} {:>9} {:>12}\n", "fraction", "tampered", "detected", "elapsed_ops");
    let mut plot = String::from("# fraction detected elapsed_ops\n");
    for r in &rows {
        table += &format!("{:>8.2} {:>9} {:>9} {:>12}\n", r.fraction, r.tampered, r.detected, r.elapsed_ops);
        plot += &format!("{:.4} {} {}\n", r.fraction, r.detected, r.elapsed_ops);
    }
    Output::new("tamper_sweep", &SweepReport { count, seed, rows }, table, Some(plot))
}

pub fn active_learning(cfg: ActiveLearningConfig, initial: usize, label_seed: u64) -> Result<Output, CliError> {
    if cfg.batch == 0 || cfg.folds < 2 || cfg.epochs == 0 || !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(bad("batch, epochs must be positive, folds >= 2, threshold in [0, 1]"));
    }
    let schema = Schema::default_loan();
    let data = synth_dataset(&schema, SynthParams::default()).map_err(bad)?;
    if initial == 0 || initial > data.len() {
        return Err(bad(format!("initial labeled size must be in 1..={}", data.len())));
    }
    let start = initial_labeled(&data, initial, label_seed);

    let network = NetworkConfig::preset(Preset::FabricLike, 4, cfg.seed);
    let org = network.org_ids()[0].clone();
    let mut ledger = Ledger::new(network).map_err(broken)?;
    let mut anchor_err = None;
    let mut anchor = |iteration: usize, model: &ModelConfig| {
        let result = model.config_hash().map_err(broken).and_then(|config_hash| {
            let dtm = 1 + iteration as u64;
            let payload = ModelAnchorPayload { model_id: "loan-cnn".into(), iteration: iteration as u64, config_hash, dtm };
            ledger.submit_tx(AnchorTx::new(AnchorPayload::ModelConfig(payload), org.clone(), dtm)).map_err(broken)
        });
        if let Err(e) = result {
            anchor_err.get_or_insert(e);
        }
    };
    let records = active_learning_run(&data, &start, &cfg, &mut anchor).map_err(bad)?;
    if let Some(e) = anchor_err {
        return Err(e);
    }
    ledger.flush();
    for w in records.windows(2) {
        if w[1].labeled_size != w[0].labeled_size + cfg.batch {
            return Err(broken(format!("labeled set grew from {} to {}", w[0].labeled_size, w[1].labeled_size)));
        }
    }
    let mut table = format!("{:>9} {:>9} {:>11} {:>8} {:>8}  {}\n", "iteration", "annotated", "from_review", "labeled", "auc", "config_hash");
    let mut plot = String::from("# iteration auc\n");
    for r in &records {
        table += &format!(
            "{:>9} {:>9} {:>11} {:>8} {:>8.4}  {}\n",
            r.iteration,
            r.annotated,
            r.from_review,
            r.labeled_size,
            r.auc,
            &r.config_hash.to_hex()[..16]
        );
        plot += &format!("{} {:.6}\n", r.iteration, r.auc);
    }
    let model_anchors = ledger.count_kind(crate::ledger::AnchorKind::ModelConfigAnchor);
    Output::new("active_learning", &CurveReport { config: cfg, initial, label_seed, records, model_anchors }, table, Some(plot))
}

pub fn cost(bytes: i64, usd_per_kb: f64) -> Result<Output, CliError> {
    let usd = onchain_cost_estimate(bytes, usd_per_kb).map_err(bad)?;
    let table = format!("{bytes} bytes at ${usd_per_kb}/KB = {}\n", format_usd(usd));
    Output::new("cost", &CostReport { bytes, usd_per_kb, usd }, table, None)
}

pub struct DemoActor {
    pub actor_id: &'static str,
    pub role: Role,
    pub org: &'static str,
    pub token: String,
}

/// Gateway with a model trained on a synthetic labeled set, plus one
/// registered actor per role with a fresh random bearer token.
pub fn demo_gateway(store_dir: Option<&Path>, seed: u64) -> Result<(Gateway, Vec<DemoActor>), CliError> {
    let store = match store_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(bad)?;
            let vault = Arc::new(KeyVault::open(dir.join("vault.json")).map_err(bad)?);
            OffChainStore::in_directory(vault, dir.join("records")).map_err(bad)?
        }
        None => OffChainStore::in_memory(Arc::new(KeyVault::new())),
    };
    let schema = Schema::default_loan();
    let data = synth_dataset(&schema, SynthParams { seed, ..SynthParams::default() }).map_err(bad)?;
    let labeled: Vec<Sample> = initial_labeled(&data, 300, seed).into_iter().map(|i| data.samples[i].clone()).collect();
    let cfg = GatewayConfig { seed, ..GatewayConfig::default() };
    let mut model = ModelConfig::loan_cnn(seed);
    let xs: Vec<&[f64]> = labeled.iter().map(|s| s.features.as_slice()).collect();
    let ys: Vec<_> = labeled.iter().map(|s| s.label).collect();
    train(&mut model, &xs, &ys, TrainOptions { epochs: cfg.train_epochs, seed }).map_err(broken)?;
    let gw = Gateway::new(cfg, schema, store, model, labeled).map_err(broken)?;

    let mut actors = vec![
        DemoActor { actor_id: "developer-1", role: Role::Developer, org: "org1", token: String::new() },
        DemoActor { actor_id: "expert-1", role: Role::Expert, org: "org2", token: String::new() },
        DemoActor { actor_id: "regulator-1", role: Role::AuditRegulator, org: "org3", token: String::new() },
        DemoActor { actor_id: "customer-1", role: Role::Customer, org: "org4", token: String::new() },
    ];
    for a in &mut actors {
        let mut raw = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut raw);
        a.token = hex::encode(raw);
        gw.register_actor(a.actor_id, a.role, &OrgId::from(a.org), &a.token).map_err(broken)?;
    }
    Ok((gw, actors))
}

fn serve(port: u16, store: Option<&Path>, seed: u64) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let (gw, actors) = demo_gateway(store, seed)?;
    for a in &actors {
        println!("{:<12} {:<16} {:<5} Bearer {}", a.actor_id, a.role.as_str(), a.org, a.token);
    }
    let rt = tokio::runtime::Runtime::new().map_err(broken)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await.map_err(bad)?;
        tracing::info!(port, "gateway listening");
        axum::serve(listener, http::router(Arc::new(gw))).await.map_err(broken)
    })
}

pub fn execute(cmd: &Command) -> Result<Option<Output>, CliError> {
    Ok(Some(match cmd.clone() {
        Command::LedgerBench { orgs, txs, preset, seed, gap_ms } => ledger_bench(&orgs, txs, &preset, seed, gap_ms)?,
        Command::TamperSweep { count, from, to, step, seed } => tamper_sweep(count, from, to, step, seed)?,
        Command::ActiveLearning { iterations, batch, threshold, epochs, initial, label_seed, seed } => {
            let cfg = ActiveLearningConfig { iterations, batch, threshold, epochs, seed, ..ActiveLearningConfig::default() };
            active_learning(cfg, initial, label_seed)?
        }
        Command::Cost { bytes, usd_per_kb } => cost(bytes, usd_per_kb)?,
        Command::Serve { port, store, seed } => {
            serve(port, store.as_deref(), seed)?;
            return Ok(None);
        }
    }))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(Some(out)) => {
            print!("{}", out.table);
            if let Some(dir) = &cli.out {
                if let Err(e) = out.write_to(dir) {
                    eprintln!("cannot write {}: {e}", dir.display());
                    return EXIT_BAD_CONFIG;
                }
            }
            EXIT_OK
        }
        Ok(None) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
