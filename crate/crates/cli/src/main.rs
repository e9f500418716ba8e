mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use emoanno_core::annotator::{
    Backend, LabelerSpec, LiveBackend, LiveConfig, SimulatedBackend, SystemClock, Throttle, ThrottleConfig,
    DEFAULT_MODEL_ID,
};
use emoanno_core::corpus::{estimate_cost, load_manifest, usage_summary, AnnotationStore};
use emoanno_core::pipeline::{
    family_stats, read_correctness, run_annotate, run_evaluate, run_simulation, run_stats, write_evaluation,
    AnnotateOptions, SimulationConfig, ThreeClassSource,
};
use emoanno_core::sampling::{CompositeEncoding, CompositeFormat};
use emoanno_core::StrategyId;

use crate::config::{required, FileConfig};

/// Zero-shot emotion annotation of video segments with a multimodal chat
/// model, plus evaluation and significance testing of the label
/// aggregation strategies A1-D2.
///
/// The API key for the live backend is read from OPENAI_API_KEY only.
#[derive(Debug, Parser)]
#[command(name = "emoanno", version)]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample key frames, query the backend and append to the store.
    Annotate(AnnotateArgs),
    /// Aggregate stored annotations per strategy and write reports.
    #[command(visible_alias = "aggregate")]
    Evaluate(EvaluateArgs),
    /// Friedman and Dunn tests over per-segment correctness.
    Stats(StatsArgs),
    /// Run the strategies against a simulated labeler on synthetic segments.
    Simulate(SimulateArgs),
    /// Request counts and modeled cost for a strategy set.
    Cost(CostArgs),
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Manifest CSV with columns segment_id,label,frames_dir.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Annotation store (JSONL, created if missing).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated strategies, e.g. A1,B1,D1 [default: all].
    #[arg(long, visible_alias = "strategy")]
    strategies: Option<String>,
    /// `live` or `simulated` [default: live].
    #[arg(long)]
    backend: Option<String>,
    /// Chat-completions URL for the live backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model identifier sent with every request.
    #[arg(long)]
    model: Option<String>,
    /// Simulated labeler: uniform, identity or diagonal:<p>.
    #[arg(long)]
    labeler: Option<String>,
    /// Seed of the simulated labeler.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent requests in flight [default: 8].
    #[arg(long)]
    workers: Option<usize>,
    /// Request starts per second [default: 3 for live, unlimited for simulated].
    #[arg(long)]
    rate: Option<f64>,
    /// Requests that may start back to back [default: 1].
    #[arg(long)]
    burst: Option<u32>,
    /// Attempts per request on transient failures [default: 5].
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Completion token limit per request [default: 16].
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Composite encoding: jpeg or png [default: jpeg].
    #[arg(long)]
    composite_format: Option<String>,
    /// JPEG quality of the composite [default: 90].
    #[arg(long)]
    jpeg_quality: Option<u8>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated strategies [default: all].
    #[arg(long, visible_alias = "strategy")]
    strategies: Option<String>,
    /// Only use records produced by this model.
    #[arg(long)]
    model: Option<String>,
    /// Output directory for reports and correctness vectors.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// correctness.json written by `evaluate` [default: <out>/correctness.json].
    #[arg(long)]
    correctness: Option<PathBuf>,
    /// Output directory used to locate correctness.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods to compare instead of the B/C/D families.
    #[arg(long)]
    methods: Option<String>,
    /// Also write the results as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of synthetic segments.
    #[arg(long, default_value_t = 2000)]
    segments: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform, identity or diagonal:<p>.
    #[arg(long)]
    labeler: Option<String>,
    /// Three-class frame labels: mapped from seven-class, or direct.
    #[arg(long, default_value = "mapped")]
    three_class_source: ThreeClassSource,
    /// Comma-separated strategies [default: all].
    #[arg(long, visible_alias = "strategy")]
    strategies: Option<String>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Number of segments; alternatively use --manifest.
    #[arg(long, conflicts_with = "manifest")]
    segments: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated strategies [default: all].
    #[arg(long, visible_alias = "strategy")]
    strategies: Option<String>,
    /// Also summarize measured usage in this store.
    #[arg(long)]
    store: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Annotate(a) => annotate(a, &file),
        Command::Evaluate(a) => evaluate(a, &file),
        Command::Stats(a) => stats(a, &file),
        Command::Simulate(a) => simulate(a, &file),
        Command::Cost(a) => cost(a, &file),
    }
}

fn strategies(flag: &Option<String>, file: &FileConfig) -> Result<Vec<StrategyId>> {
    let list = match (flag, &file.strategies) {
        (Some(s), _) => StrategyId::parse_list(s)?,
        (None, Some(v)) => StrategyId::parse_list(&v.join(","))?,
        (None, None) => StrategyId::ALL.to_vec(),
    };
    if list.is_empty() {
        bail!("at least one strategy is required");
    }
    Ok(list)
}

fn labeler(flag: &Option<String>, file: &FileConfig) -> Result<LabelerSpec> {
    flag.as_deref()
        .or(file.backend.labeler.as_deref())
        .unwrap_or("uniform")
        .parse()
        .map_err(|e| anyhow!("{e}"))
}

fn annotate(a: AnnotateArgs, file: &FileConfig) -> Result<Outcome> {
    let manifest = required(&a.manifest, &file.manifest, "manifest")?;
    let store_path = required(&a.store, &file.store, "store")?;
    let strategies = strategies(&a.strategies, file)?;
    let kind = a
        .backend
        .clone()
        .or(file.backend.kind.clone())
        .unwrap_or_else(|| "live".into());
    let seed = a.seed.or(file.backend.seed).unwrap_or(0);
    let backend: Arc<dyn Backend> = match kind.as_str() {
        "live" => {
            let mut live = LiveConfig::default();
            if let Some(e) = a.endpoint.clone().or(file.backend.endpoint.clone()) {
                live.endpoint = e;
            }
            if let Some(t) = file.backend.timeout_secs {
                live.timeout = Duration::from_secs(t);
            }
            live.image_detail = file.backend.image_detail.clone();
            Arc::new(LiveBackend::from_env(live)?)
        }
        "simulated" => Arc::new(SimulatedBackend::from_spec(labeler(&a.labeler, file)?, seed)?),
        other => bail!("unknown backend {other:?} (live|simulated)"),
    };

    let ann = &file.annotate;
    let mut encoding = CompositeEncoding::default();
    match a.composite_format.as_deref().or(ann.composite_format.as_deref()) {
        None | Some("jpeg") => {}
        Some("png") => encoding.format = CompositeFormat::Png,
        Some(other) => bail!("unknown composite format {other:?} (jpeg|png)"),
    }
    if let Some(q) = a.jpeg_quality.or(ann.jpeg_quality) {
        if !(1..=100).contains(&q) {
            bail!("jpeg quality must be in 1..=100");
        }
        encoding.quality = q;
    }
    let workers = a.workers.or(ann.workers).unwrap_or(8);
    if workers == 0 {
        bail!("workers must be at least 1");
    }
    let opts = AnnotateOptions {
        strategies,
        template: file.prompts.clone().unwrap_or_default(),
        model_id: a
            .model
            .clone()
            .or(file.model.clone())
            .unwrap_or_else(|| DEFAULT_MODEL_ID.into()),
        max_output_tokens: a.max_tokens.or(ann.max_output_tokens).unwrap_or(16),
        encoding,
        workers,
    };
    let defaults = ThrottleConfig::default();
    let rate = a.rate.or(ann.requests_per_second).unwrap_or(if kind == "live" {
        defaults.requests_per_second
    } else {
        1e9
    });
    if rate.is_nan() || rate <= 0.0 {
        bail!("rate must be positive");
    }
    let throttle = Throttle::new(
        ThrottleConfig {
            requests_per_second: rate,
            burst: a.burst.or(ann.burst).unwrap_or(defaults.burst).max(1),
            max_attempts: a
                .max_attempts
                .or(ann.max_attempts)
                .unwrap_or(defaults.max_attempts)
                .max(1),
            ..defaults
        },
        Arc::new(SystemClock::default()),
    );

    let segments = load_manifest(&manifest)?;
    let mut store = AnnotationStore::open(&store_path)?;
    info!(
        "{} segments, {} records in {}",
        segments.len(),
        store.len(),
        store_path.display()
    );
    let summary = run_annotate(&segments, &mut store, backend.as_ref(), &throttle, &opts)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if summary.aborted {
        bail!("annotation aborted; {} records written", summary.new_records());
    }
    if summary.failures.is_empty() {
        Ok(Outcome::Done)
    } else {
        for f in &summary.failures {
            warn!("{}: {}", f.segment_id, f.error);
        }
        Ok(Outcome::Partial)
    }
}

fn out_dir(flag: &Option<PathBuf>, file: &FileConfig) -> PathBuf {
    flag.clone()
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<Outcome> {
    let manifest = required(&a.manifest, &file.manifest, "manifest")?;
    let store_path = required(&a.store, &file.store, "store")?;
    let strategies = strategies(&a.strategies, file)?;
    let segments = load_manifest(&manifest)?;
    let store = AnnotationStore::open(&store_path)?;
    let output = run_evaluate(&segments, store.records(), &strategies, a.model.as_deref())?;
    let out = out_dir(&a.out, file);
    write_evaluation(&out, &output)?;
    println!(
        "{:<9}{:>10}{:>10}{:>10}{:>10}",
        "strategy", "accuracy", "UAR", "n", "excluded"
    );
    for s in &output.strategies {
        println!(
            "{:<9}{:>10.4}{:>10.4}{:>10}{:>10}",
            s.strategy.as_str(),
            s.report.accuracy,
            s.report.uar,
            s.report.total,
            s.report.excluded_count
        );
    }
    info!("reports written to {}", out.display());
    Ok(Outcome::Done)
}

fn stats(a: StatsArgs, file: &FileConfig) -> Result<Outcome> {
    let path = a
        .correctness
        .clone()
        .unwrap_or_else(|| out_dir(&a.out, file).join("correctness.json"));
    let table = read_correctness(&path)?;
    let results = match &a.methods {
        Some(m) => {
            let names: Vec<String> = StrategyId::parse_list(m)?.iter().map(|s| s.to_string()).collect();
            vec![family_stats(&table, &names)?]
        }
        None => run_stats(&table)?,
    };
    for (i, r) in results.iter().enumerate() {
        if i > 0 {
            println!();
        }
        print!("{}", r.render());
    }
    if let Some(p) = &a.json {
        write_json(p, &results)?;
    }
    Ok(Outcome::Done)
}

fn simulate(a: SimulateArgs, file: &FileConfig) -> Result<Outcome> {
    if a.segments == 0 {
        bail!("--segments must be at least 1");
    }
    let config = SimulationConfig {
        n_segments: a.segments,
        seed: a.seed.or(file.backend.seed).unwrap_or(42),
        labeler: labeler(&a.labeler, file)?,
        three_class_source: a.three_class_source,
        strategies: strategies(&a.strategies, file)?,
    };
    let report = run_simulation(&config)?;
    print!("{}", report.render());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(Outcome::Done)
}

fn cost(a: CostArgs, file: &FileConfig) -> Result<Outcome> {
    let n = match (a.segments, a.manifest.as_ref().or(file.manifest.as_ref())) {
        (Some(n), _) => n,
        (None, Some(m)) => load_manifest(m)?.len() as u64,
        (None, None) => bail!("give --segments or --manifest"),
    };
    let strategies = strategies(&a.strategies, file)?;
    let prices = file.prices.unwrap_or_default();
    let est = estimate_cost(n, &strategies, &prices);
    println!("{:<9}{:>12}", "strategy", "requests");
    for s in &est.per_strategy {
        println!("{:<9}{:>12}", s.strategy, s.requests);
    }
    println!("single-frame requests: {}", est.single_frame_requests);
    println!("composite requests:    {}", est.composite_requests);
    println!("total requests:        {}", est.total_requests);
    println!("input tokens:          {}", est.input_tokens);
    println!("output tokens:         {}", est.output_tokens);
    println!("modeled cost:          {:.4}", est.cost);
    if let Some(store) = a.store.as_ref() {
        let store = AnnotationStore::open(store)?;
        let u = usage_summary(store.records());
        println!(
            "store: {} records, {} backend calls, {} reused, {} invalid, {} input / {} output tokens reported",
            u.records, u.backend_calls, u.reused, u.invalid, u.input_tokens, u.output_tokens
        );
    }
    Ok(Outcome::Done)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
