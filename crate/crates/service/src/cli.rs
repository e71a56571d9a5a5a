//! The `mspsc` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mspsc_core::dataset::Dataset;
use mspsc_core::evaluation::{
    evaluate, format_report_table, EvalOptions, ModelKind, SegmentFilter,
};
use mspsc_core::simulator::Scenario;
use mspsc_core::{
    default_registry, predict, validate_snapshot, EnvSnapshot, FactorRegistry, ModelConfig,
};

use crate::engine::{rebuild, Engine};
use crate::http::{router, AppState};
use crate::store::read_log;

#[derive(Debug, Parser)]
#[command(
    name = "mspsc",
    version,
    about = "Personalized mood prediction from sparse check-ins"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Generate a synthetic check-in dataset from a scenario file.
    Simulate(SimulateArgs),
    /// Replay a dataset through a model and report accuracy.
    Eval(EvalArgs),
    /// Predict for one stored user from a snapshot file.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct RegistryArg {
    /// Factor registry document; the built-in registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

impl RegistryArg {
    fn load(&self) -> Result<FactorRegistry> {
        match &self.registry {
            Some(path) => FactorRegistry::load(path)
                .with_context(|| format!("reading registry {}", path.display())),
            None => Ok(default_registry()),
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, env = "STORE_PATH")]
    pub store: PathBuf,
    #[arg(long, env = "AUTH_TOKEN", hide_env_values = true)]
    pub token: String,
    #[command(flatten)]
    pub registry: RegistryArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// One or more of mspsc, frequency, knn, linreg.
    #[arg(long, value_delimiter = ',', default_value = "mspsc")]
    pub model: Vec<ModelKind>,
    #[arg(long, default_value_t = mspsc_core::emotion::DEFAULT_TOLERANCE)]
    pub eps: f64,
    #[arg(long, default_value = "all")]
    pub segment: SegmentFilter,
    /// Per-user rows replayed before scoring starts.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Score only the top candidate.
    #[arg(long)]
    pub top_only: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub registry: RegistryArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub user: String,
    /// JSON snapshot: `{"captured_at": ..., "values": {...}}`.
    #[arg(long)]
    pub snapshot_file: PathBuf,
    #[arg(long, env = "STORE_PATH")]
    pub store: PathBuf,
    #[command(flatten)]
    pub registry: RegistryArg,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => simulate(args),
        Command::Eval(args) => eval(args),
        Command::Predict(args) => predict_cmd(args),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    if args.token.is_empty() {
        bail!("AUTH_TOKEN must not be empty");
    }
    let registry = args.registry.load()?;
    let (engine, report) = Engine::open(&args.store, registry, ModelConfig::default())
        .with_context(|| format!("opening store {}", args.store.display()))?;
    if let Some(c) = report.corrupt {
        tracing::warn!(
            offset = c.offset,
            discarded = c.discarded,
            "log had a corrupt tail; replay stopped at the last valid entry"
        );
    }
    tracing::info!(
        events = report.events,
        users = report.users,
        "state rebuilt"
    );
    let app = router(AppState {
        engine: Arc::new(engine),
        token: Some(args.token),
    });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = Scenario::load(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let dataset = scenario.generate();
    dataset
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    tracing::info!(
        users = dataset.user_count(),
        checkins = dataset.checkin_count(),
        "dataset written"
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let registry = args.registry.load()?;
    let dataset = Dataset::load(&args.dataset)
        .with_context(|| format!("reading dataset {}", args.dataset.display()))?
        .validated(&registry)?;
    let opts = EvalOptions {
        eps: args.eps,
        segment: args.segment,
        warmup: args.warmup,
        top_only: args.top_only,
    };
    let config = ModelConfig {
        eps: args.eps,
        ..ModelConfig::default()
    };
    let reports: Vec<_> = args
        .model
        .iter()
        .map(|kind| evaluate(&dataset, kind.build(&registry, &config).as_ref(), &opts))
        .collect();
    let table = format_report_table(&reports);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(table.as_bytes())?,
    }
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_vec_pretty(&reports)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let registry = args.registry.load()?;
    let config = ModelConfig::default();
    let log = read_log(&args.store).with_context(|| format!("reading {}", args.store.display()))?;
    if let Some(c) = log.corrupt {
        tracing::warn!(offset = c.offset, "ignoring corrupt log tail");
    }
    let users = rebuild(&log.events, &registry, &config)?;
    let Some(state) = users.get(&args.user) else {
        bail!("unknown user `{}`", args.user);
    };
    let text = std::fs::read_to_string(&args.snapshot_file)
        .with_context(|| format!("reading {}", args.snapshot_file.display()))?;
    let snapshot: EnvSnapshot = serde_json::from_str(&text).context("parsing snapshot")?;
    let snapshot = validate_snapshot(snapshot, &registry)?;
    let cfg = config.with_overrides(&state.profile.overrides);
    let prediction = predict(&state.profile, &snapshot, &registry, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&prediction)?);
    Ok(())
}
