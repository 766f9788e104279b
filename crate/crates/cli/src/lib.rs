//! `lifespace run | serve | replay`.
//!
//! A run is described by an optional JSON config file plus flags; flags win.
//!
//! ```json
//! {
//!   "sim": { "seed": 7, "tick_ms": 1000, "conversation_cooldown": 20 },
//!   "provider": "remote",
//!   "providers": {
//!     "planner": { "endpoint": "http://localhost:8000/v1", "model_name": "big", "api_key_env": "LLM_KEY" },
//!     "conversationalist": { "endpoint": "http://localhost:8000/v1", "model_name": "small" }
//!   },
//!   "map": "maps/town.map",
//!   "roster": "rosters/town.json"
//! }
//! ```
//!
//! Relative `map` and `roster` paths are resolved against the config
//! file's directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::future::Future;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lifespace_core::cognition::{LlmCognition, OpenAiCompatClient, ProviderConfig};
use lifespace_core::log::{replay, LogWriter, ReplayReport};
use lifespace_core::{
    default_roster, load_map, Cognition, EventKind, Roster, SimConfig, Simulation, StubCognition, WorldMap,
};
use lifespace_service::Engine;
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "lifespace", version, about = "Multi-agent life space simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a fixed number of ticks and write the event log.
    Run(RunArgs),
    /// Run the engine continuously behind the HTTP/WebSocket API.
    Serve(ServeArgs),
    /// Rebuild a log's final state and check it against the trailer digest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Remote,
}

#[derive(Clone, Debug, Default, Args)]
pub struct SpecArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Map file (defaults to the bundled town).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Roster JSON file (defaults to the bundled five agents).
    #[arg(long)]
    pub roster: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 100)]
    pub ticks: u64,
    /// Where to write the JSON Lines log.
    #[arg(long, default_value = "lifespace-log.jsonl")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Save a snapshot here on shutdown.
    #[arg(long)]
    pub snapshot_on_exit: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    sim: Option<SimConfig>,
    #[serde(default)]
    provider: Option<ProviderKind>,
    #[serde(default)]
    providers: Option<Providers>,
    #[serde(default)]
    map: Option<PathBuf>,
    #[serde(default)]
    roster: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Providers {
    pub planner: ProviderConfig,
    pub conversationalist: ProviderConfig,
}

/// A fully resolved run description.
pub struct RunSpec {
    pub config: SimConfig,
    pub map: WorldMap,
    pub roster: Roster,
    pub provider: ProviderKind,
    pub providers: Option<Providers>,
}

impl RunSpec {
    pub fn load(args: &SpecArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                let file: ConfigFile = serde_json::from_str(&text)
                    .with_context(|| format!("invalid config file {}", path.display()))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let mut config = file.sim.unwrap_or_default();
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        config.validate().map_err(|e| anyhow::anyhow!("invalid sim config: {e}"))?;

        let map_path = args.map.clone().or_else(|| file.map.map(|p| base.join(p)));
        let map = match map_path {
            Some(path) => {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("cannot read map file {}", path.display()))?;
                load_map(&text).with_context(|| format!("invalid map file {}", path.display()))?
            }
            None => WorldMap::default_map(),
        };
        let roster_path = args.roster.clone().or_else(|| file.roster.map(|p| base.join(p)));
        let roster = match roster_path {
            Some(path) => {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("cannot read roster file {}", path.display()))?;
                Roster::from_json(&map, &text).with_context(|| format!("invalid roster file {}", path.display()))?
            }
            None => default_roster(&map).context("bundled roster does not fit this map")?,
        };
        let provider = args.provider.or(file.provider).unwrap_or(ProviderKind::Stub);
        Ok(Self {
            config,
            map,
            roster,
            provider,
            providers: file.providers,
        })
    }

    pub fn cognition(&self) -> Result<Arc<dyn Cognition>> {
        Ok(match self.provider {
            ProviderKind::Stub => Arc::new(StubCognition::new(self.config.seed)),
            ProviderKind::Remote => {
                let Some(p) = &self.providers else {
                    bail!("--provider remote needs a `providers` section in the config file");
                };
                let planner = OpenAiCompatClient::with_retries(p.planner.clone()).context("planner provider")?;
                let talker =
                    OpenAiCompatClient::with_retries(p.conversationalist.clone()).context("conversationalist provider")?;
                Arc::new(LlmCognition::new(Box::new(planner), Box::new(talker)))
            }
        })
    }

    pub fn simulation(&self) -> Result<Simulation> {
        Ok(Simulation::new(self.config.clone(), self.map.clone(), self.roster.clone())?)
    }
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub ticks: u64,
    pub events: u64,
    pub by_type: BTreeMap<&'static str, u64>,
    pub conversations: u64,
    pub compressions: u64,
    pub digest: String,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "ticks:         {}", self.ticks)?;
        writeln!(f, "events:        {}", self.events)?;
        for (kind, n) in &self.by_type {
            writeln!(f, "  {kind:<20} {n}")?;
        }
        writeln!(f, "conversations: {}", self.conversations)?;
        writeln!(f, "compressions:  {}", self.compressions)?;
        write!(f, "digest:        {}", self.digest)
    }
}

/// Runs `args.ticks` ticks as fast as possible and writes the log.
pub fn cmd_run(args: &RunArgs) -> Result<RunSummary> {
    let spec = RunSpec::load(&args.spec)?;
    let cognition = spec.cognition()?;
    let mut sim = spec.simulation()?;
    let file = File::create(&args.out).with_context(|| format!("cannot create log file {}", args.out.display()))?;
    let mut log = LogWriter::new(BufWriter::new(file), sim.state())?;
    let mut summary = RunSummary {
        ticks: args.ticks,
        ..RunSummary::default()
    };
    for _ in 0..args.ticks {
        for event in sim.tick(cognition.as_ref()) {
            log.write_event(&event)?;
            summary.events += 1;
            *summary.by_type.entry(event.kind.type_name()).or_default() += 1;
            match event.kind {
                EventKind::ConversationStarted { .. } => summary.conversations += 1,
                EventKind::MemoryCompressed { .. } => summary.compressions += 1,
                _ => {}
            }
        }
    }
    log.finish(sim.state())?;
    summary.digest = sim.digest();
    Ok(summary)
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<ReplayReport> {
    let file = File::open(&args.log).with_context(|| format!("cannot read log file {}", args.log.display()))?;
    Ok(replay(BufReader::new(file))?)
}

/// Serves until `shutdown` resolves, then stops the engine and optionally
/// writes a snapshot. `on_ready` gets the bound address.
pub async fn cmd_serve(
    args: &ServeArgs,
    on_ready: impl FnOnce(SocketAddr),
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let spec = RunSpec::load(&args.spec)?;
    let cognition = spec.cognition()?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .with_context(|| format!("cannot bind {}", args.listen))?;
    let engine = Engine::new(spec.simulation()?, cognition);
    engine.start()?;
    on_ready(listener.local_addr()?);
    lifespace_service::serve(engine.clone(), listener, shutdown).await?;

    let stopper = engine.clone();
    tokio::task::spawn_blocking(move || stopper.stop()).await?;
    if let Some(path) = &args.snapshot_on_exit {
        let info = engine.save_snapshot(path)?;
        tracing::info!(path = %info.path, tick = info.tick, "snapshot written");
    }
    Ok(())
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let summary = cmd_run(&args)?;
            writeln!(out, "{summary}")?;
            writeln!(out, "log:           {}", args.out.display())?;
            Ok(0)
        }
        Command::Replay(args) => {
            let report = cmd_replay(&args)?;
            writeln!(out, "{report}")?;
            Ok(if report.is_match() { 0 } else { 1 })
        }
        Command::Serve(args) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(cmd_serve(
                &args,
                |addr| tracing::info!(%addr, "listening"),
                async {
                    let _ = tokio::signal::ctrl_c().await;
                    tracing::info!("shutting down");
                },
            ))?;
            Ok(0)
        }
    }
}
