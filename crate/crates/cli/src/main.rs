mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use navcot::export::Task;
use navcot::prompting::HistoryMode;
use navcot::runtime::FallbackPolicy;
use tracing_subscriber::EnvFilter;

use config::{BackendKind, Config};

/// Chain-of-thought navigation harness: generate worlds, build labels,
/// export datasets, run agents and score them.
#[derive(Debug, Parser)]
#[command(name = "navcot", version = env!("CARGO_PKG_VERSION"))]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation and the random backend.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; also the default home of every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world with episodes, landmarks and similarity rows.
    Gen(GenArgs),
    /// Build ground-truth reasoning labels.
    Label,
    /// Export a training dataset.
    Export(ExportArgs),
    /// Run a batch of episodes against a backend.
    Run(RunArgs),
    /// Score traces against their episodes.
    Eval,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of viewpoints.
    #[arg(long)]
    n: Option<usize>,
    /// Target neighbor count per viewpoint.
    #[arg(long)]
    branching: Option<usize>,
    /// Number of episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Upper bound on moves in a ground-truth path.
    #[arg(long)]
    max_moves: Option<usize>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Dataset to export: fi, vif, ap or cot.
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Sample this many episodes before exporting.
    #[arg(long)]
    aug_n: Option<usize>,
    /// Seed for the augmentation sample.
    #[arg(long)]
    aug_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Reasoning backend.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Episodes run concurrently.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Step limit per episode.
    #[arg(long)]
    max_steps: Option<usize>,
    /// History in the prompt: none, all or last.
    #[arg(long, value_parser = parse_history)]
    history: Option<HistoryMode>,
    /// Action after a second malformed output: first_nonstop or stop.
    #[arg(long, value_parser = parse_fallback)]
    fallback: Option<FallbackPolicy>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn parse_history(s: &str) -> Result<HistoryMode, String> {
    s.parse()
}

fn parse_fallback(s: &str) -> Result<FallbackPolicy, String> {
    s.parse()
}

fn build_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        cfg.out = out.clone();
    }
    match &cli.command {
        Command::Gen(a) => {
            let g = &mut cfg.gen;
            g.n_viewpoints = a.n.unwrap_or(g.n_viewpoints);
            g.branching = a.branching.unwrap_or(g.branching);
            g.n_episodes = a.episodes.unwrap_or(g.n_episodes);
            g.max_path_moves = a.max_moves.unwrap_or(g.max_path_moves);
        }
        Command::Export(a) => {
            if a.aug_n.is_some() {
                cfg.export.aug_n = a.aug_n;
            }
            if a.aug_seed.is_some() {
                cfg.export.aug_seed = a.aug_seed;
            }
        }
        Command::Run(a) => {
            let r = &mut cfg.run;
            r.backend = a.backend.unwrap_or(r.backend);
            r.parallelism = a.parallelism.unwrap_or(r.parallelism);
            r.max_steps = a.max_steps.unwrap_or(r.max_steps);
            r.history_mode = a.history.unwrap_or(r.history_mode);
            r.fallback = a.fallback.unwrap_or(r.fallback);
        }
        Command::Label | Command::Eval => {}
    }
    Ok(cfg)
}

/// Records the merged configuration so its hash can be reproduced.
fn save_effective_config(cfg: &Config, command: &Command) -> Result<()> {
    let name = match command {
        Command::Gen(_) => "gen",
        Command::Label => "label",
        Command::Export(_) => "export",
        Command::Run(_) => "run",
        Command::Eval => "eval",
    };
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let path = cfg.out.join(format!("{name}.config.toml"));
    std::fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;
    tracing::info!(version = %config::version(), config_hash = %cfg.provenance().config_hash, "starting");
    save_effective_config(&cfg, &cli.command)?;
    match &cli.command {
        Command::Gen(_) => commands::gen(&cfg),
        Command::Label => commands::label(&cfg),
        Command::Export(a) => commands::export(&cfg, a.task),
        Command::Run(_) => commands::run(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}
