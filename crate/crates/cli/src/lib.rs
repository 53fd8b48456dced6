//! Command-line harness for the `flatlab` experiments.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Failure;
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "flatlab", version = commands::VERSION, about = "Flatness and generalization experiments for two-layer ReLU networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network with gradient descent.
    Train(Common),
    /// Train every (eta, n, seed) cell of a grid.
    Sweep(Common),
    /// Evaluate certificates on a trained run directory.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train` (or one sweep cell).
        #[arg(long)]
        run: PathBuf,
    },
    /// Flat interpolants over a grid of target margins.
    Flat(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file: JSON, `key=value` lines, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set etas=0.01,0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_assignment)]
    pub set: Vec<(String, String)>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    pub fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut overrides = self.set.clone();
        let mut flag = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((key.to_string(), v));
            }
        };
        flag("out", self.out.as_ref().map(|p| p.display().to_string()));
        flag("iters", self.iters.map(|v| v.to_string()));
        flag("eta", self.eta.map(|v| v.to_string()));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("threads", self.threads.map(|v| v.to_string()));
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Train(c) | Command::Sweep(c) | Command::Flat(c) => c,
        Command::Verify { common, .. } => common,
    };
    let cfg = common.load().map_err(Failure::Config)?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, which keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match &cli.command {
        Command::Train(_) => commands::train(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
        Command::Verify { run, .. } => commands::verify(&cfg, run),
        Command::Flat(_) => commands::flat(&cfg),
    }
}
