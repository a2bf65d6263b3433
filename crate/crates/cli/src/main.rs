use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context, Result};
use btai::dsprites::PreferenceShape;
use btai::harness::{run_experiment_traced, ExperimentConfig};
use btai::inspector::{serve, InspectorSession};
use btai::par::Execution;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "btai", version, about = "Branching-time active inference on dSprites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of seeded trials and print a JSON summary.
    Run(RunArgs),
    /// Serve an interactive session over newline-delimited JSON.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long, default_value_t = 8)]
    granularity: usize,
    #[arg(long, default_value_t = 150)]
    planning_iterations: usize,
    #[arg(long, default_value_t = 50)]
    max_cycles: usize,
    #[arg(long, default_value_t = 2.4)]
    exploration: f64,
    #[arg(long, default_value_t = 1.0)]
    precision: f64,
    /// Preference shape: goal-gated or manhattan.
    #[arg(long, default_value = "goal-gated")]
    preference: PreferenceShape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long, default_value_t = 100)]
    simulations: usize,
    /// Episode records (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step traces (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially. Defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
}

impl AgentArgs {
    fn config(&self, n_simulations: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_simulations,
            max_cycles: self.max_cycles,
            planning_iterations: self.planning_iterations,
            exploration_constant: self.exploration,
            preference_precision: self.precision,
            preference_shape: self.preference,
            granularity: self.granularity,
            rng_seed: self.seed,
            ..ExperimentConfig::default()
        }
    }
}

fn write_lines(path: &PathBuf, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    f(&mut out)
        .and_then(|_| out.flush())
        .with_context(|| format!("writing {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.agent.config(args.simulations);
    let execution = match args.workers {
        Some(1) => Execution::Sequential,
        workers => Execution::Parallel { workers },
    };
    let report = run_experiment_traced(&config, execution, args.trace.is_some())?;
    if let Some(path) = &args.out {
        write_lines(path, |w| report.write_records(w))?;
    }
    if let Some(path) = &args.trace {
        write_lines(path, |w| report.write_traces(w))?;
    }
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let session = InspectorSession::new(args.agent.config(1))?;
    let listener = TcpListener::bind((args.host.as_str(), args.port))
        .with_context(|| format!("binding {}:{}", args.host, args.port))?;
    eprintln!("inspector listening on {}", listener.local_addr()?);
    serve(listener, session)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Inspect(args) => inspect(args),
    }
}
