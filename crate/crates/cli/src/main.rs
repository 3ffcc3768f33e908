use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use misspec::config::{to_text, Format};
use misspec::experiment::{self, Command, ExperimentConfig};
use misspec::inclusion::Strategy;
use misspec::{Error, Result};

#[derive(Parser)]
#[command(name = "misspec", version, about = "Bayesian learning with misspecified models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the learner once per seed and write trajectory CSVs.
    Simulate(RunArgs),
    /// Integrate the limiting inclusion and write one CSV per branch.
    Di(RunArgs),
    /// Find equilibria and test their stability.
    Equilibria(RunArgs),
    /// Classify equilibrium models of a one-dimensional example.
    Classify(RunArgs),
    /// Measure how closely simulated paths shadow inclusion solutions.
    Apt(RunArgs),
    /// Print the run config of a named example.
    Preset {
        name: String,
        /// Document syntax.
        #[arg(long, default_value = "json", value_parser = ["json", "toml"])]
        format: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config or manifest (JSON or TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named example to run.
    #[arg(long)]
    preset: Option<String>,
    /// Seeds as `a..b`, `a..=b` or `a,b,c`.
    #[arg(long)]
    seeds: Option<String>,
    /// Periods to simulate, or inclusion time for `di`.
    #[arg(long)]
    horizon: Option<String>,
    /// Integration step.
    #[arg(long)]
    step: Option<f64>,
    /// Sampled solution branches.
    #[arg(long)]
    branches: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every N-th step after the first thousand.
    #[arg(long)]
    record_every: Option<u64>,
}

fn number<V: std::str::FromStr>(flag: &str, text: &str) -> Result<V> {
    text.parse().map_err(|_| Error::InvalidArgument(format!("--{flag}: cannot parse `{text}`")))
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            let mut config = experiment::load_config(&text, Format::from_path(path))?;
            if Format::from_path(path) == Format::Toml {
                config.report_format = experiment::ReportFormat::Toml;
            }
            Ok(config)
        }
        (None, Some(name)) => experiment::preset(name),
        (None, None) => Err(Error::InvalidArgument("one of --config or --preset is required".into())),
    }
}

fn apply(args: &RunArgs, command: Command, config: &mut ExperimentConfig) -> Result<()> {
    if let Some(s) = &args.seeds {
        config.simulate.seeds = experiment::parse_seeds(s)?;
    }
    let seed = config.simulate.seeds.first().copied().unwrap_or(0);
    if let Some(h) = &args.horizon {
        match command {
            Command::Di => config.di.horizon = number("horizon", h)?,
            Command::Equilibria => config.analysis.horizon = number("horizon", h)?,
            _ => config.simulate.horizon = number("horizon", h)?,
        }
    }
    if let Some(step) = args.step {
        match command {
            Command::Di => config.di.step = step,
            Command::Apt => config.apt.step = step,
            _ => config.analysis.step = step,
        }
    }
    if let Some(count) = args.branches {
        let strategy = Strategy::BranchSample { count, seed };
        match command {
            Command::Di => config.di.strategy = strategy,
            Command::Apt => config.apt.strategy = strategy,
            _ => config.analysis.branches = count,
        }
    }
    if let Some(n) = args.record_every {
        config.simulate.record_every = n;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (command, args) = match cli.command {
        Cmd::Preset { name, format } => {
            let fmt = if format == "toml" { Format::Toml } else { Format::Json };
            println!("{}", to_text(&experiment::preset(&name)?, fmt)?);
            return Ok(());
        }
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Di(a) => (Command::Di, a),
        Cmd::Equilibria(a) => (Command::Equilibria, a),
        Cmd::Classify(a) => (Command::Classify, a),
        Cmd::Apt(a) => (Command::Apt, a),
    };
    let mut config = load(&args)?;
    apply(&args, command, &mut config)?;
    for path in experiment::run_experiment(&config, command)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
