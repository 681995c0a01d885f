mod commands;
mod config;
mod oracle_check;
mod paths;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Failure classes; the exit code is 2 for configuration errors, 1 otherwise.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] adaflow::Error),
    #[error("{0}")]
    Precondition(String),
    #[error("missing artifacts:\n{}", .0.iter().map(|p| format!("  {}", p.display())).collect::<Vec<_>>().join("\n"))]
    Missing(Vec<PathBuf>),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "adaflow", version, about = "Variance-adaptive flow policies: data, training, evaluation")]
struct Cli {
    /// Worker threads for evaluation and metrics (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config field, e.g. `--set flow.train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<config::ExperimentConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seeds=[{s}]"));
        }
        config::ExperimentConfig::load(&self.config, &overrides)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Flow,
    Variance,
    Bc,
    Reflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExecutorArg {
    Bc,
    FlowFixed,
    FlowAdaptive,
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Generate demonstrations for every configured seed.
    GenDemos(ConfigArgs),
    /// Train one stage; `variance` and `reflow` need a trained flow.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        stage: Stage,
    },
    /// Evaluate an executor on the maze and write JSON and CSV reports.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        executor: ExecutorArg,
        /// Euler steps for `flow-fixed`.
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Solver η for `flow-adaptive` (default: from the config).
        #[arg(long)]
        eta: Option<f64>,
        /// Solver ε_min for `flow-adaptive` (default: from the config).
        #[arg(long)]
        eps_min: Option<f64>,
        /// Use the reflowed student instead of the stage-1 flow.
        #[arg(long)]
        reflowed: bool,
        /// Also write one trace CSV per episode.
        #[arg(long)]
        traces: bool,
    },
    /// Check the solver against closed-form oracles; no training involved.
    OracleCheck {
        /// Multiply the oracle σ by this factor (values below 1 must fail).
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        #[arg(long, default_value_t = 8192)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit tidy CSVs for figures.
    PlotData(ConfigArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenDemos(args) => commands::gen_demos(&args.load()?),
        Command::Train { cfg, stage } => commands::train(&cfg.load()?, stage),
        Command::Eval {
            cfg,
            executor,
            steps,
            eta,
            eps_min,
            reflowed,
            traces,
        } => {
            let cfg = cfg.load()?;
            let solver = adaflow::solver::SolverConfig {
                eta: eta.unwrap_or(cfg.solver.eta),
                eps_min: eps_min.unwrap_or(cfg.solver.eps_min),
            };
            solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let request = commands::EvalRequest {
                executor,
                steps,
                solver,
                reflowed,
                traces,
            };
            commands::eval(&cfg, &request)
        }
        Command::OracleCheck {
            sigma_scale,
            samples,
            seed,
        } => oracle_check::run(sigma_scale, samples, seed),
        Command::PlotData(args) => plot::plot_data(&args.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
