use std::path::PathBuf;

use arw::coupling::{EdgePolicy, MetricKind};
use arw::dynamics::Beta;
use arw::error::{ArwError, Result};
use arw::experiment::{CouplingCheck, ExperimentConfig, StartSpec, Task, ZchainMode};
use arw::graph::GraphSpec;
use arw::suite::{SuiteName, DEFAULT_SEED};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "arw", version, about = "Attracting/repelling random walks: simulation and exact analysis")]
pub struct Cli {
    /// RNG seed, recorded in every output.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (or directory for `suite`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON experiment config used instead of a subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// complete:K, path:K, grid:RxC, star:K or file:PATH
    #[arg(long)]
    pub graph: GraphSpec,
    #[arg(long)]
    pub n: u32,
    /// Real number or -inf.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Beta,
    #[arg(long)]
    pub lazy: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        /// uniform, spread or concentrated:V
        #[arg(long, default_value = "uniform")]
        start: StartSpec,
    },
    /// Exact analysis on the enumerated state space.
    Analyze {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        stationary: bool,
        #[arg(long, value_name = "EPS")]
        mixing_time: Option<f64>,
        #[arg(long)]
        cheeger: bool,
        #[arg(long)]
        reversibility: bool,
    },
    /// Comparison chain on a line of length D.
    Zchain {
        #[arg(long = "D")]
        d: usize,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long)]
        delta: f64,
        /// Maximum degree of the underlying graph.
        #[arg(long = "Delta")]
        max_degree: usize,
        #[arg(long)]
        n: u32,
        #[arg(long, conflicts_with = "hitting")]
        stationary: bool,
        #[arg(long)]
        hitting: bool,
        #[arg(long, default_value_t = 50)]
        replicas: usize,
        #[arg(long, default_value_t = 100_000_000)]
        max_steps: u64,
    },
    /// Transport and total-variation checks.
    Coupling {
        #[arg(long)]
        graph: Option<GraphSpec>,
        #[arg(long)]
        n: Option<u32>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<Beta>,
        #[arg(long, conflicts_with_all = ["contraction", "tv_audit"])]
        no_contraction_check: bool,
        #[arg(long, conflicts_with = "tv_audit")]
        contraction: bool,
        #[arg(long)]
        tv_audit: bool,
        /// unit or meeting-time
        #[arg(long, default_value = "meeting-time")]
        metric: MetricKind,
        /// all-pairs or adjacent-only
        #[arg(long, default_value = "all-pairs")]
        policy: EdgePolicy,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
    },
    /// Run a reproduction suite: lemmas, theorems, figures or all.
    Suite { name: SuiteName },
}

impl Cli {
    /// Builds the validated config from a config file or the subcommand flags.
    pub fn into_config(self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, self.command) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)?;
                let mut c: ExperimentConfig =
                    serde_json::from_str(&text).map_err(|e| ArwError::Config(format!("{}: {e}", path.display())))?;
                if let Some(seed) = self.seed {
                    c.seed = seed;
                }
                c
            }
            (None, Some(command)) => from_command(command, self.seed.unwrap_or(DEFAULT_SEED))?,
            (None, None) => return Err(ArwError::Config("a subcommand or --config is required".into())),
        };
        if self.out.is_some() {
            config.out = self.out;
        }
        config.validate()?;
        Ok(config)
    }
}

fn from_command(command: Command, seed: u64) -> Result<ExperimentConfig> {
    let chain = |c: ChainArgs, task: Task| ExperimentConfig {
        graph: Some(c.graph),
        n: c.n,
        beta: c.beta,
        lazy: c.lazy,
        seed,
        out: None,
        task,
    };
    Ok(match command {
        Command::Simulate { chain: c, steps, stride, start } => chain(c, Task::Simulate { steps, stride, start }),
        Command::Analyze { chain: c, stationary, mixing_time, cheeger, reversibility } => {
            chain(c, Task::Analyze { stationary, mixing_time, cheeger, reversibility })
        }
        Command::Zchain { d, beta, delta, max_degree, n, stationary: _, hitting, replicas, max_steps } => {
            let mode = if hitting { ZchainMode::Hitting { replicas, max_steps } } else { ZchainMode::Stationary };
            ExperimentConfig {
                graph: None,
                n,
                beta: Beta::Finite(beta),
                lazy: false,
                seed,
                out: None,
                task: Task::Zchain { d, delta, max_degree, mode },
            }
        }
        Command::Coupling {
            graph,
            n,
            beta,
            no_contraction_check: _,
            contraction,
            tv_audit,
            metric,
            policy,
            lambda,
        } => {
            let check = if contraction {
                CouplingCheck::Contraction { metric, policy }
            } else if tv_audit {
                CouplingCheck::TvAudit { lambda }
            } else {
                CouplingCheck::NoContraction
            };
            let needs_chain = !matches!(check, CouplingCheck::NoContraction);
            if needs_chain && (graph.is_none() || n.is_none() || beta.is_none()) {
                return Err(ArwError::Config("--contraction and --tv-audit need --graph, --n and --beta".into()));
            }
            ExperimentConfig {
                graph,
                n: n.unwrap_or(4),
                beta: beta.unwrap_or(Beta::Finite(0.0)),
                lazy: false,
                seed,
                out: None,
                task: Task::Coupling { check },
            }
        }
        Command::Suite { name } => ExperimentConfig {
            graph: None,
            n: 1,
            beta: Beta::Finite(0.0),
            lazy: false,
            seed,
            out: None,
            task: Task::Suite { suite: name },
        },
    })
}
