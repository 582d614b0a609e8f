use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Parser)]
#[command(name = "ifdiv", version, about = "Two-interface transmission policies over Gilbert-Elliott channels")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat TOML file overriding the default parameters.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base seed of every Monte-Carlo batch.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub episodes: Option<usize>,
    /// Output directory; without it the main document goes to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// One cost scale or a comma-separated list.
    #[arg(long, global = true, value_name = "REAL|LIST", allow_hyphen_values = true)]
    pub eta: Option<String>,
    /// Exit with status 3 when value iteration hits k_max.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
}

/// `desk` caps every Monte-Carlo batch at [`DESK_EPISODES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Full,
    Desk,
}

pub const DESK_EPISODES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Full,
    Fpomdp,
    Hmdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Interfaces {
    Both,
    Lte,
    Wifi,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Solve a decision process and write its Q-table and greedy policy.
    Solve {
        #[arg(long, value_enum, default_value = "full")]
        model: ModelKind,
    },
    /// Exact lifetime, occupancy, utilization and reward of a policy.
    Analytic {
        /// fullmdp | fpomdp | hmdp | fixed:(a1,a2)
        #[arg(long, default_value = "fixed:(1,1)")]
        agent: String,
    },
    /// Monte-Carlo episodes of one agent.
    Simulate {
        /// fullmdp | qmdp | fpomdp | hmdp | fixed:(a1,a2)
        #[arg(long, default_value = "fullmdp")]
        agent: String,
    },
    /// Two agents on common random numbers.
    Paired {
        #[arg(long, default_value = "fullmdp")]
        baseline: String,
        #[arg(long, default_value = "qmdp")]
        agent: String,
    },
    /// Solve, analyze and simulate every configured agent at every cost scale.
    SweepEta {
        /// Analytic columns only.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Agents planning with scaled channel estimates, run on the true channels.
    Sensitivity {
        /// Relative errors; defaults to the configured list.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        delta: Option<Vec<f64>>,
        /// Agents to perturb; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        agent: Option<Vec<String>>,
        #[arg(long, value_enum, default_value = "both")]
        interfaces: Interfaces,
    },
    /// Fit channel parameters and latency reliability from latency traces.
    Fit {
        /// CSV traces with columns `seq,latency_ms`.
        traces: Vec<PathBuf>,
        /// Deadline in ms; defaults to the configured theta.
        #[arg(long)]
        theta: Option<f64>,
        /// Fit a synthetic LTE trace of this length instead of files.
        #[arg(long, value_name = "LEN")]
        synthetic: Option<usize>,
        /// Fraction of Bad samples lost in the synthetic trace.
        #[arg(long, default_value_t = 0.3)]
        loss: f64,
    },
    /// Write a synthetic latency trace drawn from one configured interface.
    SynthTrace {
        #[arg(long, value_enum, default_value = "lte")]
        interface: Interfaces,
        #[arg(long, default_value_t = 100_000)]
        len: usize,
        #[arg(long, default_value_t = 0.3)]
        loss: f64,
    },
    /// Run a reproduction manifest and report each check.
    Repro {
        #[arg(long, default_value = "repro/manifest.toml")]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Analytic { .. } => "analytic",
            Command::Simulate { .. } => "simulate",
            Command::Paired { .. } => "paired",
            Command::SweepEta { .. } => "sweep-eta",
            Command::Sensitivity { .. } => "sensitivity",
            Command::Fit { .. } => "fit",
            Command::SynthTrace { .. } => "synth-trace",
            Command::Repro { .. } => "repro",
        }
    }
}
