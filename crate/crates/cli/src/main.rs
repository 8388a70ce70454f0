//! `faultplan`: generate simulated systems, enumerate minimal faults, run
//! injection campaigns and plan call-site hardening.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use faultplan::campaign::Escalation;
use faultplan::hardening::Method;

#[derive(Parser)]
#[command(name = "faultplan", version, about = "Minimal combinatorial fault discovery and hardening planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated system of grouped alternative paths.
    Gen(GenArgs),
    /// Enumerate minimal satisfying assignments of a monotone CNF file.
    Solve(SolveArgs),
    /// Run fault-injection campaigns against a simulated system.
    Inject(InjectArgs),
    /// Select APIs to harden over a sweep of budgets.
    Harden(HardenArgs),
}

#[derive(Args, Serialize)]
pub struct GenArgs {
    /// Alternative-path groups per request.
    #[arg(long)]
    pub groups: usize,
    /// Edges per path.
    #[arg(long)]
    pub edges: usize,
    /// Skeleton edges shared by both paths of a group.
    #[arg(long)]
    pub bones: usize,
    #[arg(long, default_value_t = 10)]
    pub requests: usize,
    /// Fraction of non-skeleton slots drawn from a shared API pool.
    #[arg(long, default_value_t = 0.0)]
    pub share: f64,
    /// Seed for the ChaCha8 generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct SolveArgs {
    /// Formula in `p mcnf` format.
    #[arg(long)]
    pub cnf: PathBuf,
    /// Maximum solution size.
    #[arg(long)]
    pub k: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscalationArg {
    Exhaustive,
    NewPath,
}

impl From<EscalationArg> for Escalation {
    fn from(e: EscalationArg) -> Self {
        match e {
            EscalationArg::Exhaustive => Escalation::Exhaustive,
            EscalationArg::NewPath => Escalation::NewPath,
        }
    }
}

#[derive(Args, Serialize)]
pub struct InjectArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Request to probe; repeatable.
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    pub request: Vec<u32>,
    /// Probe every request of the system.
    #[arg(long)]
    pub all: bool,
    /// Largest fault size of a dynamic campaign.
    #[arg(long, required_unless_present = "static_k")]
    pub kmax: Option<usize>,
    /// Run a static campaign with the bound fixed at K.
    #[arg(long = "static", value_name = "K", conflicts_with = "kmax")]
    pub static_k: Option<usize>,
    #[arg(long, value_enum, default_value = "exhaustive")]
    pub escalation: EscalationArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Campaigns run in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Exact,
    Greedy,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => Method::Exact,
            MethodArg::Greedy => Method::Greedy,
        }
    }
}

#[derive(Args, Serialize)]
pub struct HardenArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Directory written by `inject`.
    #[arg(long)]
    pub campaign_dir: PathBuf,
    /// High-priority requests: comma-separated ids or `auto-topfreq:N`.
    #[arg(long)]
    pub high: String,
    /// Strictly increasing budgets, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<usize>,
    #[arg(long, value_enum, default_value = "exact")]
    pub method: MethodArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Budget levels evaluated in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Input(anyhow::Error),
    Infeasible(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Input(e) | Failure::Infeasible(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Solve(a) => commands::solve(a),
        Command::Inject(a) => commands::inject(a),
        Command::Harden(a) => commands::harden(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
