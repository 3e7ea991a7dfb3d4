//! `lambda-infer`: simulation, likelihoods, MCMC and moment bounds for
//! Λ-coalescents from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(lambda_core::Error),
}

impl From<lambda_core::Error> for CliError {
    fn from(e: lambda_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use lambda_core::Error::*;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Numerical(_) | Capacity(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lambda-infer", about = "Bayesian nonparametric inference for Lambda-coalescents", disable_version_flag = true)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (falls back to LAMBDA_INFER_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; standard output if omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a serial dataset.
    Simulate(SimulateArgs),
    /// Estimate (or compute exactly) the likelihood of a dataset.
    Likelihood(LikelihoodArgs),
    /// Run a pseudo-marginal chain over the stick-breaking prior.
    Mcmc(McmcArgs),
    /// Extremize a functional over a credible moment envelope.
    Bounds(BoundsArgs),
    /// Print the moments λ_3..λ_n of a measure.
    Moments(MomentsArgs),
    /// Expected limiting posterior of Kingman vs star for two alleles.
    Table1(Table1Args),
    /// Draw from the prior and record parameters and moments.
    Prior(PriorArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Mutation model: binary-loci or pim.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Number of binary loci (default: haplotype length of the data, or 10).
    #[arg(long)]
    pub loci: Option<usize>,
    /// Number of types for the pim model.
    #[arg(long)]
    pub types: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in measure name or measure file.
    #[arg(long)]
    pub measure: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sampling schedule `t:n,t:n,...` in backward time.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LikelihoodArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub measure: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exact recursion (single sampling time only).
    #[arg(long)]
    pub exact: bool,
    /// Particle estimator: history or peeling.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Choose the particle count for a target log-estimate variance.
    #[arg(long)]
    pub tune: bool,
    #[arg(long)]
    pub target_variance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    /// exact, noisy, da-exact or da-noisy.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub surrogate_particles: Option<usize>,
    /// Per-coordinate proposal variance.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub estimator: Option<String>,
    /// Use the exact recursion as the likelihood (single sampling time only).
    #[arg(long)]
    pub exact_likelihood: bool,
    /// Write wall_ms as 0 so that repeated runs are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Chain CSV written by `mcmc`.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Moment indices to constrain, e.g. `3,4`.
    #[arg(long)]
    pub indices: Option<String>,
    /// Explicit constraints such as `3<=0.5,4>=0.3`, added to any chain envelope.
    #[arg(long)]
    pub constraints: Option<String>,
    /// Leading fraction of the chain discarded as burn-in.
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// exp, indicator:a:b or monomial:k.
    #[arg(long)]
    pub functional: Option<String>,
    /// Two-column `r,q` CSV for a tabulated functional.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Allowance above η for the Kingman test.
    #[arg(long)]
    pub kingman_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    /// Comma-separated θ values.
    #[arg(long)]
    pub theta_list: Option<String>,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub draws: Option<usize>,
    /// Moments recorded per draw, λ_3..λ_n.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("LAMBDA_INFER_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::Core(lambda_core::Error::Data(format!("LAMBDA_INFER_THREADS=`{v}` is not a count")))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let result = configure_threads(cli.threads).and_then(|_| commands::run(&cli, &argv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lambda-infer: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
