mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Method, ToySpec};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "sorl-lab", version, about = "Spectral open-world representation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Write the adjacency matrices, degrees and spectrum of a world.
    Graph,
    /// Spectral embedding Z and the constant-offset check.
    Embed,
    /// Gradient-descent training of the SORL or low-rank objective.
    Train {
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Seeded K-means, Hungarian accuracy and K-means measures.
    Eval,
    /// δ sweep with analytic derivative, leading term and class-wise bound.
    Perturb,
    /// Closed-form toy spectra against numeric eigensolves.
    ToyVerify,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// World JSON file.
    #[arg(long, global = true)]
    world: Option<PathBuf>,
    /// Toy world, e.g. tau1=0.95,tauc=0.03,taus=0.02[,cyl=printed|stochastic].
    #[arg(long, global = true)]
    toy: Option<ToySpec>,
    /// Block-world parameter JSON file.
    #[arg(long, global = true)]
    block: Option<PathBuf>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    eta_u: Option<f64>,
    #[arg(long, global = true)]
    eta_l: Option<f64>,
    /// Comma-separated δ grid.
    #[arg(long, global = true, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Total K-means clusters (default: number of classes).
    #[arg(long, global = true)]
    clusters: Option<usize>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    step: Option<f64>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Parameter triples per regime for toy-verify.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Constant in the toy bounds.
    #[arg(long, global = true)]
    constant: Option<f64>,
    #[arg(long, global = true)]
    fd_step: Option<f64>,
    /// Minimum λ_k/λ_(k+1) for the class-wise bound assumptions.
    #[arg(long, global = true)]
    gap_threshold: Option<f64>,
    /// Disable data-parallel evaluation.
    #[arg(long, global = true)]
    sequential: bool,
}

fn merge(common: Common, method: Option<Method>) -> CliResult<ExperimentConfig> {
    let mut c = config::load(common.config.as_deref())?;
    if common.world.is_some() || common.toy.is_some() || common.block.is_some() {
        c.world = common.world;
        c.toy = common.toy;
        c.block = common.block;
    }
    macro_rules! set {
        ($($src:expr => $dst:expr),* $(,)?) => { $(if let Some(v) = $src { $dst = v; })* };
    }
    set! {
        common.deltas => c.deltas,
        common.seed => c.seed,
        common.out => c.out,
        method => c.method,
        common.max_iters => c.optimizer.max_iters,
        common.tol => c.optimizer.tol,
        common.restarts => c.kmeans.restarts,
        common.samples => c.samples,
        common.constant => c.bound_constant,
        common.fd_step => c.fd_step,
        common.gap_threshold => c.assumptions.min_gap_ratio,
    }
    c.k = common.k.or(c.k);
    c.eta_u = common.eta_u.or(c.eta_u);
    c.eta_l = common.eta_l.or(c.eta_l);
    c.clusters = common.clusters.or(c.clusters);
    c.optimizer.step = common.step.or(c.optimizer.step);
    c.sequential |= common.sequential;
    c.validate()?;
    Ok(c)
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("SORL_LAB_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("SORL_LAB_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    configure_threads()?;
    let method = match &cli.command {
        Command::Train { method } => *method,
        _ => None,
    };
    let cfg = merge(cli.common, method)?;
    match cli.command {
        Command::Graph => commands::graph(&cfg),
        Command::Embed => commands::embed(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Perturb => commands::perturb(&cfg),
        Command::ToyVerify => commands::toy_verify(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
