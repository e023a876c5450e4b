use std::path::PathBuf;
use std::process::ExitCode;

use bertrand_rrm::parametric::GradientMode;
use bertrand_rrm::rrm::Variant;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

#[derive(Debug, Parser)]
#[command(
    name = "bertrand",
    version,
    about = "Learning experiments for Bertrand duopolies with private costs"
)]
struct Cli {
    /// Output directory, created if missing.
    #[arg(long, global = true, env = "BERTRAND_OUT", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the symmetric equilibrium price on a cost grid.
    Bne(BneArgs),
    /// Evaluate the game gradient at a parameter vector.
    Gradient(GradientArgs),
    /// Evaluate the Minty inequality at the k-th counterexample strategy.
    Minty(MintyArgs),
    /// Sample the two-piece vector field and its tangent projection.
    Field(FieldArgs),
    /// Integrate the projected gradient flow with explicit Euler steps.
    Ode(OdeArgs),
    /// Run the stochastic learning recursion over several seeds.
    Learn(LearnArgs),
    /// Check a quadratic Lyapunov certificate on a grid.
    LyapunovVerify(VerifyArgs),
    /// Search for a quadratic certificate with a linear program.
    LyapunovSearch(SearchArgs),
    /// Run many starts or seeds in parallel.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Debug, Args)]
struct BneArgs {
    /// Number of cost grid points on [0, 1].
    #[arg(long, default_value_t = 101)]
    res: usize,
    #[arg(long, default_value_t = 2)]
    firms: usize,
    /// Use the power prior H(c) = c^k instead of the uniform one.
    #[arg(long)]
    power: Option<f64>,
}

#[derive(Debug, Args)]
struct GradientArgs {
    /// Comma-separated slope parameters.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = GradientMode::Quadrature)]
    mode: GradientMode,
}

#[derive(Debug, Args)]
struct MintyArgs {
    #[arg(long, default_value_t = 0)]
    k: u32,
}

#[derive(Debug, Args)]
struct FieldArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 40)]
    res: usize,
    #[arg(long, default_value_t = GradientMode::Quadrature)]
    mode: GradientMode,
}

#[derive(Debug, Args)]
struct OdeArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Starting point; all ones by default.
    #[arg(long, value_delimiter = ',')]
    start: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 200.0)]
    horizon: f64,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    #[arg(long, default_value_t = GradientMode::Quadrature)]
    mode: GradientMode,
}

#[derive(Debug, Args)]
struct RrmArgs {
    /// Config file, flat `key = value` lines or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset before applying the config.
    #[arg(long, value_parser = ["paper"])]
    preset: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Override any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[command(flatten)]
    rrm: RrmArgs,
    /// Number of seeds, counting up from the config's seed.
    #[arg(long)]
    seeds: Option<usize>,
    /// Keep every n-th iterate in the trajectory files.
    #[arg(long, default_value_t = 100)]
    record_every: usize,
    /// Fraction of the run averaged for the tail statistics.
    #[arg(long, default_value_t = 0.1)]
    tail: f64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Certificate file; the diag(52, 20) reference when absent.
    #[arg(long)]
    cert: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    res: usize,
    #[arg(long, default_value_t = 200)]
    facet_res: usize,
    #[arg(long, default_value_t = GradientMode::Quadrature)]
    mode: GradientMode,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = bertrand_rrm::lyapunov::DEFAULT_LP_W)]
    w: f64,
    #[arg(long, default_value_t = 30)]
    res: usize,
    /// Round H to integers before the refined check.
    #[arg(long)]
    round: bool,
    #[arg(long, default_value_t = GradientMode::Quadrature)]
    mode: GradientMode,
}

#[derive(Debug, Subcommand)]
enum SweepCommand {
    /// Projected Euler from every point of a feasible grid.
    Ode(SweepOdeArgs),
    /// Learning runs over a list of piece counts and seeds.
    Learn(SweepLearnArgs),
}

#[derive(Debug, Args)]
struct SweepOdeArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 20)]
    res: usize,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 500.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

#[derive(Debug, Args)]
struct SweepLearnArgs {
    #[command(flatten)]
    rrm: RrmArgs,
    /// Piece counts to run; the config's `m` when absent.
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 0.1)]
    tail: f64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Verification(_) | Self::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Verification(m) | Self::Failed(m) => f.write_str(m),
        }
    }
}

impl From<bertrand_rrm::Error> for CliError {
    fn from(e: bertrand_rrm::Error) -> Self {
        use bertrand_rrm::Error as E;
        match e {
            E::Usage(_)
            | E::Parse(_)
            | E::Schedule(_)
            | E::Domain { .. }
            | E::EmptySet(_)
            | E::Infeasible { .. }
            | E::InvalidStrategy(_)
            | E::InvalidPrior(_) => Self::Usage(e.to_string()),
            E::NoCertificate | E::InvalidCertificate(_) | E::GridTooCoarse => {
                Self::Verification(e.to_string())
            }
            _ => Self::Failed(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = output::OutDir::create(cli.out).and_then(|out| match cli.command {
        Command::Bne(a) => commands::bne(&out, a.res, a.firms, a.power),
        Command::Gradient(a) => commands::gradient(&out, &a.x, a.delta, a.mode),
        Command::Minty(a) => commands::minty(&out, a.k),
        Command::Field(a) => commands::field(&out, a.m, a.delta, a.res, a.mode),
        Command::Ode(a) => commands::ode(&out, &a),
        Command::Learn(a) => commands::learn(&out, &a),
        Command::LyapunovVerify(a) => commands::verify(&out, &a),
        Command::LyapunovSearch(a) => commands::search(&out, &a),
        Command::Sweep(SweepCommand::Ode(a)) => commands::sweep_ode(&out, &a),
        Command::Sweep(SweepCommand::Learn(a)) => commands::sweep_learn(&out, &a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
