mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icens_core::simulation::RateEstimator;
use icens_core::{QuadratureRule, SimDesign, SolverConfig};

/// Smoothed maximum likelihood estimation for interval censored data,
/// case 2, with separated inspection times.
#[derive(Debug, Parser)]
#[command(name = "icens", version)]
struct Cli {
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true, value_parser = positive)]
    jobs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true, env = "ICENS_SEED", default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sample from the simulation design and write it as CSV.
    Simulate {
        #[arg(long, value_parser = positive)]
        n: usize,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        design: DesignArgs,
    },
    /// Fit an estimator to a CSV sample or to a simulated one.
    Fit(FitArgs),
    /// Asymptotic constants at interior points.
    Asymptotics {
        /// Evaluation points (repeatable).
        #[arg(long = "v", default_values_t = [1.0])]
        points: Vec<f64>,
        /// Add the toy estimator computed from a simulated sample.
        #[arg(long)]
        with_toy: bool,
        /// Add the solution of the linearized equation for the same sample.
        #[arg(long)]
        with_linear: bool,
        /// Sample size for `--with-toy` / `--with-linear`.
        #[arg(long, default_value_t = 1000, value_parser = positive)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        design: DesignArgs,
    },
    /// Monte Carlo check of the normal limit of the MSLE.
    Montecarlo {
        #[arg(long, default_value_t = 1000, value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 500, value_parser = positive)]
        reps: usize,
        #[arg(long = "v", default_values_t = [1.0])]
        points: Vec<f64>,
        /// Directory for `replications.csv` and `summary.json` (default:
        /// summary on stdout).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// RMSE at one point over several sample sizes and its log-log slope.
    Rate {
        #[arg(long, value_delimiter = ',', default_values_t = [500, 1000, 2000, 4000], value_parser = positive)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 200, value_parser = positive)]
        reps: usize,
        #[arg(long = "v", default_value_t = 1.0)]
        point: f64,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Msle)]
        estimator: EstimatorArg,
        /// Directory for `rate.csv` and `rate.json` (default: JSON on stdout).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV file with header `t,u,delta`.
    #[arg(long, required_unless_present = "simulate", conflicts_with = "simulate")]
    input: Option<PathBuf>,
    /// Fit a sample drawn from the simulation design instead.
    #[arg(long)]
    simulate: bool,
    /// Sample size for `--simulate`.
    #[arg(long, default_value_t = 1000, value_parser = positive, requires = "simulate")]
    n: usize,
    #[arg(long, value_enum, default_value_t = Which::Msle)]
    which: Which,
    /// Explicit bandwidth; otherwise `b = c n^(-1/5)`.
    #[arg(long, conflicts_with = "c")]
    bandwidth: Option<f64>,
    /// Directory for `<which>.json` and `<which>.tsv` (default: JSON on
    /// stdout).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// End of the observation window.
    #[arg(long, default_value_t = 2.0)]
    upper: f64,
    /// Separation gap; for input files the smallest observed `u - t` by
    /// default, 0.1 for simulated data.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Rate of the exponential truth in the simulation design.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Grid cells.
    #[arg(long, default_value_t = 100, value_parser = at_least_ten)]
    m: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::Riemann)]
    rule: RuleArg,
    /// Bandwidth constant `c` in `b = c n^(-1/5)`.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SolverConfig::default().fenchel_tol)]
    fenchel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Msle,
    Mle,
    Smle,
    CurstatMsle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Riemann,
    Trapezoid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Msle,
    Mle,
}

impl DesignArgs {
    fn design(&self, n: usize, seed: u64) -> SimDesign {
        SimDesign {
            upper: self.upper,
            epsilon: self.epsilon.unwrap_or(0.1),
            rate: self.rate,
            n,
            bandwidth_constant: self.c,
            seed,
            cells: self.m,
            rule: match self.rule {
                RuleArg::Riemann => QuadratureRule::Riemann,
                RuleArg::Trapezoid => QuadratureRule::Trapezoid,
            },
            ..SimDesign::default()
        }
    }
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig { max_iters: self.max_iters, fenchel_tol: self.fenchel_tol, ..SolverConfig::default() }
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn at_least_ten(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 10 => Ok(n),
        Ok(_) => Err("the grid needs at least 10 cells".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn run(cli: Cli) -> io::CliResult<commands::Outcome> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { n, out, design } => commands::simulate(&design.design(n, seed), out.as_deref()),
        Command::Fit(a) => {
            let which = match a.which {
                Which::Msle => commands::FitKind::Msle,
                Which::Mle => commands::FitKind::Mle,
                Which::Smle => commands::FitKind::Smle,
                Which::CurstatMsle => commands::FitKind::CurstatMsle,
            };
            let source = match &a.input {
                Some(p) => commands::Source::File { path: p.clone(), upper: a.design.upper, epsilon: a.design.epsilon },
                None => commands::Source::Simulated(a.design.design(a.n, seed)),
            };
            let spec = commands::FitSpec {
                source,
                which,
                bandwidth: a.bandwidth,
                c: a.design.c,
                cells: a.design.m,
                rule: a.design.design(a.n, seed).rule,
                solver: a.solver.config(),
            };
            commands::fit(&spec, a.out_dir.as_deref())
        }
        Command::Asymptotics { points, with_toy, with_linear, n, out, design } => {
            commands::asymptotics(&design.design(n, seed), &points, with_toy, with_linear, out.as_deref())
        }
        Command::Montecarlo { n, reps, points, out_dir, design, solver } => {
            let d = SimDesign { reps, points, ..design.design(n, seed) };
            commands::montecarlo(&d, &solver.config(), out_dir.as_deref())
        }
        Command::Rate { n, reps, point, estimator, out_dir, design, solver } => {
            let d = SimDesign { reps, points: vec![point], ..design.design(n[0], seed) };
            let est = match estimator {
                EstimatorArg::Msle => RateEstimator::Msle,
                EstimatorArg::Mle => RateEstimator::Mle,
            };
            commands::rate(&d, &n, est, &solver.config(), out_dir.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let pool = match cli.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
