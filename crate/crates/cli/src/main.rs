//! `mlnmr`: multilevel network meta-regression for survival outcomes.

mod commands;
mod config;
mod error;
mod matrix;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::{Estimand, PredictOptions, SimulateOptions};
use config::Overrides;
use error::CliError;
use mlnmr::comparison::Criterion;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "mlnmr",
    version,
    about = "Multilevel network meta-regression for survival outcomes",
    long_about = "Bayesian multilevel network meta-regression combining individual and aggregate survival data.\n\
                  Exit codes: 0 success, 1 model or runtime failure, 2 usage or data error."
)]
struct Cli {
    /// Worker threads for chains and estimand draws (default: physical cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a preset scenario and write ingestion CSVs, truth and configs
    Simulate(SimulateArgs),
    /// Fit a model: adequacy-managed sampling, diagnostics, draws and report
    Fit(FitArgs),
    /// Compare fitted models by LOO or WAIC, overall and per study
    Compare(CompareArgs),
    /// Population-average estimands from a fitted model, as tidy CSV
    Predict(PredictArgs),
    /// Integration adequacy audit trail of a fit, or run the procedure
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario preset
    #[arg(long, default_value = "appC")]
    preset: String,
    /// Random seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Survival family written into the generated fit configurations
    #[arg(long, default_value = "weibull_ph")]
    family: String,
}

#[derive(Args, Debug, Clone)]
struct OverrideArgs {
    /// Survival family (exp_ph, weibull_ph, gompertz, mspline, pexp, exp_aft, weibull_aft, lognormal, loglogistic, gamma, gengamma)
    #[arg(long)]
    family: Option<String>,
    /// Effect-modifier sharing (independent, shared, classes)
    #[arg(long)]
    effect_modifiers: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
    /// Initial number of integration points
    #[arg(long)]
    n_int: Option<usize>,
    /// Internal knots for spline baselines
    #[arg(long)]
    n_knots: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Draws archive format
    #[arg(long, value_parser = ["csv", "binary"])]
    format: Option<String>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            family: a.family.clone(),
            effect_modifiers: a.effect_modifiers.clone(),
            seed: a.seed,
            chains: a.chains,
            warmup: a.warmup,
            samples: a.samples,
            target_accept: a.target_accept,
            n_int: a.n_int,
            n_knots: a.n_knots,
            out: a.out.clone(),
            format: a.format.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CriterionArg {
    Loo,
    Waic,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Fit output directories
    #[arg(required = true)]
    fits: Vec<PathBuf>,
    /// Display names, one per fit (comma separated)
    #[arg(long, value_delimiter = ',')]
    names: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "loo")]
    criterion: CriterionArg,
    /// Also write the table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimandArg {
    Survival,
    Hazard,
    Cumhaz,
    Quantile,
    Rmst,
    Hr,
    Loghr,
    MedianRatio,
    MedianDifference,
    RmstDifference,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Fit output directory
    #[arg(long)]
    fit: PathBuf,
    /// Target population: a study id, or the label of --population-summary
    #[arg(long)]
    population: Option<String>,
    /// Covariate summary of an external population (covariate,stat,value)
    #[arg(long)]
    population_summary: Option<PathBuf>,
    /// Study whose baseline the population borrows
    #[arg(long)]
    baseline_study: Option<String>,
    #[arg(long, value_enum)]
    estimand: EstimandArg,
    /// Treatments (comma separated); for contrasts the first is the comparator
    #[arg(long, value_delimiter = ',')]
    treatments: Option<Vec<String>>,
    /// Restricted mean time horizon ("inf" for unrestricted)
    #[arg(long)]
    tstar: Option<f64>,
    /// Quantile level: solves S(t) = 1 - alpha
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Explicit time grid (comma separated)
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Points of the default time grid
    #[arg(long, default_value_t = 128)]
    n_times: usize,
    /// Integration points representing the population
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    /// Output CSV (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Fit output directory whose audit trail to show
    #[arg(long, conflicts_with = "config")]
    fit: Option<PathBuf>,
    /// Configuration to run the adequacy procedure for
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&SimulateOptions {
            preset: a.preset,
            seed: a.seed,
            out: a.out,
            family: a.family,
        }),
        Command::Fit(a) => commands::fit(&a.config, &Overrides::from(&a.overrides)),
        Command::Compare(a) => {
            let criterion = match a.criterion {
                CriterionArg::Loo => Criterion::Loo,
                CriterionArg::Waic => Criterion::Waic,
            };
            commands::compare(&a.fits, a.names.as_deref(), criterion, a.out.as_deref())
        }
        Command::Predict(a) => commands::predict(&PredictOptions {
            fit_dir: a.fit,
            population: a.population,
            population_summary: a.population_summary,
            baseline_study: a.baseline_study,
            estimand: match a.estimand {
                EstimandArg::Survival => Estimand::Survival,
                EstimandArg::Hazard => Estimand::Hazard,
                EstimandArg::Cumhaz => Estimand::Cumhaz,
                EstimandArg::Quantile => Estimand::Quantile,
                EstimandArg::Rmst => Estimand::Rmst,
                EstimandArg::Hr => Estimand::Hr,
                EstimandArg::Loghr => Estimand::Loghr,
                EstimandArg::MedianRatio => Estimand::MedianRatio,
                EstimandArg::MedianDifference => Estimand::MedianDifference,
                EstimandArg::RmstDifference => Estimand::RmstDifference,
            },
            treatments: a.treatments,
            tstar: a.tstar,
            alpha: a.alpha,
            times: a.times,
            n_times: a.n_times,
            grid_points: a.grid_points,
            out: a.out,
        }),
        Command::Audit(a) => commands::audit(a.fit.as_deref(), a.config.as_deref(), &Overrides::from(&a.overrides)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = cli.threads.unwrap_or_else(num_cpus::get_physical).max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("could not configure {threads} threads: {e}");
    }
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
