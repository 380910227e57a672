//! `crt`: conditional randomization tests for forced-choice conjoint data.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure (non-finite statistic, separation, rank deficiency).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "crt", version, about = "Conditional randomization tests for forced-choice conjoint experiments")]
#[command(after_help = "Exit codes: 0 success, 2 invalid input, 3 numerical failure.")]
struct Cli {
    /// Parallel width of the resampling loop (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test whether a factor affects the response (main or coarsened null).
    Test(TestArgs),
    /// Test the no-profile-order, no-carryover or no-fatigue assumption.
    Regularity(RegularityArgs),
    /// AMCE regression baseline with clustered standard errors.
    Amce(AmceArgs),
    /// Screen variables for interactions with a factor, one CRT per variable.
    Screen(ScreenArgs),
    /// Run a simulation study and write tidy CSVs.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Conjoint data in long CSV format.
    #[arg(long)]
    data: PathBuf,
    /// Experiment TOML: factors, randomization, restrictions, covariates.
    #[arg(long)]
    config: PathBuf,
    /// Drop respondents with fewer tasks than the rest instead of failing.
    #[arg(long)]
    allow_ragged: bool,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Number of resamples.
    #[arg(long = "B", default_value_t = 400)]
    b: usize,
    /// Master seed; generated and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// λ choice: `cv` (every dataset), `cv-null` (once, on a null draw) or a number.
    #[arg(long)]
    lambda: Option<String>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// Statistic, e.g. hiernet, hiernet_respondent, dicrt, lasso_main.
    /// Defaults to the config's [test] table, then hiernet.
    #[arg(long)]
    statistic: Option<String>,
    /// Factor(s) of interest.
    #[arg(long, value_delimiter = ',')]
    target: Vec<String>,
    /// Number of factors kept by the d_I distillation stage.
    #[arg(long = "I")]
    i: Option<usize>,
    /// Extra main-effect term for a factor pair, as `A:B`. Repeatable.
    #[arg(long = "extra-main")]
    extra_main: Vec<String>,
    /// Coarsening: a TOML file or the name of a coarsening in the config.
    #[arg(long)]
    coarsen: Option<String>,
    /// Tested group of the coarsening.
    #[arg(long)]
    group: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Regularity {
    Order,
    Carryover,
    Fatigue,
}

#[derive(Args, Debug)]
struct RegularityArgs {
    which: Regularity,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// Include respondent covariates in the order test's fit.
    #[arg(long)]
    include_v: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Cluster {
    Respondent,
    Task,
}

#[derive(Args, Debug)]
struct AmceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Factor whose AMCEs are estimated.
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value_t = Cluster::Respondent)]
    cluster: Cluster,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScreenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// Factor whose interactions are screened.
    #[arg(long)]
    target: String,
    /// Variables to screen; all other factors and covariates when omitted.
    #[arg(long, value_delimiter = ',')]
    variables: Vec<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// power, power-hetero, power-unconstrained, power-dicrt or inflation.
    study: String,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    /// Respondents per dataset (default 1000 for power studies, 5000 for inflation).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<String>,
    /// Interaction sizes of the size panel.
    #[arg(long, value_delimiter = ',', default_value = "0,0.025,0.05,0.075,0.1,0.125")]
    sizes: Vec<f64>,
    /// Number of interactions in the size panel, split evenly between
    /// within- and between-profile terms.
    #[arg(long, default_value_t = 6)]
    n_interactions: usize,
    /// Interaction counts of the count panel.
    #[arg(long, value_delimiter = ',', default_value = "0,6,12,18")]
    counts: Vec<usize>,
    /// Interaction size of the count panel.
    #[arg(long, default_value_t = 0.06)]
    count_size: f64,
    #[arg(long, value_enum, default_value_t = Panel::Both)]
    panel: Panel,
    /// Numbers of Z factors for the inflation study.
    #[arg(long, value_delimiter = ',', default_value = "3,5,10,11,12,13")]
    num_z: Vec<usize>,
    /// Directory for the CSV outputs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Panel {
    Size,
    Count,
    Both,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
