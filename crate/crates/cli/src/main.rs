mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{DfArgs, LassoPathArgs, MarsAction, SplinesTableArgs, TreeTableArgs};
use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::output::Format;

/// Degrees-of-freedom experiments: spline and tree tables, lasso df paths,
/// MARS penalty correction, and Monte Carlo df on user data.
#[derive(Debug, Parser)]
#[command(name = "dflab", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the Monte Carlo layers (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Flat key=value file; keys are flag names without the leading dashes.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Theoretical and empirical df of regression, smoothing and monotone splines.
    SplinesTable(SplinesTableArgs),
    /// Empirical df and search cost of regression trees by depth and p.
    TreeTable(TreeTableArgs),
    /// Lasso path with active count, trace S(y), derivative correction and GCV.
    LassoPath(LassoPathArgs),
    /// MARS penalty correction, self-consistency sweep, R^2 study and CSV fits.
    Mars {
        #[command(subcommand)]
        action: MarsAction,
    },
    /// Monte Carlo df of a named procedure on a CSV data set.
    Df(DfArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SplinesTable(_) => "splines-table",
            Command::TreeTable(_) => "tree-table",
            Command::LassoPath(_) => "lasso-path",
            Command::Mars { action } => action.name(),
            Command::Df(_) => "df",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.common.config.as_deref())?;
    let seed = settings.value("seed", cli.common.seed, 1u64)?;
    let format = settings.value("format", cli.common.format, Format::Csv)?;
    let out = settings.unrecorded::<PathBuf>("out", cli.common.out.clone())?;
    if let Some(threads) = settings.unrecorded::<usize>("threads", cli.common.threads)? {
        config::ensure(threads >= 1, || "threads must be at least 1".into())?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }

    let command = cli.command.name().to_string();
    let mut ctx = commands::Context {
        settings,
        seed,
        command,
        format,
        out,
    };
    match cli.command {
        Command::SplinesTable(a) => commands::splines_table(&mut ctx, a),
        Command::TreeTable(a) => commands::tree_table(&mut ctx, a),
        Command::LassoPath(a) => commands::lasso_path(&mut ctx, a),
        Command::Mars { action } => commands::mars(&mut ctx, action),
        Command::Df(a) => commands::df(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dflab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
