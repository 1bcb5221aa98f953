//! `arrival`: ingestion, simulation, fitting and posterior summaries of
//! first-arrival dates, one reproducible run per invocation.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 when a
//! computation fails.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use arrival_core::config::Config;
use arrival_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "arrival", version, about = "First-arrival dates from heterogeneous survey tables")]
struct Cli {
    /// TOML config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the chain seed (`fit`) or the simulation seed (`simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fit the GEV-only comparison model without effort sharing.
    #[arg(long, global = true)]
    gev_only: bool,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate raw CSV inputs and aggregate them to pixel-year tables.
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
    /// Simulate a data set from the full model, or run a recovery study.
    Simulate {
        #[arg(long)]
        recovery: bool,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        /// Pixel-years per replicate scored for interval coverage.
        #[arg(long, default_value_t = 50)]
        eval_cells: usize,
    },
    /// Run the MCMC sampler on a directory of raw inputs.
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Posterior arrival-day summaries for one year.
    Predict {
        #[command(flatten)]
        run: FitArgs,
        #[arg(long)]
        year: i32,
        /// `observed` or `infinite` (debiased) effort.
        #[arg(long, default_value = "observed")]
        mode: String,
        /// NAO index; required for years outside the fit.
        #[arg(long, allow_hyphen_values = true)]
        nao: Option<f64>,
    },
    /// Excursion functions of the spatial fields.
    Excursions {
        #[command(flatten)]
        run: FitArgs,
        /// Fields to process; all spatial fields by default.
        #[arg(long)]
        field: Vec<String>,
        /// Thresholds; the config's list by default.
        #[arg(long, allow_hyphen_values = true)]
        u: Vec<f64>,
        /// `positive` or `negative`; both by default.
        #[arg(long)]
        sign: Vec<String>,
    },
    /// Rank correlations of posterior-mean fields with land cover.
    Correlate {
        #[command(flatten)]
        run: FitArgs,
    },
    /// ESS and acceptance rates recomputed from a run's trace.
    Diagnose {
        /// Directory holding `trace.csv`.
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Raw inputs; defaults to the directory recorded by `fit`.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> arrival_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if cli.gev_only {
        cfg.model.gev_only = true;
    }
    if let Some(s) = cli.seed {
        cfg.chain.seed = s;
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Validation("no subcommand given; see --help".into()));
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context::new(cfg, cli.config.clone(), cli.seed, cli.out.clone())?;
    match command {
        Command::Ingest { input } => commands::ingest(&ctx, &input),
        Command::Simulate { recovery: false, .. } => commands::simulate(&ctx),
        Command::Simulate { recovery: true, replicates, eval_cells } => commands::recovery(&ctx, replicates, eval_cells),
        Command::Fit { input } => commands::fit(&ctx, &input),
        Command::Predict { run, year, mode, nao } => {
            commands::predict(&ctx, &run.fit, run.input.as_deref(), year, &mode, nao)
        }
        Command::Excursions { run, field, u, sign } => {
            commands::excursions(&ctx, &run.fit, run.input.as_deref(), &field, &u, &sign)
        }
        Command::Correlate { run } => commands::correlate(&ctx, &run.fit, run.input.as_deref()),
        Command::Diagnose { run } => commands::diagnose(&ctx, &run),
    }
}
