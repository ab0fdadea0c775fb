//! `dyncov`: simulate longitudinal data, fit time-varying covariance curves,
//! run the ISE benchmark, fit varying-coefficient models and run FPCA.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

mod commands;
mod error;
mod files;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::benchmark::BenchmarkArgs;
use commands::fit::FitArgs;
use commands::fpca::FpcaArgs;
use commands::simulate::SimulateArgs;
use commands::vcm::VcmArgs;
use commands::{Context, Outcome};
use error::{CliError, CliResult};
use manifest::{manifest_for, ManifestRef, Overrides, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "dyncov", version, about = "Time-varying covariance estimation for sparse longitudinal data")]
struct Cli {
    /// Worker threads [default: DYNCOV_THREADS, else all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Manifest path [default: <primary output>.manifest.json].
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a model from a config file and write one simulated data set.
    Simulate(SimulateArgs),
    /// Estimate a covariance matrix curve from an observation CSV.
    Fit(FitArgs),
    /// Run the Monte Carlo ISE benchmark, or score one fit with --score.
    Benchmark(BenchmarkArgs),
    /// Fit the varying-coefficient model for a scalar outcome.
    Vcm(VcmArgs),
    /// Functional principal components of correlation or generic curves.
    Fpca(FpcaArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        /// Manifest JSON written by an earlier run.
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Benchmark(_) => "benchmark",
            Command::Vcm(_) => "vcm",
            Command::Fpca(_) => "fpca",
            Command::Replay { .. } => "replay",
        }
    }

    fn primary_output(&self) -> Option<&PathBuf> {
        match self {
            Command::Simulate(a) => Some(&a.out),
            Command::Fit(a) => Some(&a.out),
            Command::Benchmark(a) => Some(&a.out),
            Command::Vcm(a) => Some(&a.out),
            Command::Fpca(a) => Some(&a.out),
            Command::Replay { .. } => None,
        }
    }
}

fn execute(cli: Cli, args: Vec<String>, overrides: Overrides) -> CliResult<()> {
    if let Command::Replay { manifest } = &cli.command {
        let recorded = RunManifest::read(manifest)?;
        let mut argv = vec!["dyncov".to_string()];
        argv.extend(recorded.args.iter().cloned());
        let replayed = Cli::try_parse_from(&argv)
            .map_err(|e| CliError::config(format!("{}: recorded arguments no longer parse: {e}", manifest.display())))?;
        if matches!(replayed.command, Command::Replay { .. }) {
            return Err(CliError::config("a manifest cannot replay another replay"));
        }
        return execute(replayed, recorded.args, recorded.overrides);
    }

    let threads = match cli.threads.or(overrides.threads) {
        Some(0) => return Err(CliError::config("thread count must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {threads} worker threads: {e}")))?;

    let primary = cli.command.primary_output().expect("non-replay commands have outputs");
    let ctx = Context {
        overrides,
        manifest: ManifestRef::new(cli.manifest.as_deref(), primary),
    };
    let start = Instant::now();
    let outcome: Outcome = pool.install(|| match &cli.command {
        Command::Simulate(a) => commands::simulate::run(a, &ctx),
        Command::Fit(a) => commands::fit::run(a, &ctx),
        Command::Benchmark(a) => commands::benchmark::run(a, &ctx),
        Command::Vcm(a) => commands::vcm::run(a, &ctx),
        Command::Fpca(a) => commands::fpca::run(a, &ctx),
        Command::Replay { .. } => unreachable!("handled above"),
    })?;
    let manifest = manifest_for(
        cli.command.name(),
        args,
        overrides,
        threads,
        outcome.config,
        &outcome.outputs,
        start.elapsed().as_secs_f64(),
    );
    manifest.write(&ctx.manifest.path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = Overrides::from_env().and_then(|o| execute(cli, args, o));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dyncov: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
