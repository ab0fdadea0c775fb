//! `dyncov benchmark`: the Monte Carlo ISE table, or `--score` for a single fit.

use std::path::PathBuf;

use clap::Args;
use dyncov::sim::{ise, run_benchmark, BenchConfig, RepeatDesign};
use dyncov::{linspace, Estimator, Kernel};

use super::{to_value, Context, EstimatorArg, KernelArg, Outcome};
use crate::error::{CliError, CliResult, LibContext};
use crate::files::{check_schema, MatrixCurveFile, ScoreFile, SimFile, SCHEMA_VERSION};
use crate::io::{fmt_f64, read_data_json, sibling, write_json, write_table};

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Results CSV (one row per estimator and cell), or the score JSON with --score.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-replicate ISE CSV [default: <out>.runs.csv].
    #[arg(long)]
    pub runs_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub estimators: Option<Vec<EstimatorArg>>,
    /// Bandwidths over which the mean ISE is minimized.
    #[arg(long, value_delimiter = ',')]
    pub h_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Points of the ISE grid on [0, 1].
    #[arg(long)]
    pub ise_points: Option<usize>,
    /// Use the repeated-observation design.
    #[arg(long)]
    pub repeated: bool,
    /// Folds for the mean bandwidth [default: leave-one-out].
    #[arg(long)]
    pub mean_folds: Option<usize>,
    /// Score a fitted matrix-curve JSON against the model in --truth.
    #[arg(long, requires = "truth")]
    pub score: Option<PathBuf>,
    /// Simulation sidecar JSON written by `dyncov simulate`.
    #[arg(long, requires = "score")]
    pub truth: Option<PathBuf>,
}

pub fn run(args: &BenchmarkArgs, ctx: &Context) -> CliResult<Outcome> {
    match (&args.score, &args.truth) {
        (Some(fit), Some(truth)) => score(args, fit, truth, ctx),
        _ => table(args, ctx),
    }
}

fn resolve(args: &BenchmarkArgs, ctx: &Context) -> BenchConfig {
    let d = BenchConfig::default();
    BenchConfig {
        dims: args.dims.clone().unwrap_or(d.dims),
        sizes: args.sizes.clone().unwrap_or(d.sizes),
        estimators: args
            .estimators
            .as_ref()
            .map_or(d.estimators, |v| v.iter().map(|&e| Estimator::from(e)).collect()),
        bandwidths: args.h_grid.clone().unwrap_or(d.bandwidths),
        replicates: args.replicates.unwrap_or(d.replicates),
        seed: ctx.seed(args.seed, d.seed),
        kernel: args.kernel.map_or(d.kernel, Kernel::from),
        ise_grid: args.ise_points.map_or(d.ise_grid, |m| linspace(0.0, 1.0, m)),
        spread: d.spread,
        repeat_design: args.repeated.then(RepeatDesign::default),
        mean_folds: args.mean_folds.or(d.mean_folds),
    }
}

fn table(args: &BenchmarkArgs, ctx: &Context) -> CliResult<Outcome> {
    let config = resolve(args, ctx);
    config.validate().config_err()?;
    let result = run_benchmark(&config).data_err()?;

    let header: Vec<String> = ["estimator", "p", "n", "replicates", "log_mean_ise", "best_bandwidth"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.estimator.to_string(),
                r.p.to_string(),
                r.n.to_string(),
                r.replicates.to_string(),
                fmt_f64(r.log_mean_ise),
                fmt_f64(r.best_bandwidth),
            ]
        })
        .collect();
    write_table(&args.out, &header, &rows)?;

    let mut run_header: Vec<String> = ["p", "n", "estimator", "replicate"].iter().map(|s| s.to_string()).collect();
    run_header.extend(config.bandwidths.iter().map(|h| format!("ise_h{}", fmt_f64(*h))));
    let mut run_rows = Vec::new();
    for r in &result.rows {
        for rep in 0..r.replicates {
            let mut row = vec![r.p.to_string(), r.n.to_string(), r.estimator.to_string(), rep.to_string()];
            row.extend(r.ise.iter().map(|per_h| fmt_f64(per_h[rep])));
            run_rows.push(row);
        }
    }
    let runs_path = args.runs_out.clone().unwrap_or_else(|| sibling(&args.out, ".runs.csv"));
    write_table(&runs_path, &run_header, &run_rows)?;

    Ok(Outcome {
        config: to_value(&config),
        outputs: vec![args.out.clone(), runs_path],
    })
}

fn score(args: &BenchmarkArgs, fit_path: &PathBuf, truth_path: &PathBuf, ctx: &Context) -> CliResult<Outcome> {
    let fit: MatrixCurveFile = read_data_json(fit_path)?;
    check_schema(fit.schema_version, "matrix-curve file")?;
    let truth: SimFile = read_data_json(truth_path)?;
    check_schema(truth.schema_version, "simulation sidecar")?;
    truth
        .sim
        .validate()
        .map_err(|e| CliError::data(format!("{}: {e}", truth_path.display())))?;
    let curve = fit.to_curve()?;
    let value = ise(&curve, &truth.sim).data_err()?;
    println!("ise {}", fmt_f64(value));
    let file = ScoreFile {
        schema_version: SCHEMA_VERSION,
        manifest: ctx.manifest.name.clone(),
        fit: fit_path.display().to_string(),
        truth: truth_path.display().to_string(),
        ise: value,
        log_ise: value.ln(),
    };
    write_json(&args.out, &file)?;
    Ok(Outcome {
        config: serde_json::json!({
            "mode": "score",
            "fit": file.fit,
            "truth": file.truth,
        }),
        outputs: vec![args.out.clone()],
    })
}
