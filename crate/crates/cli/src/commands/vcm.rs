//! `dyncov vcm`: varying-coefficient fit of a scalar outcome on the responses.

use std::path::PathBuf;

use clap::Args;
use dyncov::vcm::{default_lambdas, fit_vcm, LambdaChoice, OutcomeSet, VcmBandwidths, VcmConfig};
use dyncov::Kernel;
use serde::Serialize;

use super::{check_positive, eval_grid, resolve_bandwidths, to_value, Context, KernelArg, Outcome};
use crate::error::{CliResult, LibContext};
use crate::files::{Selection, VcmFile, SCHEMA_VERSION};
use crate::io::{read_observations, read_outcomes, write_json};

#[derive(Args, Debug)]
pub struct VcmArgs {
    /// Observation CSV with header subject,time,y1..yp.
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome CSV with header subject,time,outcome, row-aligned with the data.
    #[arg(long)]
    pub outcomes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Outcome baseline [default: sample mean of the outcomes].
    #[arg(long)]
    pub baseline: Option<f64>,
    /// Fixed ridge parameter.
    #[arg(long, conflicts_with = "select_lambda")]
    pub lambda: Option<f64>,
    /// Cross-validate the ridge parameter (the default without --lambda).
    #[arg(long)]
    pub select_lambda: bool,
    #[arg(long)]
    pub h_mean: Option<f64>,
    /// Covariance bandwidth [default: cross-validated].
    #[arg(long)]
    pub h_cov: Option<f64>,
    /// Cross-covariance bandwidth [default: the covariance bandwidth].
    #[arg(long)]
    pub h_gamma: Option<f64>,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[arg(long)]
    pub domain_end: Option<f64>,
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Resolved {
    data: String,
    outcomes: String,
    domain_end: f64,
    grid_points: usize,
    kernel: Kernel,
    baseline: f64,
    bandwidths: VcmBandwidths,
    bandwidth_selection: Option<Selection>,
    lambda: LambdaChoice,
    folds: usize,
    seed: u64,
}

pub fn run(args: &VcmArgs, ctx: &Context) -> CliResult<Outcome> {
    let data = read_observations(&args.data, args.domain_end)?;
    let scores = read_outcomes(&args.outcomes, &data)?;
    let outcomes = match args.baseline {
        Some(b) => OutcomeSet::new(scores, b),
        None => OutcomeSet::with_mean_baseline(scores),
    }
    .data_err()?;
    check_positive("--h-gamma", args.h_gamma)?;
    check_positive("--lambda", args.lambda)?;
    let kernel = Kernel::from(args.kernel);
    let seed = ctx.seed(args.seed, 1);
    let grid = eval_grid(&data, args.grid_points)?;
    let bw = resolve_bandwidths(&data, args.h_mean, args.h_cov, args.folds, seed, kernel)?;
    let mut bandwidths = VcmBandwidths::new(bw.h_mean, bw.h_cov);
    if let Some(h) = args.h_gamma {
        bandwidths.h_gamma = h;
    }
    let lambda = match args.lambda {
        Some(l) => LambdaChoice::Fixed(l),
        None => LambdaChoice::CrossValidated {
            candidates: default_lambdas(),
            folds: args.folds,
            seed,
        },
    };
    let config = VcmConfig {
        grid,
        bandwidths,
        lambda: lambda.clone(),
        kernel,
    };
    let fit = fit_vcm(&data, &outcomes, &config).data_err()?;
    let curves = |c: &[dyncov::ScalarCurve]| c.iter().map(|s| s.values().to_vec()).collect();
    let file = VcmFile {
        schema_version: SCHEMA_VERSION,
        manifest: ctx.manifest.name.clone(),
        kernel,
        baseline: outcomes.baseline(),
        lambda: fit.lambda,
        bandwidths,
        bandwidth_selection: bw.selection.clone(),
        lambda_scores: fit.lambda_scores.clone(),
        grid: fit.grid.clone(),
        gamma: curves(&fit.gamma),
        beta: curves(&fit.beta),
        r_squared: fit.r_squared.values().to_vec(),
    };
    write_json(&args.out, &file)?;

    let resolved = Resolved {
        data: args.data.display().to_string(),
        outcomes: args.outcomes.display().to_string(),
        domain_end: data.domain_end(),
        grid_points: args.grid_points,
        kernel,
        baseline: outcomes.baseline(),
        bandwidths,
        bandwidth_selection: bw.selection,
        lambda,
        folds: args.folds,
        seed,
    };
    Ok(Outcome {
        config: to_value(&resolved),
        outputs: vec![args.out.clone()],
    })
}
