//! `dyncov fit`: estimate a covariance matrix curve from an observation CSV.

use std::path::PathBuf;

use clap::Args;
use dyncov::covariance::{curve_from_raw, default_mean_grid, estimate_means, raw_covariances};
use dyncov::{Estimator, Kernel};
use serde::Serialize;

use super::{eval_grid, resolve_bandwidths, to_value, Context, EstimatorArg, KernelArg, Outcome};
use crate::error::{CliResult, LibContext};
use crate::files::{MatrixCurveFile, Selection, SCHEMA_VERSION};
use crate::io::{read_observations, sibling, write_json, write_means};

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Observation CSV with header subject,time,y1..yp.
    #[arg(long)]
    pub data: PathBuf,
    /// Matrix-curve JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    /// End of the time domain [default: largest observed time].
    #[arg(long)]
    pub domain_end: Option<f64>,
    /// Mean bandwidth [default: cross-validated].
    #[arg(long)]
    pub h_mean: Option<f64>,
    #[arg(long, required_unless_present = "select_bandwidth", conflicts_with = "select_bandwidth")]
    pub h_cov: Option<f64>,
    /// Choose the covariance bandwidth by cross validation.
    #[arg(long)]
    pub select_bandwidth: bool,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Lf)]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    pub kernel: KernelArg,
    /// Also write the correlation matrices.
    #[arg(long)]
    pub correlation: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean-curve CSV [default: <out>.means.csv].
    #[arg(long)]
    pub means_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    data: String,
    domain_end: f64,
    grid_points: usize,
    estimator: Estimator,
    kernel: Kernel,
    h_mean: f64,
    h_mean_cross_validated: bool,
    h_cov: f64,
    bandwidth_selection: Option<Selection>,
    folds: usize,
    seed: u64,
    correlation: bool,
    psd_rtol: f64,
}

pub fn run(args: &FitArgs, ctx: &Context) -> CliResult<Outcome> {
    let data = read_observations(&args.data, args.domain_end)?;
    let kernel = Kernel::from(args.kernel);
    let estimator = Estimator::from(args.estimator);
    let seed = ctx.seed(args.seed, 1);
    let grid = eval_grid(&data, args.grid_points)?;
    let bw = resolve_bandwidths(&data, args.h_mean, args.h_cov, args.folds, seed, kernel)?;

    let means = estimate_means(&data, bw.h_mean, &default_mean_grid(&data), kernel).data_err()?;
    let raw = raw_covariances(&data, &means).data_err()?;
    let curve = curve_from_raw(&raw, &grid, bw.h_cov, estimator, kernel).data_err()?;
    let psd = curve
        .matrices
        .iter()
        .map(|m| m.clone().certify_psd().map(|m| m.is_psd_certified()))
        .collect::<dyncov::Result<Vec<bool>>>()
        .data_err()?;
    let correlations = if args.correlation {
        Some(curve.correlations().data_err()?.iter().map(|c| c.to_rows()).collect())
    } else {
        None
    };

    let file = MatrixCurveFile {
        schema_version: SCHEMA_VERSION,
        manifest: ctx.manifest.name.clone(),
        estimator: Some(estimator),
        kernel: Some(kernel),
        domain_end: data.domain_end(),
        h_mean: Some(bw.h_mean),
        h_cov: Some(bw.h_cov),
        bandwidth_selection: bw.selection.clone(),
        grid,
        matrices: curve.matrices.iter().map(|m| m.to_rows()).collect(),
        psd,
        correlations,
    };
    write_json(&args.out, &file)?;
    let means_path = args.means_out.clone().unwrap_or_else(|| sibling(&args.out, ".means.csv"));
    write_means(&means_path, &means)?;

    let resolved = Resolved {
        data: args.data.display().to_string(),
        domain_end: data.domain_end(),
        grid_points: args.grid_points,
        estimator,
        kernel,
        h_mean: bw.h_mean,
        h_mean_cross_validated: args.h_mean.is_none(),
        h_cov: bw.h_cov,
        bandwidth_selection: bw.selection,
        folds: args.folds,
        seed,
        correlation: args.correlation,
        psd_rtol: dyncov::matrix::PSD_RTOL,
    };
    Ok(Outcome {
        config: to_value(&resolved),
        outputs: vec![args.out.clone(), means_path],
    })
}
