//! Subcommand implementations and the pieces they share.

pub mod benchmark;
pub mod fit;
pub mod fpca;
pub mod simulate;
pub mod vcm;

use std::path::PathBuf;

use clap::ValueEnum;
use dyncov::bandwidth::{cv_mean_bandwidth, select_bandwidth_detailed, BandwidthGrid};
use dyncov::sim::bench::mean_bandwidth_grid;
use dyncov::{Estimator, Kernel, ObservationSet};
use serde::Serialize;

use crate::error::{CliError, CliResult, LibContext};
use crate::files::Selection;
use crate::manifest::{ManifestRef, Overrides};

pub struct Context {
    pub overrides: Overrides,
    pub manifest: ManifestRef,
}

impl Context {
    /// Flag, then environment, then the command's own default.
    pub fn seed(&self, flag: Option<u64>, fallback: u64) -> u64 {
        flag.or(self.overrides.seed).unwrap_or(fallback)
    }
}

/// What a command reports back for its manifest.
pub struct Outcome {
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

pub fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("settings serialize to JSON")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Epanechnikov,
    Uniform,
    Triangular,
    Gaussian,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
            KernelArg::Uniform => Kernel::Uniform,
            KernelArg::Triangular => Kernel::Triangular,
            KernelArg::Gaussian => Kernel::Gaussian,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Nw,
    Ll,
    Lf,
    Dcov,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Nw => Estimator::Nw,
            EstimatorArg::Ll => Estimator::LocalLinearRaw,
            EstimatorArg::Lf => Estimator::LocalFrechet,
            EstimatorArg::Dcov => Estimator::DcovSqrt,
        }
    }
}

/// Evaluation grid `linspace(0, T, points)`.
pub fn eval_grid(data: &ObservationSet, points: usize) -> CliResult<Vec<f64>> {
    if points < 2 {
        return Err(CliError::config("--grid-points must be at least 2"));
    }
    Ok(dyncov::linspace(0.0, data.domain_end(), points))
}

pub fn check_positive(name: &str, value: Option<f64>) -> CliResult<()> {
    match value {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(CliError::config(format!("{name} must be positive, got {v}"))),
        _ => Ok(()),
    }
}

/// Mean and covariance bandwidths, cross-validating whichever is missing.
pub struct Bandwidths {
    pub h_mean: f64,
    pub h_cov: f64,
    pub selection: Option<Selection>,
}

pub fn resolve_bandwidths(
    data: &ObservationSet,
    h_mean: Option<f64>,
    h_cov: Option<f64>,
    folds: usize,
    seed: u64,
    kernel: Kernel,
) -> CliResult<Bandwidths> {
    check_positive("--h-mean", h_mean)?;
    check_positive("--h-cov", h_cov)?;
    if folds < 2 {
        return Err(CliError::config("--folds must be at least 2"));
    }
    let h_mean = match h_mean {
        Some(h) => h,
        None => {
            let grid = mean_bandwidth_grid(data, Some(folds), seed).data_err()?;
            cv_mean_bandwidth(data, &grid, kernel).data_err()?
        }
    };
    let (h_cov, selection) = match h_cov {
        Some(h) => (h, None),
        None => {
            let grid = BandwidthGrid::default_for(data, seed)
                .and_then(|g| g.with_folds(folds.min(data.n())))
                .data_err()?;
            let choice = select_bandwidth_detailed(data, &grid, h_mean, kernel).data_err()?;
            let selection = Selection::new(choice, grid.candidates().to_vec(), grid.folds(), seed);
            (choice.h_opt, Some(selection))
        }
    };
    Ok(Bandwidths {
        h_mean,
        h_cov,
        selection,
    })
}
