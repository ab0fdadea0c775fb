//! Monte Carlo benchmark: integrated squared error of each estimator over a
//! bandwidth grid, averaged across replicates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{
    generate_repeated_replicate, generate_replicate, true_cov, RepeatDesign, SimConfig,
    SpreadReading,
};
use crate::bandwidth::{default_candidates, log_space, mean_cv_scores, BandwidthGrid};
use crate::covariance::{
    curves_from_raw, default_mean_grid, estimate_means, raw_covariances, Estimator, MatrixCurve,
    ObservationSet, RawCovSet,
};
use crate::error::{Error, Result};
use crate::kernel::{linspace, trapezoid_weights, Kernel};
use crate::matrix::{frobenius_dist_sq, SymMatrix};

/// Fewest quadrature points accepted by [`ise`].
pub const MIN_ISE_POINTS: usize = 20;

/// Bandwidths covering every minimizer reported for the reference study.
pub const TABLE_BANDWIDTHS: [f64; 13] = [
    0.05, 0.06, 0.08, 0.1, 0.15, 0.2, 0.25, 0.29, 0.33, 0.37, 0.43, 0.5, 0.6,
];

/// 101 equispaced points on `[0, 1]`.
pub fn default_ise_grid() -> Vec<f64> {
    linspace(0.0, 1.0, 101)
}

/// `Sigma(x)` at each grid point.
pub fn truth_on_grid(config: &SimConfig, grid: &[f64]) -> Result<Vec<SymMatrix>> {
    grid.iter().map(|&x| true_cov(config, x)).collect()
}

/// `d_F(estimate(x), truth(x))^2` at each grid point.
pub fn pointwise_sq_errors(curve: &MatrixCurve, truth: &[SymMatrix]) -> Result<Vec<f64>> {
    if truth.len() != curve.len() {
        return Err(Error::DimMismatch {
            expected: curve.len(),
            found: truth.len(),
        });
    }
    curve
        .matrices
        .iter()
        .zip(truth)
        .map(|(m, t)| frobenius_dist_sq(m, t))
        .collect()
}

/// Trapezoid integral of the squared Frobenius error against precomputed truth.
pub fn ise_against(curve: &MatrixCurve, truth: &[SymMatrix]) -> Result<f64> {
    if curve.len() < MIN_ISE_POINTS {
        return Err(Error::GridTooCoarse {
            points: curve.len(),
            required: MIN_ISE_POINTS,
        });
    }
    let errors = pointwise_sq_errors(curve, truth)?;
    Ok(trapezoid_weights(&curve.grid).iter().zip(&errors).map(|(w, e)| w * e).sum())
}

/// Integrated squared Frobenius error of `curve` against the model truth.
pub fn ise(curve: &MatrixCurve, config: &SimConfig) -> Result<f64> {
    if curve.len() < MIN_ISE_POINTS {
        return Err(Error::GridTooCoarse {
            points: curve.len(),
            required: MIN_ISE_POINTS,
        });
    }
    ise_against(curve, &truth_on_grid(config, &curve.grid)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub estimators: Vec<Estimator>,
    pub bandwidths: Vec<f64>,
    pub replicates: usize,
    /// Drives the model parameters (stream 0) and the replicates (streams 1..).
    pub seed: u64,
    pub kernel: Kernel,
    pub ise_grid: Vec<f64>,
    pub spread: SpreadReading,
    pub repeat_design: Option<RepeatDesign>,
    /// Folds for the per-replicate mean bandwidth; `None` is leave-one-out.
    pub mean_folds: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![20, 40],
            sizes: vec![250, 500, 1000],
            estimators: vec![Estimator::Nw, Estimator::LocalLinearRaw, Estimator::LocalFrechet],
            bandwidths: TABLE_BANDWIDTHS.to_vec(),
            replicates: 100,
            seed: 1,
            kernel: Kernel::Gaussian,
            ise_grid: default_ise_grid(),
            spread: SpreadReading::Variance,
            repeat_design: None,
            mean_folds: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.sizes.is_empty() || self.estimators.is_empty() {
            return Err(Error::invalid("benchmark needs dimensions, sizes and estimators"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("benchmark needs at least one replicate"));
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::invalid("bandwidths must be positive and finite"));
        }
        if self.ise_grid.len() < MIN_ISE_POINTS {
            return Err(Error::GridTooCoarse {
                points: self.ise_grid.len(),
                required: MIN_ISE_POINTS,
            });
        }
        if self.ise_grid.first() < Some(&0.0) || self.ise_grid.last() > Some(&1.0) {
            return Err(Error::invalid("ISE grid must lie inside [0, 1]"));
        }
        if let Some(d) = &self.repeat_design {
            d.validate()?;
        }
        Ok(())
    }

    /// Model for one `(p, n)` cell.
    pub fn sim_config(&self, p: usize, n: usize) -> Result<SimConfig> {
        let config = SimConfig::draw(p, n, self.seed, self.spread)?;
        match &self.repeat_design {
            Some(d) => config.with_repeat_design(d.clone()),
            None => Ok(config),
        }
    }
}

/// One `(estimator, p, n)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: Estimator,
    pub p: usize,
    pub n: usize,
    /// Natural log of the smallest mean ISE over the bandwidth grid.
    pub log_mean_ise: f64,
    /// Smallest bandwidth attaining that minimum.
    pub best_bandwidth: f64,
    pub bandwidths: Vec<f64>,
    /// Mean ISE across replicates, per bandwidth; infinite where some
    /// replicate had a degenerate window.
    pub mean_ise: Vec<f64>,
    /// ISE per bandwidth (outer) and replicate (inner).
    pub ise: Vec<Vec<f64>>,
    pub replicates: usize,
}

impl BenchRow {
    fn from_ise(estimator: Estimator, p: usize, n: usize, bandwidths: &[f64], ise: Vec<Vec<f64>>) -> Self {
        let replicates = ise.first().map_or(0, Vec::len);
        let mean_ise: Vec<f64> = ise
            .iter()
            .map(|runs| runs.iter().sum::<f64>() / runs.len() as f64)
            .collect();
        let mut best = 0;
        for (k, &m) in mean_ise.iter().enumerate() {
            if m < mean_ise[best] {
                best = k;
            }
        }
        Self {
            estimator,
            p,
            n,
            log_mean_ise: mean_ise[best].ln(),
            best_bandwidth: bandwidths[best],
            bandwidths: bandwidths.to_vec(),
            mean_ise,
            ise,
            replicates,
        }
    }

    /// Per-replicate ISE at the selected bandwidth.
    pub fn best_runs(&self) -> &[f64] {
        let k = self
            .bandwidths
            .iter()
            .position(|&h| h == self.best_bandwidth)
            .unwrap_or(0);
        &self.ise[k]
    }

    pub fn log_mean_ise_at(&self, h: f64) -> Option<f64> {
        self.bandwidths
            .iter()
            .position(|&b| b == h)
            .map(|k| self.mean_ise[k].ln())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    pub fn row(&self, estimator: Estimator, p: usize, n: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.p == p && r.n == n)
    }
}

/// Mean-curve bandwidth candidates: log-spaced from twice the largest time
/// gap (capped at a quarter of the domain) up to half the domain. `None`
/// folds means leave-one-out.
pub fn mean_bandwidth_grid(data: &ObservationSet, folds: Option<usize>, seed: u64) -> Result<BandwidthGrid> {
    let t = data.domain_end();
    let candidates = default_candidates(data.times(), t, 10).or_else(|_| {
        let mut sorted = data.times().to_vec();
        sorted.sort_by(f64::total_cmp);
        let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let lo = (2.0 * gap).min(0.25 * t);
        if lo > 0.0 {
            Ok(log_space(lo, 0.5 * t, 10))
        } else {
            Err(Error::invalid("observation times are all equal"))
        }
    })?;
    BandwidthGrid::new(candidates, folds.unwrap_or(data.n()).min(data.n()), seed)
}

/// Replicate `r` of a cell: the data, its raw covariances and the
/// cross-validated mean bandwidth.
pub fn replicate_raw(
    sim: &SimConfig,
    replicate: u64,
    kernel: Kernel,
    mean_folds: Option<usize>,
) -> Result<(ObservationSet, RawCovSet, f64)> {
    let data = if sim.repeat_design.is_some() {
        generate_repeated_replicate(sim, replicate)?
    } else {
        generate_replicate(sim, replicate)?
    };
    let grid = mean_bandwidth_grid(&data, mean_folds, replicate)?;
    let h_mean = mean_cv_scores(&data, &grid, kernel)?.argmin()?;
    let means = estimate_means(&data, h_mean, &default_mean_grid(&data), kernel)?;
    let raw = raw_covariances(&data, &means)?;
    Ok((data, raw, h_mean))
}

/// Groups of estimators that share one pass over the raw covariances.
fn estimator_groups(estimators: &[Estimator]) -> Vec<Vec<Estimator>> {
    let mut groups: Vec<Vec<Estimator>> = Vec::new();
    for &e in estimators {
        let shared = matches!(e, Estimator::LocalLinearRaw | Estimator::LocalFrechet);
        match groups.iter_mut().find(|g| {
            shared && g.iter().any(|x| matches!(x, Estimator::LocalLinearRaw | Estimator::LocalFrechet))
        }) {
            Some(g) => g.push(e),
            None => groups.push(vec![e]),
        }
    }
    groups
}

/// ISE of every estimator (outer) at every bandwidth (inner) for one replicate.
fn replicate_ise(
    config: &BenchConfig,
    sim: &SimConfig,
    truth: &[SymMatrix],
    replicate: u64,
) -> Result<Vec<Vec<f64>>> {
    let (_, raw, _) = replicate_raw(sim, replicate, config.kernel, config.mean_folds)?;
    let groups = estimator_groups(&config.estimators);
    let mut out = vec![Vec::with_capacity(config.bandwidths.len()); config.estimators.len()];
    for &h in &config.bandwidths {
        for group in &groups {
            let curves = match curves_from_raw(&raw, &config.ise_grid, h, group, config.kernel) {
                Ok(c) => Some(c),
                Err(Error::GridFailures(_)) | Err(Error::DegenerateWindow { .. }) => None,
                Err(e) => return Err(e),
            };
            for (gi, e) in group.iter().enumerate() {
                let k = config.estimators.iter().position(|x| x == e).unwrap();
                let v = match &curves {
                    Some(c) => ise_against(&c[gi], truth)?,
                    None => f64::INFINITY,
                };
                out[k].push(v);
            }
        }
    }
    Ok(out)
}

/// All estimators for one `(p, n)` cell.
pub fn run_cell(config: &BenchConfig, p: usize, n: usize) -> Result<Vec<BenchRow>> {
    let wrap = |source: Error| Error::BenchCell {
        p,
        n,
        source: Box::new(source),
    };
    config.validate()?;
    let sim = config.sim_config(p, n).map_err(wrap)?;
    let truth = truth_on_grid(&sim, &config.ise_grid).map_err(wrap)?;
    let per_replicate: Vec<Vec<Vec<f64>>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| replicate_ise(config, &sim, &truth, r))
        .collect::<Result<_>>()
        .map_err(wrap)?;
    Ok(config
        .estimators
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let ise: Vec<Vec<f64>> = (0..config.bandwidths.len())
                .map(|b| per_replicate.iter().map(|r| r[k][b]).collect())
                .collect();
            BenchRow::from_ise(e, p, n, &config.bandwidths, ise)
        })
        .collect())
}

/// Every `(p, n)` cell, dims outer and sizes inner.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let mut rows = Vec::new();
    for &p in &config.dims {
        for &n in &config.sizes {
            rows.extend(run_cell(config, p, n)?);
        }
    }
    Ok(BenchResult {
        config: config.clone(),
        rows,
    })
}
