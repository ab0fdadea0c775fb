//! Time-varying covariance estimation from one multivariate observation per
//! subject.
//!
//! The pipeline is: smooth each component to get mean curves, form the rank-one
//! raw covariances `C_i = (Y_i - mu(X_i))(Y_i - mu(X_i))^T`, then take a
//! kernel-weighted mean of the `C_i` at each query time. The estimators differ
//! only in the weights and in what happens after the weighted sum:
//!
//! * `Nw`: local constant weights; a convex combination, so always PSD.
//! * `LocalLinearRaw`: local linear weights, which may be negative; the sum is
//!   symmetric but can be indefinite.
//! * `LocalFrechet`: the local linear sum projected onto the PSD cone, which
//!   is the exact minimizer of the weighted Frobenius Frechet functional.
//! * `DcovSqrt`: local linear weights on `C_i^{1/2}`, then squared.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, check_grid, linspace, Kernel, Order, ScalarCurve};
use crate::matrix::{cov_to_corr, packed_len, project_psd, CorrMatrix, SymMatrix};

/// Mean curves are evaluated at each `X_i` by interpolating this many points.
pub const DEFAULT_MEAN_GRID: usize = 501;

/// Paired samples `(X_i, Y_i)`, `X_i` in `[0, T]`, `Y_i` a p-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    times: Vec<f64>,
    responses: DMatrix<f64>,
    domain_end: f64,
    subjects: Vec<u64>,
}

impl ObservationSet {
    /// `responses` is `n x p`, one row per observation. Subjects default to
    /// `0..n`.
    pub fn new(times: Vec<f64>, responses: DMatrix<f64>, domain_end: f64) -> Result<Self> {
        let subjects = (0..times.len() as u64).collect();
        Self::with_subjects(times, responses, domain_end, subjects)
    }

    pub fn with_subjects(
        times: Vec<f64>,
        responses: DMatrix<f64>,
        domain_end: f64,
        subjects: Vec<u64>,
    ) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 observations, got {n}")));
        }
        if responses.nrows() != n {
            return Err(Error::DimMismatch {
                expected: n,
                found: responses.nrows(),
            });
        }
        if subjects.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                found: subjects.len(),
            });
        }
        if responses.ncols() == 0 {
            return Err(Error::invalid("responses have no components"));
        }
        if !(domain_end > 0.0) || !domain_end.is_finite() {
            return Err(Error::invalid(format!("domain end must be positive, got {domain_end}")));
        }
        if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= domain_end)) {
            return Err(Error::invalid(format!("time {t} outside [0, {domain_end}]")));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("responses contain missing or non-finite values"));
        }
        Ok(Self {
            times,
            responses,
            domain_end,
            subjects,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.responses.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn response(&self, i: usize) -> Vec<f64> {
        self.responses.row(i).iter().copied().collect()
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    pub fn subjects(&self) -> &[u64] {
        &self.subjects
    }

    /// Observation hull `[min X_i, max X_i]`.
    pub fn time_range(&self) -> (f64, f64) {
        let lo = self.times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Observations at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let times = indices.iter().map(|&i| self.times[i]).collect();
        let responses = self.responses.select_rows(indices);
        let subjects = indices.iter().map(|&i| self.subjects[i]).collect();
        Self::with_subjects(times, responses, self.domain_end, subjects)
    }
}

/// Component mean curves on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCurves {
    curves: Vec<ScalarCurve>,
}

impl MeanCurves {
    pub fn new(curves: Vec<ScalarCurve>) -> Result<Self> {
        let Some(first) = curves.first() else {
            return Err(Error::invalid("no mean curves"));
        };
        if curves.iter().any(|c| c.grid() != first.grid()) {
            return Err(Error::invalid("mean curves must share one grid"));
        }
        Ok(Self { curves })
    }

    pub fn curves(&self) -> &[ScalarCurve] {
        &self.curves
    }

    pub fn p(&self) -> usize {
        self.curves.len()
    }

    pub fn grid(&self) -> &[f64] {
        self.curves[0].grid()
    }

    /// `mu(x)` by linear interpolation of the grid values.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        self.curves
            .iter()
            .map(|c| {
                c.eval(x).ok_or_else(|| {
                    let g = c.grid();
                    Error::MeanNotEvaluable {
                        x,
                        lo: g[0],
                        hi: g[g.len() - 1],
                    }
                })
            })
            .collect()
    }
}

/// Component-wise local linear means with one shared bandwidth.
pub fn estimate_means(
    data: &ObservationSet,
    h_mean: f64,
    grid: &[f64],
    kernel: Kernel,
) -> Result<MeanCurves> {
    let curves = kernel::smooth_columns(
        data.times(),
        data.responses(),
        grid,
        h_mean,
        Order::LocalLinear,
        kernel,
    )?;
    MeanCurves::new(curves)
}

/// Dense grid over the observation hull used to interpolate means at each `X_i`.
pub fn default_mean_grid(data: &ObservationSet) -> Vec<f64> {
    let (lo, hi) = data.time_range();
    if lo == hi {
        vec![lo]
    } else {
        linspace(lo, hi, DEFAULT_MEAN_GRID)
    }
}

/// The rank-one raw covariances `C_i`.
///
/// Each `C_i` is held as its residual vector `v_i` plus the row-major packed
/// upper triangle of `v_i v_i^T`, so weighted sums run over contiguous memory.
#[derive(Clone, Debug)]
pub struct RawCovSet {
    p: usize,
    times: Vec<f64>,
    residuals: DMatrix<f64>,
    packed: Vec<f64>,
    residual_norms: Vec<f64>,
}

impl RawCovSet {
    /// Builds raw covariances from explicit residual rows (`n x p`).
    pub fn from_residuals(times: Vec<f64>, residuals: DMatrix<f64>) -> Result<Self> {
        let (n, p) = residuals.shape();
        if times.len() != n {
            return Err(Error::DimMismatch {
                expected: times.len(),
                found: n,
            });
        }
        let len = packed_len(p);
        let mut packed = Vec::with_capacity(n * len);
        let mut residual_norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = residuals.row(i);
            for j in 0..p {
                let vj = row[j];
                for k in j..p {
                    packed.push(vj * row[k]);
                }
            }
            residual_norms.push(row.norm());
        }
        Ok(Self {
            p,
            times,
            residuals,
            packed,
            residual_norms,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    pub fn residual(&self, i: usize) -> Vec<f64> {
        self.residuals.row(i).iter().copied().collect()
    }

    /// `C_i` as a PSD-certified matrix.
    pub fn matrix(&self, i: usize) -> SymMatrix {
        SymMatrix::outer(&self.residual(i))
    }

    /// Packed upper triangle of `C_i`.
    pub fn packed(&self, i: usize) -> &[f64] {
        let len = packed_len(self.p);
        &self.packed[i * len..(i + 1) * len]
    }

    /// Raw covariances of a subset of observations.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let len = packed_len(self.p);
        let mut packed = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            packed.extend_from_slice(self.packed(i));
        }
        Self {
            p: self.p,
            times: indices.iter().map(|&i| self.times[i]).collect(),
            residuals: self.residuals.select_rows(indices),
            packed,
            residual_norms: indices.iter().map(|&i| self.residual_norms[i]).collect(),
        }
    }

    /// `sum_i w_i C_i`, summed in observation order, zero weights skipped.
    fn weighted_sum(&self, weights: &[f64]) -> Vec<f64> {
        let len = packed_len(self.p);
        let mut acc = vec![0.0; len];
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                axpy(&mut acc, w, self.packed(i));
            }
        }
        acc
    }

    /// Weights for `sum_i w_i C_i^{1/2}`: `C_i^{1/2} = C_i / |v_i|`, and a zero
    /// residual contributes nothing.
    fn sqrt_weights(&self, weights: &mut [f64]) {
        for (w, &norm) in weights.iter_mut().zip(&self.residual_norms) {
            *w = if norm > 0.0 { *w / norm } else { 0.0 };
        }
    }
}

#[inline]
fn axpy(acc: &mut [f64], w: f64, x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += w * v;
    }
}

/// Residuals `Y_i - mu(X_i)` with the means interpolated to each `X_i`.
pub fn raw_covariances(data: &ObservationSet, means: &MeanCurves) -> Result<RawCovSet> {
    if means.p() != data.p() {
        return Err(Error::DimMismatch {
            expected: data.p(),
            found: means.p(),
        });
    }
    let mut residuals = data.responses().clone();
    for (i, &t) in data.times().iter().enumerate() {
        let mu = means.eval(t)?;
        for (j, m) in mu.into_iter().enumerate() {
            residuals[(i, j)] -= m;
        }
    }
    RawCovSet::from_residuals(data.times().to_vec(), residuals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// Local constant Frechet mean.
    #[serde(rename = "nw")]
    Nw,
    /// Entrywise local linear smoother, not projected.
    #[serde(rename = "ll")]
    LocalLinearRaw,
    /// Local Frechet regression under the Frobenius metric.
    #[serde(rename = "lf")]
    LocalFrechet,
    /// Local Frechet regression under the square-root metric.
    #[serde(rename = "dcov")]
    DcovSqrt,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Nw,
        Estimator::LocalLinearRaw,
        Estimator::LocalFrechet,
        Estimator::DcovSqrt,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Nw => "nw",
            Estimator::LocalLinearRaw => "ll",
            Estimator::LocalFrechet => "lf",
            Estimator::DcovSqrt => "dcov",
        }
    }

    pub fn order(self) -> Order {
        match self {
            Estimator::Nw => Order::NadarayaWatson,
            _ => Order::LocalLinear,
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nw" => Ok(Estimator::Nw),
            "ll" | "locallinear" | "locallinear_raw" => Ok(Estimator::LocalLinearRaw),
            "lf" | "frechet" | "local_frechet" => Ok(Estimator::LocalFrechet),
            "dcov" | "dcov_sqrt" | "sqrt" => Ok(Estimator::DcovSqrt),
            other => Err(Error::invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

fn weights_at(raw: &RawCovSet, x: f64, h: f64, order: Order, kernel: Kernel) -> Result<Vec<f64>> {
    Ok(kernel::local_weights(raw.times(), x, h, order, kernel)?.into_vec())
}

/// `sum_i w_i C_i` with local constant weights.
pub fn estimate_nw(raw: &RawCovSet, x: f64, h: f64, kernel: Kernel) -> Result<SymMatrix> {
    let w = weights_at(raw, x, h, Order::NadarayaWatson, kernel)?;
    Ok(SymMatrix::from_packed(raw.p(), &raw.weighted_sum(&w))?.with_psd_flag(true))
}

/// `sum_i w_i C_i` with local linear weights; possibly indefinite.
pub fn estimate_ll_raw(raw: &RawCovSet, x: f64, h: f64, kernel: Kernel) -> Result<SymMatrix> {
    let w = weights_at(raw, x, h, Order::LocalLinear, kernel)?;
    SymMatrix::from_packed(raw.p(), &raw.weighted_sum(&w))
}

/// Projection of the local linear sum onto the PSD cone.
pub fn estimate_lf(raw: &RawCovSet, x: f64, h: f64, kernel: Kernel) -> Result<SymMatrix> {
    project_psd(&estimate_ll_raw(raw, x, h, kernel)?)
}

/// `(sum_i w_i C_i^{1/2})^2` with local linear weights.
pub fn estimate_dcov_sqrt(raw: &RawCovSet, x: f64, h: f64, kernel: Kernel) -> Result<SymMatrix> {
    let mut w = weights_at(raw, x, h, Order::LocalLinear, kernel)?;
    raw.sqrt_weights(&mut w);
    let root = SymMatrix::from_packed(raw.p(), &raw.weighted_sum(&w))?;
    Ok(square(&root))
}

fn square(root: &SymMatrix) -> SymMatrix {
    root.product_upper(root).with_psd_flag(true)
}

pub fn estimate_at(
    raw: &RawCovSet,
    x: f64,
    h: f64,
    estimator: Estimator,
    kernel: Kernel,
) -> Result<SymMatrix> {
    match estimator {
        Estimator::Nw => estimate_nw(raw, x, h, kernel),
        Estimator::LocalLinearRaw => estimate_ll_raw(raw, x, h, kernel),
        Estimator::LocalFrechet => estimate_lf(raw, x, h, kernel),
        Estimator::DcovSqrt => estimate_dcov_sqrt(raw, x, h, kernel),
    }
}

/// A covariance estimate on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixCurve {
    pub grid: Vec<f64>,
    pub matrices: Vec<SymMatrix>,
    pub estimator: Estimator,
    pub bandwidth: f64,
}

impl MatrixCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn p(&self) -> usize {
        self.matrices.first().map_or(0, SymMatrix::dim)
    }

    /// Pointwise correlation matrices.
    pub fn correlations(&self) -> Result<Vec<CorrMatrix>> {
        self.matrices.iter().map(cov_to_corr).collect()
    }
}

/// Grid points handled per pass over the raw covariances.
const GRID_BLOCK: usize = 16;

/// Evaluates several estimators on `grid` from one set of raw covariances.
///
/// Entries are accumulated in the same order as the single-point functions,
/// so every matrix equals the corresponding `estimate_at` call bit for bit.
/// The local linear sum is shared between `LocalLinearRaw` and
/// `LocalFrechet`. Window failures are collected with their grid locations.
pub fn curves_from_raw(
    raw: &RawCovSet,
    grid: &[f64],
    h: f64,
    estimators: &[Estimator],
    kernel: Kernel,
) -> Result<Vec<MatrixCurve>> {
    check_grid(grid)?;
    let p = raw.p();
    let want = |e| estimators.contains(&e);
    let need_nw = want(Estimator::Nw);
    let need_ll = want(Estimator::LocalLinearRaw) || want(Estimator::LocalFrechet);
    let need_dcov = want(Estimator::DcovSqrt);

    let nw = if need_nw {
        Some(blocked_sums(raw, grid, h, Order::NadarayaWatson, kernel, false)?)
    } else {
        None
    };
    let ll = if need_ll {
        Some(blocked_sums(raw, grid, h, Order::LocalLinear, kernel, false)?)
    } else {
        None
    };
    let dcov = if need_dcov {
        Some(blocked_sums(raw, grid, h, Order::LocalLinear, kernel, true)?)
    } else {
        None
    };

    estimators
        .iter()
        .map(|&estimator| {
            let matrices = match estimator {
                Estimator::Nw => nw
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| Ok(SymMatrix::from_packed(p, m)?.with_psd_flag(true)))
                    .collect::<Result<Vec<_>>>()?,
                Estimator::LocalLinearRaw => ll
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| SymMatrix::from_packed(p, m))
                    .collect::<Result<Vec<_>>>()?,
                Estimator::LocalFrechet => ll
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| project_psd(&SymMatrix::from_packed(p, m)?))
                    .collect::<Result<Vec<_>>>()?,
                Estimator::DcovSqrt => dcov
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| Ok(square(&SymMatrix::from_packed(p, m)?)))
                    .collect::<Result<Vec<_>>>()?,
            };
            Ok(MatrixCurve {
                grid: grid.to_vec(),
                matrices,
                estimator,
                bandwidth: h,
            })
        })
        .collect()
}

/// Packed weighted sums at every grid point, `GRID_BLOCK` points per sweep.
fn blocked_sums(
    raw: &RawCovSet,
    grid: &[f64],
    h: f64,
    order: Order,
    kernel: Kernel,
    sqrt: bool,
) -> Result<Vec<Vec<f64>>> {
    let n = raw.n();
    let len = packed_len(raw.p());
    let mut out = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    let mut weights = vec![0.0; GRID_BLOCK * n];
    for block in grid.chunks(GRID_BLOCK) {
        let mut ok = vec![true; block.len()];
        for (g, &x) in block.iter().enumerate() {
            let w = &mut weights[g * n..(g + 1) * n];
            match kernel::fill_weights(raw.times(), x, h, order, kernel, w) {
                Ok(()) => {
                    if sqrt {
                        raw.sqrt_weights(w);
                    }
                }
                Err(e) => {
                    ok[g] = false;
                    failures.push((x, e));
                }
            }
        }
        let mut acc = vec![vec![0.0; len]; block.len()];
        for i in 0..n {
            let c = raw.packed(i);
            for (g, a) in acc.iter_mut().enumerate() {
                let w = weights[g * n + i];
                if ok[g] && w != 0.0 {
                    axpy(a, w, c);
                }
            }
        }
        out.extend(acc);
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::GridFailures(failures))
    }
}

/// Evaluates one estimator on `grid`.
pub fn curve_from_raw(
    raw: &RawCovSet,
    grid: &[f64],
    h: f64,
    estimator: Estimator,
    kernel: Kernel,
) -> Result<MatrixCurve> {
    Ok(curves_from_raw(raw, grid, h, &[estimator], kernel)?.remove(0))
}

/// Full pipeline: means on the default dense grid, raw covariances, then the
/// chosen estimator at each point of `grid`.
pub fn estimate_curve(
    data: &ObservationSet,
    grid: &[f64],
    h_mean: f64,
    h_cov: f64,
    estimator: Estimator,
    kernel: Kernel,
) -> Result<MatrixCurve> {
    let means = estimate_means(data, h_mean, &default_mean_grid(data), kernel)?;
    let raw = raw_covariances(data, &means)?;
    curve_from_raw(&raw, grid, h_cov, estimator, kernel)
}
