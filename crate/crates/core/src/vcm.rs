//! Varying-coefficient regression of a scalar outcome on the p-vector process:
//! `E_i = b0 + beta(X_i)^T (Y_i - mu(X_i)) + eps_i`.
//!
//! `beta(x) = Sigma(x)^{-1} Gamma(x)` with `Gamma(x) = Cov(Y(x), E(x))`, so the
//! fit only needs the covariance curve and a local linear smooth of the cross
//! products `G_ij = (Y_ij - mu_j(X_i)) (E_i - b0)`. A ridge term `lambda I`
//! keeps the solve stable where `Sigma` is poorly conditioned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{fold_partition, log_space, DEFAULT_FOLDS};
use crate::covariance::{
    curve_from_raw, default_mean_grid, estimate_lf, estimate_means, raw_covariances, Estimator,
    MeanCurves, ObservationSet, RawCovSet,
};
use crate::error::{Error, Result};
use crate::kernel::{self, local_weights, Kernel, Order, ScalarCurve};
use crate::matrix::SymMatrix;
use nalgebra::DMatrix;

pub const DEFAULT_BASELINE: f64 = 100.0;

/// Ratio below which the (shifted) spectrum counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Outcome `E_i` for each observation, with the intercept `b0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSet {
    scores: Vec<f64>,
    baseline: f64,
}

impl OutcomeSet {
    pub fn new(scores: Vec<f64>, baseline: f64) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) || !baseline.is_finite() {
            return Err(Error::invalid("outcomes must be finite"));
        }
        Ok(Self { scores, baseline })
    }

    /// Uses the sample mean of the scores as the intercept.
    pub fn with_mean_baseline(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("no outcomes"));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Self::new(scores, mean)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn check(&self, data: &ObservationSet) -> Result<()> {
        if self.len() != data.n() {
            return Err(Error::DimMismatch {
                expected: data.n(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Cross products `G_ij`, one row per observation.
fn cross_products(raw: &RawCovSet, outcomes: &OutcomeSet) -> DMatrix<f64> {
    let b0 = outcomes.baseline();
    DMatrix::from_fn(raw.n(), raw.p(), |i, j| {
        raw.residuals()[(i, j)] * (outcomes.scores()[i] - b0)
    })
}

/// Local linear smooth of each column of `G` on `grid`.
pub fn estimate_gamma(
    data: &ObservationSet,
    outcomes: &OutcomeSet,
    means: &MeanCurves,
    grid: &[f64],
    h_gamma: f64,
    kernel: Kernel,
) -> Result<Vec<ScalarCurve>> {
    outcomes.check(data)?;
    let raw = raw_covariances(data, means)?;
    kernel::smooth_columns(
        raw.times(),
        &cross_products(&raw, outcomes),
        grid,
        h_gamma,
        Order::LocalLinear,
        kernel,
    )
}

/// Eigen-factored `Sigma + lambda I`, reusable across ridge parameters.
struct RidgeSystem {
    values: Vec<f64>,
    /// `u_k^T Gamma` for each eigenvector.
    coords: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl RidgeSystem {
    fn new(sigma: &SymMatrix, gamma: &[f64]) -> Result<Self> {
        if gamma.len() != sigma.dim() {
            return Err(Error::DimMismatch {
                expected: sigma.dim(),
                found: gamma.len(),
            });
        }
        let eig = sigma.eigen()?;
        let coords = (0..sigma.dim())
            .map(|k| {
                eig.vectors
                    .column(k)
                    .iter()
                    .zip(gamma)
                    .map(|(u, g)| u * g)
                    .sum()
            })
            .collect();
        Ok(Self {
            values: eig.values.iter().copied().collect(),
            coords,
            vectors: eig.vectors,
        })
    }

    fn solve(&self, lambda: f64) -> Result<Vec<f64>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("ridge parameter must be nonnegative, got {lambda}")));
        }
        let shifted: Vec<f64> = self.values.iter().map(|l| l + lambda).collect();
        let scale = shifted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = shifted.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > SINGULAR_RTOL * scale) {
            return Err(Error::SingularSystem { min_eigenvalue: min });
        }
        let p = self.values.len();
        let mut beta = vec![0.0; p];
        for k in 0..p {
            let c = self.coords[k] / shifted[k];
            for (b, u) in beta.iter_mut().zip(self.vectors.column(k).iter()) {
                *b += c * u;
            }
        }
        Ok(beta)
    }
}

/// `(Sigma + lambda I)^{-1} Gamma`.
pub fn estimate_beta(sigma: &SymMatrix, gamma: &[f64], lambda: f64) -> Result<Vec<f64>> {
    RidgeSystem::new(sigma, gamma)?.solve(lambda)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Gamma^T (Sigma + lambda I)^{-1} Gamma`.
pub fn estimate_r2(sigma: &SymMatrix, gamma: &[f64], lambda: f64) -> Result<f64> {
    let beta = estimate_beta(sigma, gamma, lambda)?;
    Ok(dot(gamma, &beta).max(0.0))
}

/// Held-out prediction error for each ridge candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaScores {
    pub candidates: Vec<f64>,
    pub scores: Vec<Option<f64>>,
    /// Held-out observations without a valid training window; they are left
    /// out of every candidate's score.
    pub skipped: usize,
}

impl LambdaScores {
    pub fn argmin(&self) -> Result<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (&l, s) in self.candidates.iter().zip(&self.scores) {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((l, s));
                }
            }
        }
        best.map(|(l, _)| l).ok_or(Error::AllCandidatesDegenerate)
    }
}

/// Smoothing choices shared by ridge selection and the full fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VcmBandwidths {
    pub h_mean: f64,
    pub h_cov: f64,
    pub h_gamma: f64,
}

impl VcmBandwidths {
    /// `h_gamma` defaults to the covariance bandwidth.
    pub fn new(h_mean: f64, h_cov: f64) -> Self {
        Self {
            h_mean,
            h_cov,
            h_gamma: h_cov,
        }
    }
}

/// Twenty log-spaced ridge candidates over `[1e-4, 10]`.
pub fn default_lambdas() -> Vec<f64> {
    log_space(1e-4, 10.0, 20)
}

/// k-fold selection of the ridge parameter.
///
/// For each fold, `Sigma` (local Frechet) and `Gamma` (local linear) are
/// re-estimated from the training observations only and evaluated at the
/// held-out times; means stay fixed. The score is the summed squared error
/// of `b0 + beta^T (Y_i - mu(X_i))` against `E_i`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_scores(
    data: &ObservationSet,
    outcomes: &OutcomeSet,
    means: &MeanCurves,
    bandwidths: VcmBandwidths,
    candidates: &[f64],
    folds: usize,
    seed: u64,
    kernel: Kernel,
) -> Result<LambdaScores> {
    outcomes.check(data)?;
    if candidates.is_empty() || candidates.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("ridge candidates must be positive and finite"));
    }
    let raw = raw_covariances(data, means)?;
    let g = cross_products(&raw, outcomes);
    let n = data.n();
    let partition = fold_partition(n, folds, seed)?;

    // Per held-out observation: the factored system, or None when degenerate.
    let systems: Vec<Vec<(usize, Option<RidgeSystem>)>> = partition
        .par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|i| fold.binary_search(i).is_err()).collect();
            let train_raw = raw.subset(&train);
            let train_g = g.select_rows(&train);
            fold.iter()
                .map(|&i| {
                    let x = raw.times()[i];
                    let sigma = match estimate_lf(&train_raw, x, bandwidths.h_cov, kernel) {
                        Ok(s) => s,
                        Err(Error::DegenerateWindow { .. }) => return Ok((i, None)),
                        Err(e) => return Err(e),
                    };
                    let w = match local_weights(
                        train_raw.times(),
                        x,
                        bandwidths.h_gamma,
                        Order::LocalLinear,
                        kernel,
                    ) {
                        Ok(w) => w,
                        Err(Error::DegenerateWindow { .. }) => return Ok((i, None)),
                        Err(e) => return Err(e),
                    };
                    let gamma: Vec<f64> = (0..raw.p())
                        .map(|j| w.apply(train_g.column(j).as_slice()))
                        .collect();
                    Ok((i, Some(RidgeSystem::new(&sigma, &gamma)?)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let skipped = systems.iter().flatten().filter(|(_, s)| s.is_none()).count();
    if skipped == n {
        return Err(Error::AllCandidatesDegenerate);
    }
    let b0 = outcomes.baseline();
    let scores = candidates
        .iter()
        .map(|&lambda| {
            let mut total = 0.0;
            for (i, system) in systems.iter().flatten() {
                let Some(system) = system else { continue };
                let beta = match system.solve(lambda) {
                    Ok(b) => b,
                    Err(Error::SingularSystem { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let pred = b0 + dot(&beta, &raw.residual(*i));
                let r = outcomes.scores()[*i] - pred;
                total += r * r;
            }
            Ok(total.is_finite().then_some(total))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LambdaScores {
        candidates: candidates.to_vec(),
        scores,
        skipped,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn select_lambda(
    data: &ObservationSet,
    outcomes: &OutcomeSet,
    means: &MeanCurves,
    bandwidths: VcmBandwidths,
    candidates: &[f64],
    folds: usize,
    seed: u64,
    kernel: Kernel,
) -> Result<f64> {
    lambda_scores(data, outcomes, means, bandwidths, candidates, folds, seed, kernel)?.argmin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    CrossValidated {
        candidates: Vec<f64>,
        folds: usize,
        seed: u64,
    },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::CrossValidated {
            candidates: default_lambdas(),
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VcmConfig {
    pub grid: Vec<f64>,
    pub bandwidths: VcmBandwidths,
    pub lambda: LambdaChoice,
    pub kernel: Kernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VcmFit {
    pub grid: Vec<f64>,
    pub gamma: Vec<ScalarCurve>,
    pub beta: Vec<ScalarCurve>,
    pub r_squared: ScalarCurve,
    pub lambda: f64,
    pub bandwidths: VcmBandwidths,
    pub lambda_scores: Option<LambdaScores>,
}

/// Means, covariance curve, `Gamma`, ridge choice, then `beta` and `R^2` at
/// every grid point.
pub fn fit_vcm(data: &ObservationSet, outcomes: &OutcomeSet, config: &VcmConfig) -> Result<VcmFit> {
    outcomes.check(data)?;
    let bw = config.bandwidths;
    let means = estimate_means(data, bw.h_mean, &default_mean_grid(data), config.kernel)?;
    let raw = raw_covariances(data, &means)?;
    let sigma = curve_from_raw(&raw, &config.grid, bw.h_cov, Estimator::LocalFrechet, config.kernel)?;
    let gamma = estimate_gamma(data, outcomes, &means, &config.grid, bw.h_gamma, config.kernel)?;

    let (lambda, lambda_scores) = match &config.lambda {
        LambdaChoice::Fixed(l) => (*l, None),
        LambdaChoice::CrossValidated {
            candidates,
            folds,
            seed,
        } => {
            let scores =
                lambda_scores(data, outcomes, &means, bw, candidates, *folds, *seed, config.kernel)?;
            (scores.argmin()?, Some(scores))
        }
    };

    let p = data.p();
    let m = config.grid.len();
    let mut beta = vec![Vec::with_capacity(m); p];
    let mut r2 = Vec::with_capacity(m);
    for (k, s) in sigma.matrices.iter().enumerate() {
        let g: Vec<f64> = gamma.iter().map(|c| c.values()[k]).collect();
        let b = estimate_beta(s, &g, lambda)?;
        r2.push(dot(&g, &b).max(0.0));
        for (j, v) in b.into_iter().enumerate() {
            beta[j].push(v);
        }
    }
    let beta = beta
        .into_iter()
        .map(|v| ScalarCurve::new(config.grid.clone(), v))
        .collect::<Result<Vec<_>>>()?;
    Ok(VcmFit {
        grid: config.grid.clone(),
        gamma,
        beta,
        r_squared: ScalarCurve::new(config.grid.clone(), r2)?,
        lambda,
        bandwidths: bw,
        lambda_scores,
    })
}
