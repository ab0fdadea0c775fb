//! Cross-validated bandwidth choice.
//!
//! Two criteria are evaluated over a candidate grid with k-fold leave-out:
//! `h1` minimizes the summed squared Frobenius distance between each held-out
//! raw covariance and the local Frechet estimate trained without it, and `h2`
//! minimizes `sum_i tr(S^+ C_i)` with `S` the same held-out estimate. `h1`
//! tends to undersmooth and `h2` to oversmooth, so the final choice is their
//! geometric mean.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    default_mean_grid, estimate_lf, estimate_means, raw_covariances, ObservationSet, RawCovSet,
};
use crate::error::{Error, Result};
use crate::kernel::{self, Kernel, Order};
use crate::matrix::{frobenius_dist_sq, pseudo_inverse, PINV_RTOL};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_CANDIDATES: usize = 10;

/// Candidate bandwidths plus the fold layout used to score them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    candidates: Vec<f64>,
    folds: usize,
    seed: u64,
}

impl BandwidthGrid {
    pub fn new(candidates: Vec<f64>, folds: usize, seed: u64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("bandwidth grid is empty"));
        }
        if candidates.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::invalid("bandwidth candidates must be positive and finite"));
        }
        if candidates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("bandwidth candidates must be strictly increasing"));
        }
        if folds < 2 {
            return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
        }
        Ok(Self {
            candidates,
            folds,
            seed,
        })
    }

    /// Ten log-spaced candidates from twice the largest gap between sorted
    /// times up to half the domain, five folds.
    pub fn default_for(data: &ObservationSet, seed: u64) -> Result<Self> {
        let candidates = default_candidates(data.times(), data.domain_end(), DEFAULT_CANDIDATES)?;
        Self::new(candidates, DEFAULT_FOLDS, seed)
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_folds(mut self, folds: usize) -> Result<Self> {
        if folds < 2 {
            return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
        }
        self.folds = folds;
        Ok(self)
    }
}

/// `m` log-spaced values over `[2 * max gap, T / 2]`.
pub fn default_candidates(times: &[f64], domain_end: f64, m: usize) -> Result<Vec<f64>> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let lo = 2.0 * gap;
    let hi = domain_end / 2.0;
    if !(lo > 0.0) || lo >= hi {
        return Err(Error::invalid(format!(
            "cannot build a default bandwidth grid: lower end {lo} is not below {hi}"
        )));
    }
    Ok(log_space(lo, hi, m))
}

/// `m` points equally spaced in log scale, endpoints exact.
pub fn log_space(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let step = (b - a) / (m - 1) as f64;
            let mut v: Vec<f64> = (0..m).map(|i| (a + step * i as f64).exp()).collect();
            v[0] = lo;
            v[m - 1] = hi;
            v
        }
    }
}

/// Random partition of `0..n` into `k` folds of near-equal size, each sorted.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("cannot split {n} observations into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Indices outside `fold`, ascending.
fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - fold.len());
    let mut it = fold.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Scores for every candidate; `None` marks a candidate with a degenerate
/// window somewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub candidates: Vec<f64>,
    pub scores: Vec<Option<f64>>,
}

impl CvScores {
    /// Smallest-candidate minimizer among the valid scores.
    pub fn argmin(&self) -> Result<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (&h, s) in self.candidates.iter().zip(&self.scores) {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((h, s));
                }
            }
        }
        best.map(|(h, _)| h).ok_or(Error::AllCandidatesDegenerate)
    }
}

/// Runs `score` for each candidate in parallel, mapping degenerate windows
/// and non-finite values to `None`.
fn score_candidates(
    grid: &BandwidthGrid,
    score: impl Fn(f64) -> Result<f64> + Sync,
) -> Result<CvScores> {
    let scores = grid
        .candidates
        .par_iter()
        .map(|&h| match score(h) {
            Ok(s) if s.is_finite() => Ok(Some(s)),
            Ok(_) | Err(Error::DegenerateWindow { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvScores {
        candidates: grid.candidates.clone(),
        scores,
    })
}

/// Pooled held-out squared error of the local linear mean smoother.
pub fn mean_cv_scores(data: &ObservationSet, grid: &BandwidthGrid, kernel: Kernel) -> Result<CvScores> {
    let n = data.n();
    let p = data.p();
    let folds = fold_partition(n, grid.folds, grid.seed)?;
    let trains: Vec<Vec<usize>> = folds.iter().map(|f| complement(n, f)).collect();
    let train_times: Vec<Vec<f64>> = trains
        .iter()
        .map(|t| t.iter().map(|&i| data.times()[i]).collect())
        .collect();
    let y = data.responses();
    let rows: Vec<f64> = (0..n).flat_map(|i| y.row(i).iter().copied().collect::<Vec<_>>()).collect();
    score_candidates(grid, |h| {
        let mut total = 0.0;
        let mut pred = vec![0.0; p];
        for ((fold, train), times) in folds.iter().zip(&trains).zip(&train_times) {
            let mut w = vec![0.0; train.len()];
            for &i in fold {
                kernel::fill_weights(times, data.times()[i], h, Order::LocalLinear, kernel, &mut w)?;
                pred.fill(0.0);
                for (&t, &wt) in train.iter().zip(&w) {
                    if wt != 0.0 {
                        for (acc, v) in pred.iter_mut().zip(&rows[t * p..(t + 1) * p]) {
                            *acc += wt * v;
                        }
                    }
                }
                for (j, m) in pred.iter().enumerate() {
                    let r = y[(i, j)] - m;
                    total += r * r;
                }
            }
        }
        Ok(total)
    })
}

/// Mean-curve bandwidth minimizing pooled held-out prediction error.
pub fn cv_mean_bandwidth(data: &ObservationSet, grid: &BandwidthGrid, kernel: Kernel) -> Result<f64> {
    mean_cv_scores(data, grid, kernel)?.argmin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Criterion {
    Frobenius,
    Trace,
}

fn cov_cv_scores(
    raw: &RawCovSet,
    grid: &BandwidthGrid,
    kernel: Kernel,
    criterion: Criterion,
) -> Result<CvScores> {
    let n = raw.n();
    let folds = fold_partition(n, grid.folds, grid.seed)?;
    let trains: Vec<RawCovSet> = folds.iter().map(|f| raw.subset(&complement(n, f))).collect();
    score_candidates(grid, |h| {
        let mut total = 0.0;
        for (fold, train) in folds.iter().zip(&trains) {
            for &i in fold {
                let est = estimate_lf(train, raw.times()[i], h, kernel)?;
                total += match criterion {
                    Criterion::Frobenius => frobenius_dist_sq(&raw.matrix(i), &est)?,
                    Criterion::Trace => {
                        pseudo_inverse(&est, PINV_RTOL)?.quadratic_form(&raw.residual(i))?
                    }
                };
            }
        }
        Ok(total)
    })
}

/// `sum_i d_F^2(C_i, S_{-i}(X_i))` for each candidate.
pub fn h1_scores(raw: &RawCovSet, grid: &BandwidthGrid, kernel: Kernel) -> Result<CvScores> {
    cov_cv_scores(raw, grid, kernel, Criterion::Frobenius)
}

/// `sum_i tr(S_{-i}(X_i)^+ C_i)` for each candidate.
pub fn h2_scores(raw: &RawCovSet, grid: &BandwidthGrid, kernel: Kernel) -> Result<CvScores> {
    cov_cv_scores(raw, grid, kernel, Criterion::Trace)
}

fn raw_for(data: &ObservationSet, h_mean: f64, kernel: Kernel) -> Result<RawCovSet> {
    let means = estimate_means(data, h_mean, &default_mean_grid(data), kernel)?;
    raw_covariances(data, &means)
}

/// Frobenius leave-out bandwidth. Raw covariances are centred by means fitted
/// to all observations with bandwidth `h_mean`.
pub fn cv_h1(data: &ObservationSet, grid: &BandwidthGrid, h_mean: f64, kernel: Kernel) -> Result<f64> {
    h1_scores(&raw_for(data, h_mean, kernel)?, grid, kernel)?.argmin()
}

/// Trace leave-out bandwidth.
pub fn cv_h2(data: &ObservationSet, grid: &BandwidthGrid, h_mean: f64, kernel: Kernel) -> Result<f64> {
    h2_scores(&raw_for(data, h_mean, kernel)?, grid, kernel)?.argmin()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub h1: f64,
    pub h2: f64,
    pub h_opt: f64,
}

pub fn geometric_mean(h1: f64, h2: f64) -> f64 {
    (h1 * h2).sqrt()
}

/// Both criteria and their geometric mean, sharing one set of raw covariances.
pub fn select_bandwidth_detailed(
    data: &ObservationSet,
    grid: &BandwidthGrid,
    h_mean: f64,
    kernel: Kernel,
) -> Result<BandwidthChoice> {
    let raw = raw_for(data, h_mean, kernel)?;
    let h1 = h1_scores(&raw, grid, kernel)?.argmin()?;
    let h2 = h2_scores(&raw, grid, kernel)?.argmin()?;
    Ok(BandwidthChoice {
        h1,
        h2,
        h_opt: geometric_mean(h1, h2),
    })
}

/// `sqrt(h1 * h2)`.
pub fn select_bandwidth(
    data: &ObservationSet,
    grid: &BandwidthGrid,
    h_mean: f64,
    kernel: Kernel,
) -> Result<f64> {
    Ok(select_bandwidth_detailed(data, grid, h_mean, kernel)?.h_opt)
}
