//! Functional principal components of a collection of curves on a common grid.
//!
//! Integrals use trapezoid weights `w`, so the eigenproblem is solved for the
//! symmetric matrix `W^{1/2} C W^{1/2}` and mapped back with `W^{-1/2}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::MatrixCurve;
use crate::error::{Error, Result};
use crate::kernel::{check_grid, trapezoid_weights, ScalarCurve};
use crate::matrix::{CorrMatrix, SymMatrix};

/// Eigenvalues at or below this fraction of the data scale count as zero.
pub const EIGEN_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CurveCollection {
    grid: Vec<f64>,
    curves: DMatrix<f64>,
    labels: Vec<String>,
}

impl CurveCollection {
    /// `curves` is `N x m`, one curve per row.
    pub fn new(grid: Vec<f64>, curves: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        check_grid(&grid)?;
        if grid.len() < 2 {
            return Err(Error::invalid("curves need at least two grid points"));
        }
        if curves.ncols() != grid.len() {
            return Err(Error::DimMismatch {
                expected: grid.len(),
                found: curves.ncols(),
            });
        }
        if curves.nrows() < 2 {
            return Err(Error::invalid("need at least two curves"));
        }
        if labels.len() != curves.nrows() {
            return Err(Error::DimMismatch {
                expected: curves.nrows(),
                found: labels.len(),
            });
        }
        if curves.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curves contain missing or non-finite values"));
        }
        Ok(Self {
            grid,
            curves,
            labels,
        })
    }

    /// Rows labelled `0..N`.
    pub fn unlabelled(grid: Vec<f64>, curves: DMatrix<f64>) -> Result<Self> {
        let labels = (0..curves.nrows()).map(|i| i.to_string()).collect();
        Self::new(grid, curves, labels)
    }

    /// The `p(p-1)/2` off-diagonal correlation curves of a covariance curve,
    /// labelled `"j-k"` with zero-based `j < k`.
    pub fn from_correlations(curve: &MatrixCurve) -> Result<Self> {
        Self::from_correlation_matrices(curve.grid.clone(), &curve.correlations()?)
    }

    pub fn from_correlation_matrices(grid: Vec<f64>, corr: &[CorrMatrix]) -> Result<Self> {
        if corr.len() != grid.len() {
            return Err(Error::DimMismatch {
                expected: grid.len(),
                found: corr.len(),
            });
        }
        let p = corr.first().map_or(0, |c| c.dim());
        if let Some(c) = corr.iter().find(|c| c.dim() != p) {
            return Err(Error::DimMismatch {
                expected: p,
                found: c.dim(),
            });
        }
        let pairs: Vec<(usize, usize)> = (0..p).flat_map(|j| ((j + 1)..p).map(move |k| (j, k))).collect();
        let curves = DMatrix::from_fn(pairs.len(), grid.len(), |r, t| {
            let (j, k) = pairs[r];
            corr[t].get(j, k)
        });
        let labels = pairs.iter().map(|(j, k)| format!("{j}-{k}")).collect();
        Self::new(grid, curves, labels)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.curves.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.nrows() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpcaResult {
    pub mean_curve: ScalarCurve,
    /// Orthonormal under the trapezoid inner product.
    pub eigenfunctions: Vec<ScalarCurve>,
    pub eigenvalues: Vec<f64>,
    pub fve: Vec<f64>,
    /// `N x K` principal scores, one row per curve.
    pub scores: Vec<Vec<f64>>,
    /// Integrated pointwise variance, equal to the sum of all eigenvalues.
    pub total_variance: f64,
}

struct Decomposition {
    weights: Vec<f64>,
    mean: Vec<f64>,
    centered: DMatrix<f64>,
    /// Ascending eigenvalues and matching eigenvectors of `W^{1/2} C W^{1/2}`.
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    total_variance: f64,
    /// Number of eigenvalues that count as positive.
    available: usize,
}

fn decompose(collection: &CurveCollection) -> Result<Decomposition> {
    let n = collection.len();
    let m = collection.grid.len();
    let weights = trapezoid_weights(&collection.grid);
    let root: Vec<f64> = weights.iter().map(|v| v.sqrt()).collect();
    let mean: Vec<f64> = (0..m).map(|t| collection.curves.column(t).mean()).collect();
    let centered = DMatrix::from_fn(n, m, |i, t| collection.curves[(i, t)] - mean[t]);
    let scaled = DMatrix::from_fn(n, m, |i, t| centered[(i, t)] * root[t]);
    let cov = scaled.transpose() * &scaled / (n - 1) as f64;
    let eig = SymMatrix::symmetrized(&cov)?.eigen()?;
    let values: Vec<f64> = eig.values.iter().copied().collect();
    let total_variance: f64 = (0..m).map(|t| cov[(t, t)]).sum();
    // Scale by the raw second moment so that rounding noise left after
    // centering identical curves does not count as variation.
    let raw_moment: f64 = (0..m)
        .map(|t| weights[t] * collection.curves.column(t).map(|v| v * v).mean())
        .sum();
    let cutoff = EIGEN_RTOL * values[m - 1].max(raw_moment);
    let available = values.iter().filter(|&&l| l > cutoff).count();
    Ok(Decomposition {
        weights,
        mean,
        centered,
        values,
        vectors: eig.vectors,
        total_variance,
        available,
    })
}

/// Positive eigenvalues of the integral covariance operator, largest first.
pub fn positive_spectrum(collection: &CurveCollection) -> Result<Vec<f64>> {
    let d = decompose(collection)?;
    Ok(d.values.iter().rev().take(d.available).copied().collect())
}

/// Leading `k` components. Covariances use the `N - 1` divisor; each
/// eigenfunction is signed so that its integral is nonnegative.
pub fn fpca(collection: &CurveCollection, k: usize) -> Result<FpcaResult> {
    let n = collection.len();
    let m = collection.grid.len();
    if k == 0 || k > (n - 1).min(m) {
        return Err(Error::invalid(format!(
            "number of components must be in 1..={}, got {k}",
            (n - 1).min(m)
        )));
    }
    let Decomposition {
        weights: w,
        mean,
        centered,
        values,
        vectors,
        total_variance,
        available,
    } = decompose(collection)?;
    if available < k {
        return Err(Error::RankDeficient {
            requested: k,
            available,
        });
    }

    let mut eigenfunctions = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut scores = vec![Vec::with_capacity(k); n];
    for c in 0..k {
        let col = m - 1 - c;
        let mut phi: Vec<f64> = (0..m).map(|t| vectors[(t, col)] / w[t].sqrt()).collect();
        let integral: f64 = phi.iter().zip(&w).map(|(f, wt)| f * wt).sum();
        if integral < 0.0 {
            phi.iter_mut().for_each(|f| *f = -*f);
        }
        for (i, row) in scores.iter_mut().enumerate() {
            row.push((0..m).map(|t| w[t] * centered[(i, t)] * phi[t]).sum());
        }
        eigenvalues.push(values[col]);
        eigenfunctions.push(ScalarCurve::new(collection.grid.clone(), phi)?);
    }
    let positive_total: f64 = values.iter().filter(|&&l| l > 0.0).sum();
    let fve = eigenvalues.iter().map(|l| l / positive_total).collect();
    Ok(FpcaResult {
        mean_curve: ScalarCurve::new(collection.grid.clone(), mean)?,
        eigenfunctions,
        eigenvalues,
        fve,
        scores,
        total_variance,
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (`(N - 1) q` positions, the common default convention).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Pointwise quantile curves, one per entry of `probs`.
pub fn pointwise_band(collection: &CurveCollection, probs: &[f64]) -> Result<Vec<ScalarCurve>> {
    if probs.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::invalid("quantile levels must lie in (0, 1)"));
    }
    let m = collection.grid.len();
    let sorted: Vec<Vec<f64>> = (0..m)
        .map(|t| {
            let mut col: Vec<f64> = collection.curves.column(t).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    probs
        .iter()
        .map(|&q| {
            let values = sorted.iter().map(|col| quantile_sorted(col, q)).collect();
            ScalarCurve::new(collection.grid.clone(), values)
        })
        .collect()
}

/// Correlation curves of a single covariance estimate, for convenience.
pub fn correlation_fpca(curve: &MatrixCurve, k: usize) -> Result<(CurveCollection, FpcaResult)> {
    let collection = CurveCollection::from_correlations(curve)?;
    let result = fpca(&collection, k)?;
    Ok((collection, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::linspace;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inner(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
        w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
    }

    fn random_smooth(seed: u64, n: usize, grid: &[f64]) -> CurveCollection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curves = DMatrix::from_fn(n, grid.len(), |_, _| 0.0);
        let mut curves = curves;
        for i in 0..n {
            let coef: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (t, &x) in grid.iter().enumerate() {
                curves[(i, t)] = coef
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * ((k + 1) as f64 * x * 3.0).sin() / (k + 1) as f64)
                    .sum::<f64>()
                    + 0.01 * rng.random_range(-1.0..1.0);
            }
        }
        CurveCollection::unlabelled(grid.to_vec(), curves).unwrap()
    }

    #[test]
    fn identical_curves_are_rank_deficient() {
        let grid = linspace(0.0, 1.0, 11);
        let row: Vec<f64> = grid.iter().map(|x| x * x).collect();
        let curves = DMatrix::from_fn(3, 11, |_, t| row[t]);
        let c = CurveCollection::unlabelled(grid, curves).unwrap();
        assert_eq!(
            fpca(&c, 1),
            Err(Error::RankDeficient { requested: 1, available: 0 })
        );
    }

    #[test]
    fn two_groups_give_one_component() {
        let grid = linspace(0.0, 1.0, 41);
        let w = trapezoid_weights(&grid);
        let base: Vec<f64> = grid.iter().map(|x| 1.0 + x).collect();
        let phi: Vec<f64> = grid.iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
        let curves = DMatrix::from_fn(4, 41, |i, t| if i % 2 == 0 { base[t] + phi[t] } else { base[t] - phi[t] });
        let c = CurveCollection::unlabelled(grid, curves).unwrap();
        let r = fpca(&c, 1).unwrap();
        assert_abs_diff_eq!(r.fve[0], 1.0, epsilon = 1e-10);
        let norm = inner(&w, &phi, &phi).sqrt();
        for (i, s) in r.scores.iter().enumerate() {
            let expected = if i % 2 == 0 { norm } else { -norm };
            assert_abs_diff_eq!(s[0], expected, epsilon = 1e-10);
        }
        for (m, b) in r.mean_curve.values().iter().zip(&base) {
            assert_abs_diff_eq!(*m, *b, epsilon = 1e-14);
        }
        assert!(matches!(fpca(&c, 2), Err(Error::RankDeficient { requested: 2, available: 1 })));
    }

    #[test]
    fn full_rank_reconstruction_and_invariants() {
        let grid: Vec<f64> = linspace(0.0, 1.0, 60).iter().map(|x| x * x).collect();
        let c = random_smooth(3, 50, &grid);
        let k = 49;
        let r = fpca(&c, k).unwrap();
        let w = trapezoid_weights(&grid);
        for a in 0..k {
            let fa = r.eigenfunctions[a].values();
            assert!(inner(&w, fa, &vec![1.0; 60]) >= 0.0);
            for b in 0..k {
                let fb = r.eigenfunctions[b].values();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(inner(&w, fa, fb), expected, epsilon = 1e-8);
            }
            let mean_score = r.scores.iter().map(|s| s[a]).sum::<f64>() / 50.0;
            assert_abs_diff_eq!(mean_score, 0.0, epsilon = 1e-10);
        }
        for i in 0..50 {
            for t in 0..60 {
                let rec = r.mean_curve.values()[t]
                    + (0..k).map(|a| r.scores[i][a] * r.eigenfunctions[a].values()[t]).sum::<f64>();
                assert_abs_diff_eq!(rec, c.curves()[(i, t)], epsilon = 1e-8);
            }
        }
        // Dense eigen oracle on the weighted covariance.
        let mean: Vec<f64> = (0..60).map(|t| c.curves().column(t).mean()).collect();
        let x = DMatrix::from_fn(50, 60, |i, t| (c.curves()[(i, t)] - mean[t]) * w[t].sqrt());
        let cov = x.transpose() * &x / 49.0;
        let mut ev: Vec<f64> = cov.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let positive: f64 = ev.iter().filter(|l| **l > 0.0).sum();
        for a in 0..k {
            assert_abs_diff_eq!(r.fve[a], ev[a] / positive, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(positive, r.total_variance, epsilon = 1e-8 * r.total_variance);
        assert!(r.fve.windows(2).all(|f| f[0] >= f[1]));
        assert!(r.fve.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn component_count_is_checked() {
        let grid = linspace(0.0, 1.0, 5);
        let c = random_smooth(4, 3, &grid);
        assert!(fpca(&c, 0).is_err());
        assert!(fpca(&c, 3).is_err());
        assert!(fpca(&c, 2).is_ok());
    }

    #[test]
    fn band_examples() {
        let grid = linspace(0.0, 1.0, 5);
        let flat = CurveCollection::unlabelled(grid.clone(), DMatrix::from_element(4, 5, 0.3)).unwrap();
        for q in pointwise_band(&flat, &[0.25, 0.5, 0.75]).unwrap() {
            assert!(q.values().iter().all(|v| *v == 0.3));
        }
        let two = CurveCollection::unlabelled(
            grid.clone(),
            DMatrix::from_fn(2, 5, |i, t| if i == 0 { t as f64 } else { 2.0 * t as f64 + 1.0 }),
        )
        .unwrap();
        let median = &pointwise_band(&two, &[0.5]).unwrap()[0];
        for t in 0..5 {
            assert_eq!(median.values()[t], (3.0 * t as f64 + 1.0) / 2.0);
        }
        assert!(pointwise_band(&two, &[1.0]).is_err());
    }

    #[test]
    fn band_matches_sort_oracle() {
        let grid = linspace(0.0, 1.0, 7);
        let c = random_smooth(5, 100, &grid);
        let bands = pointwise_band(&c, &[0.1, 0.25, 0.5, 0.9]).unwrap();
        for (b, q) in bands.iter().zip([0.1, 0.25, 0.5, 0.9]) {
            for t in 0..7 {
                let mut col: Vec<f64> = c.curves().column(t).iter().copied().collect();
                col.sort_by(f64::total_cmp);
                let pos: f64 = 99.0 * q;
                let lo = pos.floor() as usize;
                let expected = col[lo] + (pos - lo as f64) * (col[lo + 1] - col[lo]);
                assert_abs_diff_eq!(b.values()[t], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn correlation_collection_labels_pairs() {
        let grid = linspace(0.0, 1.0, 3);
        let m = SymMatrix::from_rows(&[vec![4.0, 2.0, 0.0], vec![2.0, 9.0, 3.0], vec![0.0, 3.0, 1.0]]).unwrap();
        let curve = MatrixCurve {
            grid: grid.clone(),
            matrices: vec![m.clone(), m.clone(), m],
            estimator: crate::covariance::Estimator::LocalFrechet,
            bandwidth: 0.2,
        };
        let c = CurveCollection::from_correlations(&curve).unwrap();
        assert_eq!(c.labels(), &["0-1", "0-2", "1-2"]);
        assert_abs_diff_eq!(c.curves()[(0, 1)], 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.curves()[(2, 0)], 1.0, epsilon = 1e-15);
    }
}
