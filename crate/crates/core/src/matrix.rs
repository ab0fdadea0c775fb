//! Symmetric matrices under the Frobenius metric.
//!
//! `SymMatrix` writes every off-diagonal entry to both triangles at once, so
//! symmetry is exact. Spectral maps (projection onto the PSD cone, square
//! root, exponential, pseudo-inverse) all go through one symmetric
//! eigendecomposition and rebuild `V f(D) V^T` from its upper triangle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for PSD certification.
pub const PSD_RTOL: f64 = 1e-10;
/// Default relative cutoff for `pseudo_inverse`.
pub const PINV_RTOL: f64 = 1e-8;
/// Default floor on variances in `cov_to_corr`.
pub const DIAG_FLOOR: f64 = 1e-12;
/// Largest overshoot of `|r_jk| > 1` that `cov_to_corr` silently clamps.
pub const CORR_CLAMP_SLACK: f64 = 1e-10;

const EIG_MAX_ITER: usize = 100_000;

/// Serialized as a list of rows; symmetry is checked exactly on input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    data: DMatrix<f64>,
    psd: bool,
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(p: usize) -> Self {
        Self {
            data: DMatrix::zeros(p, p),
            psd: true,
        }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            data: DMatrix::identity(p, p),
            psd: true,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let p = diag.len();
        Self {
            data: DMatrix::from_fn(p, p, |j, k| if j == k { diag[j] } else { 0.0 }),
            psd: diag.iter().all(|&d| d >= 0.0),
        }
    }

    /// Builds from `f(j, k)` evaluated on the upper triangle (`j <= k`).
    pub fn from_upper_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                let v = f(j, k);
                data[(j, k)] = v;
                data[(k, j)] = v;
            }
        }
        Self { data, psd: false }
    }

    /// Takes the upper triangle of `m` and mirrors it.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self::from_upper_fn(m.nrows(), |j, k| m[(j, k)]))
    }

    /// `(m + m^T) / 2`.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self::from_upper_fn(m.nrows(), |j, k| {
            0.5 * (m[(j, k)] + m[(k, j)])
        }))
    }

    /// Requires exact symmetry.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        for j in 0..m.nrows() {
            for k in (j + 1)..m.ncols() {
                if m[(j, k)] != m[(k, j)] {
                    return Err(Error::NotSymmetric { row: j, col: k });
                }
            }
        }
        Ok(Self { data: m, psd: false })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_fn(p, p, |j, k| rows[j][k]))
    }

    /// `v v^T`, PSD by construction.
    pub fn outer(v: &[f64]) -> Self {
        let mut m = Self::from_upper_fn(v.len(), |j, k| v[j] * v[k]);
        m.psd = true;
        m
    }

    /// Builds from row-major upper-triangle storage (see [`packed_len`]).
    pub fn from_packed(p: usize, packed: &[f64]) -> Result<Self> {
        if packed.len() != packed_len(p) {
            return Err(Error::DimMismatch {
                expected: packed_len(p),
                found: packed.len(),
            });
        }
        let mut idx = 0;
        Ok(Self::from_upper_fn(p, |_, _| {
            let v = packed[idx];
            idx += 1;
            v
        }))
    }

    pub fn to_packed(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = Vec::with_capacity(packed_len(p));
        for j in 0..p {
            for k in j..p {
                out.push(self.data[(j, k)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[(j, k)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.data.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn is_psd_certified(&self) -> bool {
        self.psd
    }

    /// Runs the eigen check and sets the PSD flag if it passes.
    pub fn certify_psd(mut self) -> Result<Self> {
        self.psd = self.psd || is_psd_spectrum(self.eigen()?.values.as_slice());
        Ok(self)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * factor,
            psd: self.psd && factor >= 0.0,
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self {
            data: &self.data + &other.data,
            psd: self.psd && other.psd,
        })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self {
            data: &self.data - &other.data,
            psd: false,
        })
    }

    /// `A + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut data = self.data.clone();
        for j in 0..self.dim() {
            data[(j, j)] += c;
        }
        Self {
            data,
            psd: self.psd && c >= 0.0,
        }
    }

    /// `A B` as a symmetric matrix; callers guarantee the product is symmetric
    /// (e.g. `B = A`). The upper triangle of the product is mirrored.
    pub(crate) fn product_upper(&self, other: &SymMatrix) -> Self {
        let prod = &self.data * &other.data;
        Self::from_upper_fn(self.dim(), |j, k| prod[(j, k)])
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let v = DVector::from_column_slice(x);
        Ok(v.dot(&(&self.data * &v)))
    }

    pub fn eigen(&self) -> Result<SymEigen> {
        let eig = SymmetricEigen::try_new(self.data.clone(), f64::EPSILON, EIG_MAX_ITER)
            .ok_or(Error::EigFailure)?;
        let p = self.dim();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(SymEigen { values, vectors })
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigen()?.values.as_slice().to_vec())
    }

    pub(crate) fn with_psd_flag(mut self, psd: bool) -> Self {
        self.psd = psd;
        self
    }
}

/// Number of stored entries of a packed `p x p` symmetric matrix.
pub const fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

fn check_dims(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

fn is_psd_spectrum(ascending: &[f64]) -> bool {
    let Some((&min, &max)) = ascending.first().zip(ascending.last()) else {
        return true;
    };
    let scale = min.abs().max(max.abs());
    min >= -PSD_RTOL * scale
}

impl SymEigen {
    /// Rebuilds `V f(D) V^T` with exact symmetry.
    pub fn reconstruct(&self, mut f: impl FnMut(f64) -> f64) -> SymMatrix {
        let p = self.values.len();
        let mut scaled = self.vectors.clone();
        for c in 0..p {
            let fc = f(self.values[c]);
            scaled.column_mut(c).scale_mut(fc);
        }
        let full = scaled * self.vectors.transpose();
        SymMatrix::from_upper_fn(p, |j, k| full[(j, k)])
    }
}

pub fn frobenius_norm(a: &SymMatrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius_dist(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    Ok(frobenius_dist_sq(a, b)?.sqrt())
}

pub fn frobenius_dist_sq(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues set to zero.
pub fn project_psd(s: &SymMatrix) -> Result<SymMatrix> {
    let eig = s.eigen()?;
    Ok(eig.reconstruct(|l| l.max(0.0)).with_psd_flag(true))
}

/// Principal square root. Eigenvalues within the PSD tolerance below zero are
/// treated as zero; clearly indefinite input is rejected.
pub fn sqrt_psd(s: &SymMatrix) -> Result<SymMatrix> {
    let eig = s.eigen()?;
    if !s.is_psd_certified() && !is_psd_spectrum(eig.values.as_slice()) {
        return Err(Error::invalid(format!(
            "square root needs a PSD matrix; smallest eigenvalue is {}",
            eig.values[0]
        )));
    }
    Ok(eig.reconstruct(|l| l.max(0.0).sqrt()).with_psd_flag(true))
}

pub fn matrix_exp(s: &SymMatrix) -> Result<SymMatrix> {
    let eig = s.eigen()?;
    Ok(eig.reconstruct(f64::exp).with_psd_flag(true))
}

/// Moore-Penrose inverse; eigenvalues with `|l| <= rtol * max|l|` map to zero.
pub fn pseudo_inverse(s: &SymMatrix, rtol: f64) -> Result<SymMatrix> {
    if !(rtol > 0.0) {
        return Err(Error::invalid(format!("rtol must be positive, got {rtol}")));
    }
    let eig = s.eigen()?;
    let scale = eig.values.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let cutoff = rtol * scale;
    let inv = eig.reconstruct(|l| if l.abs() <= cutoff { 0.0 } else { 1.0 / l });
    let psd = s.is_psd_certified();
    Ok(inv.with_psd_flag(psd))
}

/// Correlation matrix: unit diagonal, entries in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct CorrMatrix {
    data: DMatrix<f64>,
}

impl CorrMatrix {
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[(j, k)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix::from_upper_fn(self.dim(), |j, k| self.data[(j, k)])
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl From<CorrMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrMatrix) -> Self {
        m.to_rows()
    }
}

pub fn cov_to_corr(s: &SymMatrix) -> Result<CorrMatrix> {
    cov_to_corr_with_floor(s, DIAG_FLOOR)
}

pub fn cov_to_corr_with_floor(s: &SymMatrix, diag_floor: f64) -> Result<CorrMatrix> {
    let p = s.dim();
    let sd: Vec<f64> = (0..p)
        .map(|j| {
            let v = s.get(j, j);
            if v > diag_floor {
                Ok(v.sqrt())
            } else {
                Err(Error::DegenerateDiagonal {
                    index: j,
                    value: v,
                    floor: diag_floor,
                })
            }
        })
        .collect::<Result<_>>()?;
    let mut data = DMatrix::identity(p, p);
    for j in 0..p {
        for k in (j + 1)..p {
            let mut r = s.get(j, k) / (sd[j] * sd[k]);
            if r.abs() > 1.0 {
                if r.abs() - 1.0 >= CORR_CLAMP_SLACK {
                    return Err(Error::NotACovariance {
                        row: j,
                        col: k,
                        value: r,
                    });
                }
                r = r.signum();
            }
            data[(j, k)] = r;
            data[(k, j)] = r;
        }
    }
    Ok(CorrMatrix { data })
}
