//! Local Frechet estimation of time-varying covariance matrices from
//! longitudinal data with one (or a few) observations per subject.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`]: kernels, local weights and scalar smoothers.
//! * [`matrix`]: symmetric matrices, PSD projection, square roots, correlations.
//! * [`covariance`]: mean curves, raw covariances and the pointwise estimators.
//! * [`bandwidth`]: cross-validated bandwidth choice.
//! * [`vcm`]: varying coefficient regression of a scalar outcome on the covariate path.
//! * [`sim`]: the simulation model and the estimation benchmark.
//! * [`fpca`]: principal components of curve collections such as correlation curves.

pub mod bandwidth;
pub mod covariance;
pub mod error;
pub mod fpca;
pub mod kernel;
pub mod matrix;
pub mod sim;
pub mod vcm;

pub use covariance::{
    curve_from_raw, curves_from_raw, estimate_at, estimate_curve, estimate_dcov_sqrt,
    estimate_ll_raw, estimate_lf, estimate_means, estimate_nw, raw_covariances, Estimator,
    MatrixCurve, MeanCurves, ObservationSet, RawCovSet,
};
pub use error::{Error, Result};
pub use fpca::{fpca, pointwise_band, positive_spectrum, CurveCollection, FpcaResult};
pub use kernel::{linspace, local_weights, Kernel, LocalWeights, Order, ScalarCurve};
pub use matrix::{
    cov_to_corr, frobenius_dist, frobenius_norm, matrix_exp, project_psd, pseudo_inverse,
    sqrt_psd, CorrMatrix, SymEigen, SymMatrix,
};
