//! Versioned JSON documents written and read by the commands.

use dyncov::bandwidth::BandwidthChoice;
use dyncov::matrix::SymMatrix;
use dyncov::sim::{RepeatDesign, SimConfig, SpreadReading};
use dyncov::vcm::{LambdaScores, VcmBandwidths};
use dyncov::{Estimator, Kernel, MatrixCurve};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, LibContext};

pub const SCHEMA_VERSION: u32 = 1;

pub fn check_schema(found: u32, what: &str) -> CliResult<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{what} has schema_version {found}; this build reads version {SCHEMA_VERSION}"
        )))
    }
}

fn default_baseline() -> f64 {
    dyncov::vcm::DEFAULT_BASELINE
}

/// Outcome generation for the varying-coefficient model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcmSpec {
    pub noise_sd: f64,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
}

/// Input of `dyncov simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub replicate: u64,
    #[serde(default)]
    pub spread: SpreadReading,
    #[serde(default)]
    pub repeat_design: Option<RepeatDesign>,
    #[serde(default)]
    pub vcm: Option<VcmSpec>,
}

/// Sidecar of a simulated data file: the full drawn model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub schema_version: u32,
    pub manifest: String,
    pub replicate: u64,
    pub sim: SimConfig,
    pub vcm: Option<VcmSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub h1: f64,
    pub h2: f64,
    pub h_opt: f64,
    pub candidates: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Selection {
    pub fn new(choice: BandwidthChoice, candidates: Vec<f64>, folds: usize, seed: u64) -> Self {
        Self {
            h1: choice.h1,
            h2: choice.h2,
            h_opt: choice.h_opt,
            candidates,
            folds,
            seed,
        }
    }
}

/// A covariance matrix curve; `estimator` is absent for the true curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixCurveFile {
    pub schema_version: u32,
    pub manifest: String,
    pub estimator: Option<Estimator>,
    pub kernel: Option<Kernel>,
    pub domain_end: f64,
    pub h_mean: Option<f64>,
    pub h_cov: Option<f64>,
    pub bandwidth_selection: Option<Selection>,
    pub grid: Vec<f64>,
    /// Row-major `p x p` matrices, one per grid point.
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub psd: Vec<bool>,
    pub correlations: Option<Vec<Vec<Vec<f64>>>>,
}

impl MatrixCurveFile {
    pub fn sym_matrices(&self) -> CliResult<Vec<SymMatrix>> {
        if self.matrices.len() != self.grid.len() {
            return Err(CliError::data(format!(
                "{} matrices for {} grid points",
                self.matrices.len(),
                self.grid.len()
            )));
        }
        self.matrices
            .iter()
            .map(|rows| SymMatrix::from_rows(rows).data_err())
            .collect()
    }

    /// The fitted curve; the truth file has no estimator and is rejected.
    pub fn to_curve(&self) -> CliResult<MatrixCurve> {
        let (Some(estimator), Some(h_cov)) = (self.estimator, self.h_cov) else {
            return Err(CliError::data("expected a fitted matrix curve, found one without estimator"));
        };
        Ok(MatrixCurve {
            grid: self.grid.clone(),
            matrices: self.sym_matrices()?,
            estimator,
            bandwidth: h_cov,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub schema_version: u32,
    pub manifest: String,
    pub fit: String,
    pub truth: String,
    pub ise: f64,
    pub log_ise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcmFile {
    pub schema_version: u32,
    pub manifest: String,
    pub kernel: Kernel,
    pub baseline: f64,
    pub lambda: f64,
    pub bandwidths: VcmBandwidths,
    pub bandwidth_selection: Option<Selection>,
    pub lambda_scores: Option<LambdaScores>,
    pub grid: Vec<f64>,
    /// One curve per response component.
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub r_squared: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub prob: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpcaFile {
    pub schema_version: u32,
    pub manifest: String,
    pub source: String,
    pub labels: Vec<String>,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub fve: Vec<f64>,
    /// One row per curve, one column per component.
    pub scores: Vec<Vec<f64>>,
    pub total_variance: f64,
    pub bands: Vec<Band>,
}
