//! Generative model for the simulation study.
//!
//! `X ~ Beta(0.5, 1.8)` on `[0, 1]`, `Y | X = mu(X) + Sigma(X)^{1/2} Z` with
//!
//! * `mu_j(x) = b_j - 8 (x - c_j)^2`,
//! * `Sigma(x) = (1 + 10x + 20x^5) Exp[S o sin(2 pi theta (x + 0.1))]`,
//!
//! where `o` and `sin` act entrywise and `Exp` is the matrix exponential.
//! `b`, `c`, `S` and `theta` are drawn once from the configuration seed and
//! then held fixed; every replicate draws fresh `(X_i, Z_i)` from its own
//! stream of the same seed.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::ObservationSet;
use crate::error::{Error, Result};
use crate::matrix::{cov_to_corr, CorrMatrix, SymMatrix};
use crate::vcm::{OutcomeSet, DEFAULT_BASELINE};

pub const DEFAULT_BETA_SHAPE: (f64, f64) = (0.5, 1.8);
pub const DEFAULT_COUNT_PROBS: [f64; 4] = [0.48, 0.28, 0.14, 0.1];
pub const DEFAULT_CROSS_CORR: f64 = 0.2;

/// Stream reserved for the per-subject observation counts.
const COUNT_STREAM: u64 = u64::MAX;
/// Outcome noise for replicate `r` uses stream `OUTCOME_STREAM + r`.
const OUTCOME_STREAM: u64 = 1 << 62;

/// How the spread `0.5` of the Gaussian entries of `A` is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadReading {
    #[default]
    Variance,
    StandardDeviation,
}

/// Several observations per subject with correlated noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatDesign {
    /// Probabilities of observing a subject `1, 2, ...` times.
    pub count_probs: Vec<f64>,
    /// `Cov(Z_ij, Z_ij') = cross_corr * I` for two visits of one subject.
    pub cross_corr: f64,
}

impl Default for RepeatDesign {
    fn default() -> Self {
        Self {
            count_probs: DEFAULT_COUNT_PROBS.to_vec(),
            cross_corr: DEFAULT_CROSS_CORR,
        }
    }
}

impl RepeatDesign {
    pub fn validate(&self) -> Result<()> {
        if self.count_probs.is_empty()
            || self.count_probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite())
        {
            return Err(Error::InvalidDesign("count probabilities must be nonnegative".into()));
        }
        let total: f64 = self.count_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDesign(format!(
                "count probabilities sum to {total}, not 1"
            )));
        }
        let max_count = self.count_probs.len();
        self.visit_factor(max_count)?;
        Ok(())
    }

    /// Expected observations per subject.
    pub fn mean_count(&self) -> f64 {
        self.count_probs.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p).sum()
    }

    pub fn count_variance(&self) -> f64 {
        let m = self.mean_count();
        self.count_probs
            .iter()
            .enumerate()
            .map(|(k, p)| p * ((k + 1) as f64 - m).powi(2))
            .sum()
    }

    /// Lower Cholesky factor of the `m x m` visit correlation matrix
    /// (unit diagonal, `cross_corr` elsewhere).
    fn visit_factor(&self, m: usize) -> Result<DMatrix<f64>> {
        let r = DMatrix::from_fn(m, m, |a, b| if a == b { 1.0 } else { self.cross_corr });
        Cholesky::new(r).map(|c| c.l()).ok_or_else(|| {
            Error::InvalidDesign(format!(
                "cross correlation {} is not positive definite for {m} visits",
                self.cross_corr
            ))
        })
    }
}

/// Full specification of the generative model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub p: usize,
    /// Subjects per replicate.
    pub n: usize,
    pub beta_shape: (f64, f64),
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub s: SymMatrix,
    pub theta: SymMatrix,
    pub seed: u64,
    pub repeat_design: Option<RepeatDesign>,
    /// Observation counts per subject, drawn once for the repeated design.
    pub counts: Option<Vec<usize>>,
}

impl SimConfig {
    /// Draws `b ~ U(10, 16)`, `c ~ U(1, 1.1)`, `S = (A + A^T) / 2` with
    /// Gaussian `A`, and `theta = (V + V^T) / 2` with `V ~ U(0, 0.5)`, all from
    /// stream 0 of `seed`. The draws depend on `p` and `seed` only, so configs
    /// that differ in `n` share their parameters.
    pub fn draw(p: usize, n: usize, seed: u64, spread: SpreadReading) -> Result<Self> {
        if p == 0 || n < 2 {
            return Err(Error::invalid(format!("need p >= 1 and n >= 2, got p = {p}, n = {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..p).map(|_| rng.random_range(10.0..16.0)).collect();
        let c: Vec<f64> = (0..p).map(|_| rng.random_range(1.0..1.1)).collect();
        let sd = match spread {
            SpreadReading::Variance => 0.5f64.sqrt(),
            SpreadReading::StandardDeviation => 0.5,
        };
        let a = DMatrix::from_fn(p, p, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let v = DMatrix::from_fn(p, p, |_, _| rng.random_range(0.0..0.5));
        Ok(Self {
            p,
            n,
            beta_shape: DEFAULT_BETA_SHAPE,
            b,
            c,
            s: SymMatrix::from_upper_fn(p, |j, k| 0.5 * (a[(j, k)] + a[(k, j)])),
            theta: SymMatrix::from_upper_fn(p, |j, k| 0.5 * (v[(j, k)] + v[(k, j)])),
            seed,
            repeat_design: None,
            counts: None,
        })
    }

    /// Same parameters with a different subject count.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        if let Some(design) = self.repeat_design.take() {
            return self.with_repeat_design(design).expect("design was validated");
        }
        self
    }

    /// Enables repeated observations and draws the per-subject counts once.
    pub fn with_repeat_design(mut self, design: RepeatDesign) -> Result<Self> {
        design.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(COUNT_STREAM);
        let dist = WeightedIndex::new(&design.count_probs)
            .map_err(|e| Error::InvalidDesign(e.to_string()))?;
        self.counts = Some((0..self.n).map(|_| dist.sample(&mut rng) + 1).collect());
        self.repeat_design = Some(design);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        if self.b.len() != p || self.c.len() != p || self.s.dim() != p || self.theta.dim() != p {
            return Err(Error::invalid("parameter dimensions do not match p"));
        }
        let (a, b) = self.beta_shape;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid("beta shape parameters must be positive"));
        }
        if let Some(design) = &self.repeat_design {
            design.validate()?;
            match &self.counts {
                Some(c) if c.len() == self.n => {
                    if c.iter().any(|&k| k == 0 || k > design.count_probs.len()) {
                        return Err(Error::InvalidDesign("count out of range".into()));
                    }
                }
                _ => return Err(Error::InvalidDesign("counts missing or of wrong length".into())),
            }
        }
        Ok(())
    }

    pub fn total_observations(&self) -> usize {
        self.counts.as_ref().map_or(self.n, |c| c.iter().sum())
    }

    /// `Sigma(x) = f(x) Exp[M(x)]`: returns `(f(x), M(x))`.
    fn cov_parts(&self, x: f64) -> (f64, SymMatrix) {
        let m = SymMatrix::from_upper_fn(self.p, |j, k| {
            self.s.get(j, k) * (2.0 * std::f64::consts::PI * self.theta.get(j, k) * (x + 0.1)).sin()
        });
        (cov_scale(x), m)
    }

    /// `Sigma(x)^{1/2} = f(x)^{1/2} Exp[M(x) / 2]`.
    pub fn true_cov_sqrt(&self, x: f64) -> Result<SymMatrix> {
        let (f, m) = self.cov_parts(x);
        let eig = m.eigen()?;
        let root = f.sqrt();
        Ok(eig.reconstruct(|l| root * (0.5 * l).exp()).with_psd_flag(true))
    }
}

/// Scale factor `1 + 10x + 20x^5`.
pub fn cov_scale(x: f64) -> f64 {
    1.0 + 10.0 * x + 20.0 * x.powi(5)
}

pub fn true_mean(config: &SimConfig, x: f64) -> Vec<f64> {
    config
        .b
        .iter()
        .zip(&config.c)
        .map(|(b, c)| b - 8.0 * (x - c).powi(2))
        .collect()
}

pub fn true_cov(config: &SimConfig, x: f64) -> Result<SymMatrix> {
    let (f, m) = config.cov_parts(x);
    let eig = m.eigen()?;
    Ok(eig.reconstruct(|l| f * l.exp()).with_psd_flag(true))
}

pub fn true_corr(config: &SimConfig, x: f64) -> Result<CorrMatrix> {
    cov_to_corr(&true_cov(config, x)?)
}

fn replicate_rng(config: &SimConfig, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate + 1);
    rng
}

fn beta_dist(config: &SimConfig) -> Result<Beta<f64>> {
    Beta::new(config.beta_shape.0, config.beta_shape.1).map_err(|e| Error::invalid(e.to_string()))
}

fn standard_normals(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.sample(StandardNormal)).collect()
}

/// `mu(x) + Sigma(x)^{1/2} z`.
fn response(config: &SimConfig, x: f64, z: &[f64]) -> Result<Vec<f64>> {
    let root = config.true_cov_sqrt(x)?;
    let mu = true_mean(config, x);
    Ok((0..config.p)
        .map(|j| mu[j] + (0..config.p).map(|k| root.get(j, k) * z[k]).sum::<f64>())
        .collect())
}

/// One observation per subject, from replicate stream `replicate`.
pub fn generate_replicate(config: &SimConfig, replicate: u64) -> Result<ObservationSet> {
    config.validate()?;
    let mut rng = replicate_rng(config, replicate);
    let beta = beta_dist(config)?;
    let mut times = Vec::with_capacity(config.n);
    let mut y = DMatrix::zeros(config.n, config.p);
    for i in 0..config.n {
        let x = beta.sample(&mut rng);
        let z = standard_normals(&mut rng, config.p);
        for (j, v) in response(config, x, &z)?.into_iter().enumerate() {
            y[(i, j)] = v;
        }
        times.push(x);
    }
    ObservationSet::new(times, y, 1.0)
}

/// First replicate.
pub fn generate(config: &SimConfig) -> Result<ObservationSet> {
    generate_replicate(config, 0)
}

/// Noise for `m` visits of one subject: unit variance per coordinate and
/// `cross_corr` between visits, coordinate by coordinate.
fn visit_noise(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>, m: usize, p: usize) -> Vec<Vec<f64>> {
    let e: Vec<Vec<f64>> = (0..m).map(|_| standard_normals(rng, p)).collect();
    (0..m)
        .map(|a| {
            (0..p)
                .map(|k| (0..=a).map(|b| factor[(a, b)] * e[b][k]).sum())
                .collect()
        })
        .collect()
}

/// Repeated design: subject `i` contributes `counts[i]` observations at
/// independent Beta times, with cross-visit noise correlation.
pub fn generate_repeated_replicate(config: &SimConfig, replicate: u64) -> Result<ObservationSet> {
    config.validate()?;
    let (Some(design), Some(counts)) = (&config.repeat_design, &config.counts) else {
        return Err(Error::InvalidDesign("no repeated-observation design configured".into()));
    };
    let max_count = design.count_probs.len();
    let factor = design.visit_factor(max_count)?;
    let mut rng = replicate_rng(config, replicate);
    let beta = beta_dist(config)?;
    let total = config.total_observations();
    let mut times = Vec::with_capacity(total);
    let mut subjects = Vec::with_capacity(total);
    let mut y = DMatrix::zeros(total, config.p);
    let mut row = 0;
    for (i, &m) in counts.iter().enumerate() {
        let xs: Vec<f64> = (0..m).map(|_| beta.sample(&mut rng)).collect();
        let zs = visit_noise(&mut rng, &factor, m, config.p);
        for (x, z) in xs.into_iter().zip(zs) {
            for (j, v) in response(config, x, &z)?.into_iter().enumerate() {
                y[(row, j)] = v;
            }
            times.push(x);
            subjects.push(i as u64);
            row += 1;
        }
    }
    ObservationSet::with_subjects(times, y, 1.0, subjects)
}

pub fn generate_repeated(config: &SimConfig) -> Result<ObservationSet> {
    generate_repeated_replicate(config, 0)
}

/// Outcomes for the varying-coefficient model with known coefficients:
/// `E_i = b0 + beta(X_i)^T (Y_i - mu(X_i)) + eps_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcmSimConfig {
    pub base: SimConfig,
    pub noise_sd: f64,
    pub baseline: f64,
}

impl VcmSimConfig {
    pub fn new(base: SimConfig, noise_sd: f64) -> Self {
        Self {
            base,
            noise_sd,
            baseline: DEFAULT_BASELINE,
        }
    }

    /// `beta_j(x) = 0.5 + 0.5 sin(2 pi (x + j / p))`.
    pub fn true_beta(&self, x: f64) -> Vec<f64> {
        let p = self.base.p as f64;
        (0..self.base.p)
            .map(|j| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * (x + j as f64 / p)).sin())
            .collect()
    }

    /// `Gamma(x) = Sigma(x) beta(x)`.
    pub fn true_gamma(&self, x: f64) -> Result<Vec<f64>> {
        let sigma = true_cov(&self.base, x)?;
        let beta = self.true_beta(x);
        Ok((0..self.base.p)
            .map(|j| (0..self.base.p).map(|k| sigma.get(j, k) * beta[k]).sum())
            .collect())
    }

    pub fn generate_replicate(&self, replicate: u64) -> Result<(ObservationSet, OutcomeSet)> {
        let data = generate_replicate(&self.base, replicate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.base.seed);
        rng.set_stream(OUTCOME_STREAM + replicate);
        let scores = (0..data.n())
            .map(|i| {
                let x = data.times()[i];
                let mu = true_mean(&self.base, x);
                let beta = self.true_beta(x);
                let signal: f64 = (0..self.base.p)
                    .map(|j| beta[j] * (data.responses()[(i, j)] - mu[j]))
                    .sum();
                self.baseline + signal + self.noise_sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Ok((data, OutcomeSet::new(scores, self.baseline)?))
    }
}
