use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Too few observations inside the kernel window at `x`.
    #[error("degenerate kernel window at x = {x} (bandwidth {bandwidth}): {reason}")]
    DegenerateWindow {
        x: f64,
        bandwidth: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("symmetric eigensolver did not converge")]
    EigFailure,

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose")]
    NotSymmetric { row: usize, col: usize },

    #[error("diagonal entry {index} = {value} is not above the floor {floor}")]
    DegenerateDiagonal { index: usize, value: f64, floor: f64 },

    #[error("normalized entry ({row}, {col}) = {value} lies outside [-1, 1]")]
    NotACovariance { row: usize, col: usize, value: f64 },

    #[error("mean curve cannot be evaluated at x = {x}: outside grid [{lo}, {hi}]")]
    MeanNotEvaluable { x: f64, lo: f64, hi: f64 },

    #[error("every bandwidth or ridge candidate produced a degenerate fit")]
    AllCandidatesDegenerate,

    #[error("linear system is singular (smallest eigenvalue {min_eigenvalue})")]
    SingularSystem { min_eigenvalue: f64 },

    #[error("invalid repeated-observation design: {0}")]
    InvalidDesign(String),

    #[error("quadrature grid has {points} points; at least {required} are required")]
    GridTooCoarse { points: usize, required: usize },

    #[error("only {available} positive eigenvalues; {requested} components requested")]
    RankDeficient { requested: usize, available: usize },

    #[error("estimation failed at {} grid point(s); first at x = {}: {}", .0.len(), .0[0].0, .0[0].1)]
    GridFailures(Vec<(f64, Error)>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("benchmark cell p = {p}, n = {n}: {source}")]
    BenchCell {
        p: usize,
        n: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that come from the numerics rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::DegenerateWindow { .. }
            | Error::EigFailure
            | Error::DegenerateDiagonal { .. }
            | Error::NotACovariance { .. }
            | Error::MeanNotEvaluable { .. }
            | Error::AllCandidatesDegenerate
            | Error::SingularSystem { .. }
            | Error::RankDeficient { .. } => true,
            Error::GridFailures(failures) => failures.iter().all(|(_, e)| e.is_numerical()),
            Error::BenchCell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
