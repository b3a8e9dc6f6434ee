use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::trainer::TrainReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hermite order {0} is not available for this activation")]
    UnsupportedOrder(usize),
    #[error("quadrature did not converge for coefficient {k}: successive estimates differ by {diff:e}")]
    QuadratureNonConvergence { k: usize, diff: f64 },
    #[error("kernel argument {0} lies outside [-1, 1]")]
    Domain(f64),
    #[error("kernel derivative is singular at {0}")]
    Singularity(f64),
    #[error("row {row} has norm {norm:e}, cannot normalize")]
    DegenerateRow { row: usize, norm: f64 },
    #[error("row {row} of the encoder is not unit norm (|b| = {norm})")]
    NotUnitRow { row: usize, norm: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("activation has c1 = 0; the bound is undefined")]
    DegenerateSeries,
    #[error("{0}")]
    Regime(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("initial encoder is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("projected gradient descent diverged after {} iterations", .0.iterations)]
    Diverged(Box<Trajectory>),
    #[error("training diverged (non-finite or degenerate weights at step {})", .0.steps_run)]
    TrainingDiverged(Box<TrainReport>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
