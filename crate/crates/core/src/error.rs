use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("evaluator `{evaluator}` returned {got}, expected {expected}")]
    DimensionMismatch {
        evaluator: &'static str,
        expected: String,
        got: String,
    },
    #[error("missing evaluator `{0}`")]
    MissingEvaluator(&'static str),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("trajectory and control are defined on different grids")]
    GridMismatch,
    #[error("time {0} is not a node of the grid")]
    NotOnGrid(f64),
    #[error("integration diverged at node {node} ({what})")]
    Diverged { node: usize, what: &'static str },
    #[error("finite-difference integration diverged under perturbation {0}")]
    PerturbationDiverged(String),
    #[error("control is not admissible: terminal constraint residual {residual:.3e}")]
    Inadmissible { residual: f64 },
    #[error("control value {value} on channel {channel} at node {node} violates bounds")]
    BoundViolation { node: usize, channel: usize, value: f64 },
    #[error("transition matrix is ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("invalid weight schedule: {0}")]
    InvalidWeights(String),
    #[error("augmented state layout mismatch: expected dimension {expected}, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("objective became non-finite")]
    NonFiniteObjective,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
