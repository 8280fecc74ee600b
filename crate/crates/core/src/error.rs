use thiserror::Error;

use crate::expr::EvalError;
use crate::fixed_point_solver::IterationStats;
use crate::sequence_model::{GammaError, NonFiniteInput, TailError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid equation: {0}")]
    InvalidSpec(String),
    #[error("coefficient {name} at n = {n}: {source}")]
    Coefficient { name: &'static str, n: usize, source: EvalError },
    #[error("r vanishes at n = {0}")]
    ZeroR(usize),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error("f({x}): {source}")]
    Function { x: f64, source: EvalError },
    #[error("{what}: {source}")]
    Tail { what: &'static str, source: TailError },
    #[error("|p_n| >= 1 at the end of the window (tail max {tail_max}); the neutral coefficient is not contractive")]
    PNotContractive { tail_max: f64 },
    #[error("hypotheses not satisfied: {0}")]
    Hypothesis(String),
    #[error("window ends at {window_end} but at least {needed} is required")]
    WindowTooShort { needed: usize, window_end: usize },
    #[error("index {n} outside the window [{start}, {end}]")]
    OutOfWindow { n: usize, start: usize, end: usize },
    #[error("window starts at {found}, expected {expected}")]
    Misaligned { expected: usize, found: usize },
    #[error("value {value} at n = {n} is outside the ball of radius {d}")]
    OutsideBall { n: usize, value: f64, d: f64 },
    #[error("non-finite value while computing {0}")]
    NonFinite(&'static str),
    #[error("tail truncation error {budget:e} exceeds tol/10 = {limit:e}; enlarge the window")]
    TailBudget { budget: f64, limit: f64 },
    #[error("no convergence after {} iterations (last update {:e})", .0.iterations, .0.final_delta)]
    NotConverged(Box<IterationStats>),
    #[error("iteration diverged: update grew for 5 consecutive steps (last update {:e})", .0.final_delta)]
    Diverged(Box<IterationStats>),
    #[error("backward extension needs |p_n| >= 1e-12 but p is too small at n = {0:?}")]
    SmallP(Vec<usize>),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("family member {index}: {reason}")]
    FamilyMember { index: usize, reason: String },
}

impl From<NonFiniteInput> for Error {
    fn from(_: NonFiniteInput) -> Self {
        Error::NonFinite("a signed power")
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
