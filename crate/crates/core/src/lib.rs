//! Bounded solutions of second-order nonlinear neutral difference equations
//!
//! ```text
//! Δ(r_n (Δ(x_n + p_n x_{n-k}))^{γ_n}) + q_n x_n^α + a_n f(x_{n+1}) = 0
//! ```
//!
//! via a fixed-point operator on a finite window, with hypothesis checks,
//! contraction and noncompactness diagnostics, and parameter sweeps.

pub mod analysis;
pub mod equation;
pub mod error;
pub mod expr;
pub mod fixed_point_solver;
pub mod hypothesis_checker;
pub mod parameter_dependence;
pub mod sequence_model;

pub use expr::{EvalError, ParseError};
pub use sequence_model::{signed_pow, tail_sum, GammaSpec, OddRational, ScalarFn, SequenceExpr, TailMode, TailPolicy, TailSum};
