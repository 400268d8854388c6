//! Solvers and benchmark problems for composite variational inequalities
//! `R(x) = P(x) + Q(x) = 0`, where `Q` is monotone and Lipschitz and `P` is
//! Lipschitz but possibly non-monotone.
//!
//! The crate provides:
//!
//! - [`operators`]: vector fields with oracle counters, the [`CompositeVI`]
//!   problem model, feasible-set projections and sampled assumption probes.
//! - [`solvers`]: extragradient sliding (the expensive operator `P` is frozen
//!   while an inner loop solves a strongly monotone subproblem in `Q`) and the
//!   classical extragradient baseline.
//! - [`problems`]: the bilinear saddle problem and the adversarial logistic /
//!   non-linear least squares saddle problems.
//! - [`data`]: LibSVM parsing, label mapping and subsampling.

pub mod data;
pub mod error;
pub mod operators;
pub mod problems;
pub mod seeding;
pub mod solvers;

pub use error::{Error, Result};
pub use operators::{CompositeVI, ConstraintSet, OperatorHandle, OracleCounter, Vector};
pub use solvers::{
    extragradient_solve, sliding_solve, theorem_bound, InnerConfig, InnerMethod, IterateRecord,
    RunResult, SlidingParams,
};
