//! Nabla discrete fractional calculus: rising-factorial kernels, the
//! fractional sum and difference operators, and contraction-mapping
//! solvers for self-adjoint nabla fractional difference equations whose
//! solutions tend to a nonnegative constant.

pub mod cli;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod operators;
pub mod par;
pub mod solver;

pub use error::{Error, Result};
pub use grid::GridFunction;
pub use kernel::{cumulative_kernel, kernel_weights, rising_factorial, KernelWeights};
pub use solver::{
    ContractionReport, LinearProblem, Metric, NonlinearProblem, SolverConfig, SolverReport,
};
