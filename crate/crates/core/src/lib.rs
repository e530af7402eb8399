//! Numerical laboratory for backward error analysis of adaptive gradient methods.
//!
//! The crate implements the discrete RMSProp and Adam iterations (with the
//! stability constant `eps` inside or outside the square root), the piecewise
//! first-order modified ODEs whose solutions track those iterations to
//! `O(h^2)`, the closed-form bias terms of the full-batch flow, and the tooling
//! needed to check these claims numerically:
//!
//! - [`losses`]: batch loss sequences with analytic gradients and Hessians.
//! - [`discrete_optim`]: exact update rules and trajectory recording.
//! - [`modified_flow`]: flow terms, right-hand sides, RK4 integration, bias
//!   formulas and penalty curves.
//! - [`analysis`]: trajectory errors, convergence-order fits, perturbed
//!   one-norm diagnostics, heavy-ball and linearization checks.
//! - [`bounds`]: explicit constants of the global error bounds.

// Negated comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bounds;
pub mod discrete_optim;
mod error;
pub mod linalg;
pub mod losses;
pub mod modified_flow;

pub use error::{Error, Result};
pub use linalg::{Matrix, Point};
