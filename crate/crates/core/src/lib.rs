//! Optimal investment with power utility in a market driven by an
//! exogenous stochastic factor.
//!
//! The crate covers the model coefficients and their structural checks, the
//! quadratic Hamiltonian and its ball-truncated variant, a finite-difference
//! solver for the resulting semilinear HJB equation, and Monte Carlo
//! estimators that verify the solution through the primal, tilted and dual
//! representations of the value function.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hamiltonian;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod pde;

pub use error::{Error, Result};
