//! Backward finite-difference solver for the log-transformed HJB equation
//!
//! ```text
//! -u_t - ½ tr(ΣΣ' D²u) + H(t, z, u_z) = 0,    u(T, ·) = 0,
//! ```
//!
//! together with residual, policy and growth diagnostics.

mod diagnostics;
mod export;
mod field;
mod grid;
mod operators;
mod solver;
mod stencil;

pub use field::{FieldMeta, ValueField};
pub use grid::{Axis, Grid};
pub use solver::{solve_semilinear, stable_time_step, BoundaryScheme, SolverConfig, MAX_POWER};
pub use diagnostics::{
    cutoff_convergence, extract_policy, growth_diagnostics, growth_spread, residual, CutoffRow, CutoffTable,
    GrowthReport, PolicyField, ResidualReport,
};
pub use export::{read_binary, write_binary, write_csv};
