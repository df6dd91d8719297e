use thiserror::Error;

/// Errors raised by the model, solver and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// `M = σ₁σ₁' + σ₂σ₂'` (or a matrix derived from it) is not positive definite.
    #[error("degenerate point t={t}, z={z:?}: smallest eigenvalue {min_eigenvalue:e}")]
    Degenerate {
        t: f64,
        z: Vec<f64>,
        min_eigenvalue: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time step {dt:e} exceeds the explicit stability limit {dt_max:e}")]
    Cfl { dt: f64, dt_max: f64 },

    #[error("solver diverged at time layer {layer} (t={t})")]
    Divergence { layer: usize, t: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
