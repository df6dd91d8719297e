//! Euler–Maruyama simulation of the state, wealth, tilted and dual dynamics,
//! and the Monte Carlo estimators built on them.
//!
//! Path `i` draws its noise from the ChaCha8 stream `i` of the configured
//! seed (stream `i/2` with opposite signs for antithetic pairs), so every
//! path is reproducible independently of how paths are scheduled. Sample
//! statistics are reduced pairwise in path order.

mod controls;
mod estimators;

pub use controls::{
    ConstantControl, ConstantPolicy, Control, MarkovControl, Policy, ShiftedControl, ShiftedPolicy,
};
pub use estimators::{
    admissibility_diagnostic, dual_samples, estimate_dual, estimate_dual_gradient, estimate_dual_value,
    estimate_utility_direct, estimate_utility_girsanov, simulate_state, AdmissibilityReport, DualSamples,
    Measure, PathBatch,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    #[serde(default)]
    pub antithetic: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::Config(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if self.n_steps < 1 {
            return Err(Error::Config("need at least one time step".into()));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "antithetic sampling needs an even path count, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }

    /// Number of independent samples: paths, or antithetic pairs.
    pub fn samples(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

/// Where an estimate was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t0: f64,
    pub z0: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimator: String,
    pub mean: f64,
    /// Sample standard deviation over `√samples`.
    pub stderr: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub model: String,
    pub point: EvalPoint,
    /// Independent samples behind the mean (antithetic pairs count once).
    pub samples: usize,
    /// Paths dropped because the state or coefficients became non-finite.
    pub flagged_paths: usize,
    /// Fraction of path steps evaluated outside the policy or control grid.
    pub outside_fraction: f64,
}

impl Estimate {
    /// `|self - other| / √(se₁² + se₂²)`; zero when both agree exactly.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        z_score(self.mean, self.stderr, other.mean, other.stderr)
    }
}

pub fn z_score(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let diff = (m1 - m2).abs();
    let se = (s1 * s1 + s2 * s2).sqrt();
    if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        diff / se
    }
}

/// Gaussian increments for one path.
pub(crate) struct PathNoise {
    rng: ChaCha8Rng,
    scale: f64,
}

impl PathNoise {
    pub fn fill(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            let g: f64 = self.rng.sample(StandardNormal);
            *o = self.scale * g;
        }
    }
}

/// Runs `f` once per path, in parallel, returning results in path order.
pub(crate) fn run_paths<T: Send>(cfg: &SimConfig, dt: f64, f: impl Fn(&mut PathNoise) -> T + Sync) -> Vec<T> {
    let root = dt.sqrt();
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let (stream, sign) = if cfg.antithetic {
                (i / 2, if i % 2 == 0 { 1.0 } else { -1.0 })
            } else {
                (i, 1.0)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream as u64);
            f(&mut PathNoise { rng, scale: sign * root })
        })
        .collect()
}

/// Sum in a fixed binary-tree order.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Mean and standard error, computed on deviations from the first sample
/// so that identical samples give exactly that value and zero error.
pub(crate) fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let shift = samples[0];
    let dev: Vec<f64> = samples.iter().map(|s| s - shift).collect();
    let dbar = pairwise_sum(&dev) / n as f64;
    if n < 2 {
        return (shift + dbar, f64::NAN);
    }
    let sq: Vec<f64> = dev.iter().map(|d| (d - dbar) * (d - dbar)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (shift + dbar, (var / n as f64).sqrt())
}
