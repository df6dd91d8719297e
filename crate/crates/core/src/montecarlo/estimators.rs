use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::controls::{Control, Policy};
use super::{mean_stderr, pairwise_sum, run_paths, EvalPoint, Estimate, PathNoise, SimConfig};
use crate::error::{Error, Result};
use crate::hamiltonian::{assemble_quadratic, running_cost, QuadraticForm};
use crate::model::ModelSpec;
use crate::oracle::FdStep;

/// Largest tolerated share of flagged paths.
const MAX_FLAGGED: f64 = 0.01;
/// Largest tolerated share of path steps outside the policy grid.
const MAX_OUTSIDE: f64 = 0.05;

/// Probability measure under which the state is simulated.
#[derive(Clone, Copy)]
pub enum Measure<'a> {
    /// `dX = μ̃₁ dt + σ dW̃`, `dY = μ₂ dt + dW`.
    Physical,
    /// Drifts shifted by `a σσ'π` and `a σ₂'π`.
    Tilted(&'a dyn Policy),
    /// `dZ = ν dt + Σ dW̄`.
    Dual(&'a dyn Control),
}

/// Terminal states of a simulated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub dim: usize,
    /// `dim` coordinates per surviving path, in path order.
    pub terminal: Vec<f64>,
    pub flagged: usize,
    pub outside_steps: usize,
}

impl PathBatch {
    pub fn paths(&self) -> usize {
        self.terminal.len() / self.dim
    }

    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.terminal.iter().skip(k).step_by(self.dim).copied().collect()
    }
}

struct Setup {
    a: f64,
    n: usize,
    d: usize,
    noise: usize,
    dt: f64,
}

fn setup(model: &ModelSpec, t0: f64, z0: &[f64], cfg: &SimConfig) -> Result<Setup> {
    cfg.validate()?;
    let dims = model.dims();
    if z0.len() != dims.state() {
        return Err(Error::Config(format!("z0 has {} coordinates, expected {}", z0.len(), dims.state())));
    }
    if !(t0 < model.horizon()) || t0 < 0.0 {
        return Err(Error::Config(format!("t0 = {t0} must lie in [0, T) with T = {}", model.horizon())));
    }
    Ok(Setup {
        a: model.power(),
        n: dims.n,
        d: dims.d,
        noise: dims.noise(),
        dt: (model.horizon() - t0) / cfg.n_steps as f64,
    })
}

/// State of one primal path at the left end of a step.
struct PrimalStep<'s> {
    z: &'s [f64],
    pi: &'s [f64],
    /// `σ'π`.
    sigma_pi: &'s [f64],
    /// `μ₁ = μ̃₁ + β`.
    mu1: &'s [f64],
    dw: &'s [f64],
}

struct PathStatus {
    ok: bool,
    outside: usize,
}

/// Euler–Maruyama under the physical or tilted measure, calling `visit` with
/// left-endpoint quantities before every step and `at_step_end` after it.
#[allow(clippy::too_many_arguments)]
fn walk_primal(
    model: &ModelSpec,
    s: &Setup,
    policy: Option<&dyn Policy>,
    tilt: bool,
    t0: f64,
    z0: &[f64],
    steps: usize,
    noise: &mut PathNoise,
    mut visit: impl FnMut(&PrimalStep),
    mut at_step_end: impl FnMut(usize, &[f64]),
) -> (PathStatus, Vec<f64>) {
    let mut z = z0.to_vec();
    let mut pi = vec![0.0; s.n];
    let mut sigma_pi = vec![0.0; s.noise];
    let mut mu1 = vec![0.0; s.n];
    let mut dw = vec![0.0; s.noise];
    let mut outside = 0;
    for k in 0..steps {
        let t = t0 + k as f64 * s.dt;
        let sigma: DMatrix<f64> = model.sigma(t, &z);
        let mu1_tilde = model.mu1_tilde(t, &z);
        let mu2 = model.mu2(t, &z);
        if let Some(p) = policy {
            if p.weights(t, &z, &mut pi) {
                outside += 1;
            }
        }
        for (c, out) in sigma_pi.iter_mut().enumerate() {
            *out = (0..s.n).map(|i| sigma[(i, c)] * pi[i]).sum();
        }
        for i in 0..s.n {
            let beta = 0.5 * sigma.row(i).norm_squared();
            mu1[i] = mu1_tilde[i] + beta;
        }
        noise.fill(&mut dw);
        visit(&PrimalStep { z: &z, pi: &pi, sigma_pi: &sigma_pi, mu1: &mu1, dw: &dw });
        for i in 0..s.n {
            let mut drift = mu1_tilde[i];
            if tilt {
                drift += s.a * (0..s.noise).map(|c| sigma[(i, c)] * sigma_pi[c]).sum::<f64>();
            }
            let diffusion: f64 = (0..s.noise).map(|c| sigma[(i, c)] * dw[c]).sum();
            z[i] += drift * s.dt + diffusion;
        }
        for j in 0..s.d {
            let mut drift = mu2[j];
            if tilt {
                drift += s.a * sigma_pi[s.noise - s.d + j];
            }
            z[s.n + j] += drift * s.dt + dw[s.noise - s.d + j];
        }
        if z.iter().any(|v| !v.is_finite()) {
            return (PathStatus { ok: false, outside }, z);
        }
        at_step_end(k, &z);
    }
    (PathStatus { ok: true, outside }, z)
}

/// Per-path scalar or vector results reduced into samples, pairing
/// antithetic partners.
struct Collected {
    width: usize,
    samples: Vec<f64>,
    flagged: usize,
    outside: usize,
}

impl Collected {
    fn new(cfg: &SimConfig, width: usize, paths: Vec<(PathStatus, Vec<f64>)>) -> Result<Collected> {
        let flagged = paths.iter().filter(|(st, v)| !st.ok || v.iter().any(|x| !x.is_finite())).count();
        if flagged as f64 > MAX_FLAGGED * cfg.n_paths as f64 {
            return Err(Error::Simulation(format!(
                "{flagged} of {} paths produced non-finite values",
                cfg.n_paths
            )));
        }
        let outside = paths.iter().map(|(st, _)| st.outside).sum();
        let usable = |(st, v): &(PathStatus, Vec<f64>)| st.ok && v.iter().all(|x| x.is_finite());
        let mut samples = Vec::with_capacity(cfg.samples() * width);
        if cfg.antithetic {
            for pair in paths.chunks(2) {
                if usable(&pair[0]) && usable(&pair[1]) {
                    samples.extend(pair[0].1.iter().zip(&pair[1].1).map(|(p, q)| 0.5 * (p + q)));
                }
            }
        } else {
            for p in paths.iter().filter(|p| usable(p)) {
                samples.extend_from_slice(&p.1);
            }
        }
        Ok(Collected { width, samples, flagged, outside })
    }

    fn component(&self, k: usize) -> Vec<f64> {
        self.samples.iter().skip(k).step_by(self.width).copied().collect()
    }

    fn check_outside(&self, cfg: &SimConfig) -> Result<f64> {
        let fraction = self.outside as f64 / (cfg.n_paths * cfg.n_steps) as f64;
        if fraction > MAX_OUTSIDE {
            return Err(Error::Simulation(format!(
                "{:.1}% of path steps left the policy grid; enlarge the box",
                100.0 * fraction
            )));
        }
        Ok(fraction)
    }
}

fn estimate(
    name: &str,
    model: &ModelSpec,
    cfg: &SimConfig,
    point: EvalPoint,
    values: &[f64],
    collected: &Collected,
    outside_fraction: f64,
) -> Estimate {
    let (mean, stderr) = mean_stderr(values);
    Estimate {
        estimator: name.to_string(),
        mean,
        stderr,
        n_paths: cfg.n_paths,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        model: model.name().to_string(),
        point,
        samples: values.len(),
        flagged_paths: collected.flagged,
        outside_fraction,
    }
}

/// Simulates `Z` on `[t0, T]` under the given measure.
pub fn simulate_state(model: &ModelSpec, measure: Measure, t0: f64, z0: &[f64], cfg: &SimConfig) -> Result<PathBatch> {
    let s = setup(model, t0, z0, cfg)?;
    let dim = z0.len();
    let paths: Vec<(PathStatus, Vec<f64>)> = match measure {
        Measure::Physical => run_paths(cfg, s.dt, |noise| {
            walk_primal(model, &s, None, false, t0, z0, cfg.n_steps, noise, |_| {}, |_, _| {})
        }),
        Measure::Tilted(policy) => run_paths(cfg, s.dt, |noise| {
            walk_primal(model, &s, Some(policy), true, t0, z0, cfg.n_steps, noise, |_| {}, |_, _| {})
        }),
        Measure::Dual(control) => run_paths(cfg, s.dt, |noise| {
            let (status, z, _) = walk_dual(model, &s, control, t0, z0, cfg.n_steps, noise, |_, _, _, _| Ok(()));
            (status, z)
        }),
    };
    let flagged = paths.iter().filter(|(st, _)| !st.ok).count();
    if flagged as f64 > MAX_FLAGGED * cfg.n_paths as f64 {
        return Err(Error::Simulation(format!("{flagged} of {} paths became non-finite", cfg.n_paths)));
    }
    let outside_steps = paths.iter().map(|(st, _)| st.outside).sum();
    let terminal = paths.into_iter().filter(|(st, _)| st.ok).flat_map(|(_, z)| z).collect();
    Ok(PathBatch { dim, terminal, flagged, outside_steps })
}

/// `E[U(W_T)]` under the physical measure, with log-wealth
/// `∫ (π'μ₁ - ½|σ'π|²) ds + ∫ π'σ dW̃` simulated alongside `Z`.
pub fn estimate_utility_direct(
    model: &ModelSpec,
    policy: &dyn Policy,
    w0: f64,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
) -> Result<Estimate> {
    let s = setup(model, t0, z0, cfg)?;
    check_wealth(w0)?;
    check_assets(policy, &s)?;
    let a = s.a;
    let paths = run_paths(cfg, s.dt, |noise| {
        let mut log_w = 0.0;
        let (status, _) = walk_primal(
            model,
            &s,
            Some(policy),
            false,
            t0,
            z0,
            cfg.n_steps,
            noise,
            |st| {
                let growth: f64 = st.pi.iter().zip(st.mu1).map(|(p, m)| p * m).sum::<f64>()
                    - 0.5 * st.sigma_pi.iter().map(|v| v * v).sum::<f64>();
                let shock: f64 = st.sigma_pi.iter().zip(st.dw).map(|(v, w)| v * w).sum();
                log_w += growth * s.dt + shock;
            },
            |_, _| {},
        );
        (status, vec![(a * log_w).exp()])
    });
    let collected = Collected::new(cfg, 1, paths)?;
    let outside = collected.check_outside(cfg)?;
    let mut est = estimate(
        "utility_direct",
        model,
        cfg,
        EvalPoint { t0, z0: z0.to_vec(), w0: Some(w0) },
        &collected.samples,
        &collected,
        outside,
    );
    scale_utility(&mut est, w0, a);
    Ok(est)
}

/// `(w0^a/a) E^{Q^π}[exp ∫ l ds]` with `l = aπ'μ₁ - a(1-a)/2 |σ'π|²` and
/// `Z` simulated under the tilted measure.
pub fn estimate_utility_girsanov(
    model: &ModelSpec,
    policy: &dyn Policy,
    w0: f64,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
) -> Result<Estimate> {
    let s = setup(model, t0, z0, cfg)?;
    check_wealth(w0)?;
    check_assets(policy, &s)?;
    let a = s.a;
    let paths = run_paths(cfg, s.dt, |noise| {
        let mut integral = 0.0;
        let (status, _) = walk_primal(
            model,
            &s,
            Some(policy),
            true,
            t0,
            z0,
            cfg.n_steps,
            noise,
            |st| {
                let l = a * st.pi.iter().zip(st.mu1).map(|(p, m)| p * m).sum::<f64>()
                    - 0.5 * a * (1.0 - a) * st.sigma_pi.iter().map(|v| v * v).sum::<f64>();
                integral += l * s.dt;
            },
            |_, _| {},
        );
        (status, vec![integral.exp()])
    });
    let collected = Collected::new(cfg, 1, paths)?;
    let outside = collected.check_outside(cfg)?;
    let mut est = estimate(
        "utility_girsanov",
        model,
        cfg,
        EvalPoint { t0, z0: z0.to_vec(), w0: Some(w0) },
        &collected.samples,
        &collected,
        outside,
    );
    scale_utility(&mut est, w0, a);
    Ok(est)
}

/// Multiplies by `w0^a / a` once, after averaging, so that estimates at
/// different initial wealth share every other operation.
fn scale_utility(est: &mut Estimate, w0: f64, a: f64) {
    let scale = w0.powf(a);
    est.mean = scale * (est.mean / a);
    est.stderr = scale * (est.stderr / a.abs());
}

fn check_wealth(w0: f64) -> Result<()> {
    if !(w0 > 0.0 && w0.is_finite()) {
        return Err(Error::Config(format!("initial wealth must be positive, got {w0}")));
    }
    Ok(())
}

fn check_assets(policy: &dyn Policy, s: &Setup) -> Result<()> {
    if policy.assets() != s.n {
        return Err(Error::Config(format!("policy has {} assets, model has {}", policy.assets(), s.n)));
    }
    Ok(())
}

/// Euler–Maruyama for `dZ = ν dt + Σ dW̄`. `visit(t, z, ν, qf)` sees
/// left-endpoint values; an error from it or from the coefficients flags
/// the path.
#[allow(clippy::too_many_arguments)]
fn walk_dual(
    model: &ModelSpec,
    s: &Setup,
    control: &dyn Control,
    t0: f64,
    z0: &[f64],
    steps: usize,
    noise: &mut PathNoise,
    mut visit: impl FnMut(f64, &[f64], &DVector<f64>, &QuadraticForm) -> Result<()>,
) -> (PathStatus, Vec<f64>, Option<Error>) {
    let mut z = z0.to_vec();
    let mut nu = DVector::zeros(z0.len());
    let mut dw = vec![0.0; s.noise];
    let mut outside = 0;
    for k in 0..steps {
        let t = t0 + k as f64 * s.dt;
        let coeffs = match model.coefficients(t, &z) {
            Ok(c) => c,
            Err(e) => return (PathStatus { ok: false, outside }, z, Some(e)),
        };
        let qf = match assemble_quadratic(&coeffs, s.a) {
            Ok(q) => q,
            Err(e) => return (PathStatus { ok: false, outside }, z, Some(e)),
        };
        match control.drift(t, &z, &qf, nu.as_mut_slice()) {
            Ok(true) => outside += 1,
            Ok(false) => {}
            Err(e) => return (PathStatus { ok: false, outside }, z, Some(e)),
        }
        if let Err(e) = visit(t, &z, &nu, &qf) {
            return (PathStatus { ok: false, outside }, z, Some(e));
        }
        noise.fill(&mut dw);
        for i in 0..s.n {
            let diffusion: f64 = (0..s.noise)
                .map(|c| {
                    let sig = if c < s.noise - s.d { coeffs.sigma1[(i, c)] } else { coeffs.sigma2[(i, c + s.d - s.noise)] };
                    sig * dw[c]
                })
                .sum();
            z[i] += nu[i] * s.dt + diffusion;
        }
        for j in 0..s.d {
            z[s.n + j] += nu[s.n + j] * s.dt + dw[s.noise - s.d + j];
        }
        if z.iter().any(|v| !v.is_finite()) {
            return (PathStatus { ok: false, outside }, z, None);
        }
    }
    (PathStatus { ok: true, outside }, z, None)
}

/// `∂_z L(t, z, ν)` for fixed `ν`, from
/// `L = ½ (ν-ℓ)'A⁻¹(ν-ℓ) - k` with central differences of `A⁻¹`, `ℓ` and
/// `k` in `z`.
fn running_cost_gradient(
    model: &ModelSpec,
    a: f64,
    t: f64,
    z: &[f64],
    nu: &DVector<f64>,
    qf: &QuadraticForm,
    out: &mut [f64],
) -> Result<()> {
    let e = nu - &qf.ell;
    let w = qf.solve_a(&e);
    let h = FdStep::Relative(1e-5).at(z);
    let mut probe = z.to_vec();
    for k in 0..z.len() {
        probe[k] = z[k] + h;
        let plus = assemble_quadratic(&model.coefficients(t, &probe)?, a)?;
        probe[k] = z[k] - h;
        let minus = assemble_quadratic(&model.coefficients(t, &probe)?, a)?;
        probe[k] = z[k];
        let d_ell = (&plus.ell - &minus.ell) / (2.0 * h);
        let d_quad = (e.dot(&plus.solve_a(&e)) - e.dot(&minus.solve_a(&e))) / (2.0 * h);
        let d_k = (plus.k - minus.k) / (2.0 * h);
        out[k] = -d_ell.dot(&w) + 0.5 * d_quad - d_k;
    }
    Ok(())
}

/// Per-sample values of `∫ L ds` and, optionally, `∫ L_z ds` along the same
/// dual paths (antithetic pairs averaged).
#[derive(Debug, Clone, PartialEq)]
pub struct DualSamples {
    pub value: Vec<f64>,
    /// `dim` entries per sample when requested.
    pub gradient: Option<Vec<f64>>,
    pub dim: usize,
    pub flagged: usize,
    pub outside_fraction: f64,
}

pub fn dual_samples(
    model: &ModelSpec,
    control: &dyn Control,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
    with_gradient: bool,
) -> Result<DualSamples> {
    let s = setup(model, t0, z0, cfg)?;
    let dim = z0.len();
    if control.dim() != dim {
        return Err(Error::Config(format!("control has dimension {}, state has {dim}", control.dim())));
    }
    let width = if with_gradient { 1 + dim } else { 1 };
    let paths = run_paths(cfg, s.dt, |noise| {
        let mut acc = vec![0.0; width];
        let mut lz = vec![0.0; dim];
        let (status, _, _) = walk_dual(model, &s, control, t0, z0, cfg.n_steps, noise, |t, z, nu, qf| {
            acc[0] += running_cost(qf, nu) * s.dt;
            if with_gradient {
                running_cost_gradient(model, s.a, t, z, nu, qf, &mut lz)?;
                for (a, g) in acc[1..].iter_mut().zip(&lz) {
                    *a += g * s.dt;
                }
            }
            Ok(())
        });
        (status, acc)
    });
    let collected = Collected::new(cfg, width, paths)?;
    let outside_fraction = collected.check_outside(cfg)?;
    let value = collected.component(0);
    let gradient = with_gradient.then(|| {
        let per: Vec<Vec<f64>> = (1..width).map(|k| collected.component(k)).collect();
        (0..value.len()).flat_map(|i| per.iter().map(move |c| c[i]).collect::<Vec<_>>()).collect()
    });
    Ok(DualSamples { value, gradient, dim, flagged: collected.flagged, outside_fraction })
}

fn dual_estimate(name: &str, model: &ModelSpec, cfg: &SimConfig, t0: f64, z0: &[f64], values: &[f64], samples: &DualSamples) -> Estimate {
    let (mean, stderr) = mean_stderr(values);
    Estimate {
        estimator: name.to_string(),
        mean,
        stderr,
        n_paths: cfg.n_paths,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        model: model.name().to_string(),
        point: EvalPoint { t0, z0: z0.to_vec(), w0: None },
        samples: values.len(),
        flagged_paths: samples.flagged,
        outside_fraction: samples.outside_fraction,
    }
}

/// `E ∫_{t0}^T L(s, Z_s, ν_s) ds` under the dual dynamics.
pub fn estimate_dual_value(
    model: &ModelSpec,
    control: &dyn Control,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
) -> Result<Estimate> {
    let samples = dual_samples(model, control, t0, z0, cfg, false)?;
    Ok(dual_estimate("dual_value", model, cfg, t0, z0, &samples.value, &samples))
}

/// Pathwise `E ∫ L_z(s, Z_s, ν_s) ds`, one estimate per state coordinate.
pub fn estimate_dual_gradient(
    model: &ModelSpec,
    control: &dyn Control,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>> {
    Ok(estimate_dual(model, control, t0, z0, cfg)?.1)
}

/// Dual value and pathwise gradient from one set of paths.
pub fn estimate_dual(
    model: &ModelSpec,
    control: &dyn Control,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
) -> Result<(Estimate, Vec<Estimate>)> {
    let samples = dual_samples(model, control, t0, z0, cfg, true)?;
    let grad = samples.gradient.as_ref().expect("gradient requested");
    let value = dual_estimate("dual_value", model, cfg, t0, z0, &samples.value, &samples);
    let gradient = (0..samples.dim)
        .map(|k| {
            let comp: Vec<f64> = grad.iter().skip(k).step_by(samples.dim).copied().collect();
            dual_estimate(&format!("dual_gradient[{k}]"), model, cfg, t0, z0, &comp, &samples)
        })
        .collect();
    Ok((value, gradient))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// `max |σ'π|² / (1 + |Y|²)` over paths and steps.
    pub risk_ratio: f64,
    pub epsilon: f64,
    /// `(t, E[exp(ε |Y_t|²)])` at the quarter points of `[t0, T]`.
    pub moments: Vec<(f64, f64)>,
    pub diverged: bool,
    /// Sampled proxy only: integrability over a continuum of times is not established.
    pub note: String,
}

pub fn admissibility_diagnostic(
    model: &ModelSpec,
    policy: &dyn Policy,
    t0: f64,
    z0: &[f64],
    cfg: &SimConfig,
    epsilon: f64,
) -> Result<AdmissibilityReport> {
    let s = setup(model, t0, z0, cfg)?;
    check_assets(policy, &s)?;
    let checkpoints: Vec<usize> = (1..=4).map(|q| (q * cfg.n_steps / 4).max(1) - 1).collect();
    let paths = run_paths(cfg, s.dt, |noise| {
        let mut worst = 0.0_f64;
        let mut moments = vec![0.0; checkpoints.len()];
        let (status, _) = walk_primal(
            model,
            &s,
            Some(policy),
            false,
            t0,
            z0,
            cfg.n_steps,
            noise,
            |st| {
                let y2: f64 = st.z[s.n..].iter().map(|v| v * v).sum();
                let risk: f64 = st.sigma_pi.iter().map(|v| v * v).sum();
                worst = worst.max(risk / (1.0 + y2));
            },
            |k, z| {
                for (slot, &c) in moments.iter_mut().zip(&checkpoints) {
                    if k == c {
                        *slot = (epsilon * z[s.n..].iter().map(|v| v * v).sum::<f64>()).exp();
                    }
                }
            },
        );
        (status, worst, moments)
    });
    let ok: Vec<_> = paths.iter().filter(|p| p.0.ok).collect();
    let risk_ratio = ok.iter().map(|p| p.1).fold(0.0, f64::max);
    let moments: Vec<(f64, f64)> = checkpoints
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let vals: Vec<f64> = ok.iter().map(|p| p.2[i]).collect();
            (t0 + (c + 1) as f64 * s.dt, pairwise_sum(&vals) / vals.len().max(1) as f64)
        })
        .collect();
    let diverged = ok.len() < paths.len() || !risk_ratio.is_finite() || moments.iter().any(|m| !m.1.is_finite());
    Ok(AdmissibilityReport {
        risk_ratio,
        epsilon,
        moments,
        diverged,
        note: "sampled, not proved".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinModel, CatalogOptions};
    use crate::montecarlo::{ConstantControl, ConstantPolicy};
    use std::collections::BTreeMap;

    fn merton() -> ModelSpec {
        builtin_model(BuiltinModel::MertonConstant, &BTreeMap::new(), CatalogOptions::default()).unwrap()
    }

    fn cfg(n_paths: usize, n_steps: usize) -> SimConfig {
        SimConfig { seed: 42, n_paths, n_steps, antithetic: false }
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let model = ModelSpec::builder("still", 1, 1, 1)
            .mu1_tilde(|_, _| DVector::from_element(1, 0.03))
            .sigma1(|_, _| DMatrix::zeros(1, 1))
            .sigma2(|_, _| DMatrix::zeros(1, 1))
            .mu2(|_, _| DVector::zeros(1))
            .build();
        // σ = 0 makes M singular, which only the dual walker inspects.
        let model = model.unwrap();
        let batch = simulate_state(&model, Measure::Physical, 0.25, &[1.0, 0.0], &cfg(16, 10)).unwrap();
        for x in batch.coordinate(0) {
            assert!((x - (1.0 + 0.03 * 0.75)).abs() < 1e-14);
        }
    }

    #[test]
    fn merton_log_price_mean() {
        let batch = simulate_state(&merton(), Measure::Physical, 0.0, &[0.0, 0.0], &cfg(20_000, 4)).unwrap();
        let (mean, se) = mean_stderr(&batch.coordinate(0));
        assert!((mean - 0.08).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn dual_zero_drift_variance() {
        let control = ConstantControl(vec![0.0, 0.0]);
        let c = cfg(20_000, 4);
        let batch = simulate_state(&merton(), Measure::Dual(&control), 0.5, &[0.0, 0.0], &c).unwrap();
        let sq: Vec<f64> = batch.coordinate(0).iter().map(|x| x * x).collect();
        let (var, se) = mean_stderr(&sq);
        assert!((var - 0.04 * 0.5).abs() < 3.0 * se, "{var} ± {se}");
    }

    #[test]
    fn zero_policy_gives_exact_utility() {
        let policy = ConstantPolicy::zero(1);
        for est in [
            estimate_utility_direct(&merton(), &policy, 4.0, 0.0, &[0.0, 0.0], &cfg(64, 8)).unwrap(),
            estimate_utility_girsanov(&merton(), &policy, 4.0, 0.0, &[0.0, 0.0], &cfg(64, 8)).unwrap(),
        ] {
            assert_eq!(est.mean, 4.0);
            assert_eq!(est.stderr, 0.0);
        }
    }

    #[test]
    fn merton_girsanov_is_deterministic() {
        let policy = ConstantPolicy(vec![5.0]);
        let est = estimate_utility_girsanov(&merton(), &policy, 1.0, 0.0, &[0.0, 0.0], &cfg(32, 256)).unwrap();
        assert_eq!(est.stderr, 0.0);
        assert!((est.mean - 2.0 * 0.125f64.exp()).abs() < 1e-12, "{}", est.mean);
    }

    #[test]
    fn merton_direct_matches_closed_form() {
        let policy = ConstantPolicy(vec![5.0]);
        let c = SimConfig { antithetic: true, ..cfg(20_000, 16) };
        let est = estimate_utility_direct(&merton(), &policy, 1.0, 0.0, &[0.0, 0.0], &c).unwrap();
        assert!((est.mean - 2.0 * 0.125f64.exp()).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn homogeneity_is_exact() {
        let policy = ConstantPolicy(vec![3.0]);
        let c = cfg(500, 16);
        let one = estimate_utility_direct(&merton(), &policy, 1.0, 0.0, &[0.0, 0.0], &c).unwrap();
        let two = estimate_utility_direct(&merton(), &policy, 2.0, 0.0, &[0.0, 0.0], &c).unwrap();
        assert_eq!(two.mean, 2f64.powf(0.5) * one.mean);
    }

    #[test]
    fn merton_dual_values() {
        let model = merton();
        let c = cfg(64, 32);
        let opt = estimate_dual_value(&model, &ConstantControl(vec![0.18, 0.0]), 0.25, &[0.0, 0.0], &c).unwrap();
        assert_eq!(opt.stderr, 0.0);
        assert!((opt.mean + 0.125 * 0.75).abs() < 1e-14);
        let zero = estimate_dual_value(&model, &ConstantControl(vec![0.0, 0.0]), 0.25, &[0.0, 0.0], &c).unwrap();
        assert!((zero.mean - 0.0775 * 0.75).abs() < 1e-14);
        let grad = estimate_dual_gradient(&model, &ConstantControl(vec![0.3, -0.1]), 0.0, &[0.0, 0.0], &c).unwrap();
        for g in grad {
            assert_eq!(g.mean, 0.0);
            assert_eq!(g.stderr, 0.0);
        }
    }

    #[test]
    fn merton_admissibility() {
        let report =
            admissibility_diagnostic(&merton(), &ConstantPolicy(vec![5.0]), 0.0, &[0.0, 0.0], &cfg(200, 16), 0.05)
                .unwrap();
        assert!(report.risk_ratio <= 1.0 + 1e-12 && report.risk_ratio > 0.5);
        assert!(!report.diverged);
        assert_eq!(report.moments.len(), 4);
        assert!((report.moments[3].0 - 1.0).abs() < 1e-12);
        let zero = admissibility_diagnostic(&merton(), &ConstantPolicy::zero(1), 0.0, &[0.0, 0.0], &cfg(20, 4), 0.05)
            .unwrap();
        assert_eq!(zero.risk_ratio, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let policy = ConstantPolicy(vec![1.0]);
        assert!(estimate_utility_direct(&merton(), &policy, 0.0, 0.0, &[0.0, 0.0], &cfg(8, 2)).is_err());
        assert!(estimate_utility_direct(&merton(), &policy, 1.0, 1.0, &[0.0, 0.0], &cfg(8, 2)).is_err());
        assert!(estimate_utility_direct(&merton(), &ConstantPolicy(vec![1.0, 2.0]), 1.0, 0.0, &[0.0, 0.0], &cfg(8, 2))
            .is_err());
    }
}
