//! Sampled diagnostics for the standing assumptions on the coefficients.
//!
//! Global bounds on black-box functions cannot be proved numerically; every
//! record here is a maximum over quasi-random samples of a box and the
//! report says so.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{min_eigenvalue, spectral_norm, ModelSpec};
use crate::oracle::{fd_jacobian, FdStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionId {
    A1,
    A2,
    B1,
    B2,
    B3,
    B4,
    C1,
}

/// Sampling region `[t₀,t₁] × Π [lowerᵢ, upperᵢ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub t: (f64, f64),
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    /// `x ∈ [-3,3]ⁿ`, `y ∈ [-6,6]ᵈ` over the full horizon.
    pub fn default_for(model: &ModelSpec) -> Self {
        let dims = model.dims();
        let mut lower = vec![-3.0; dims.n];
        lower.extend(std::iter::repeat_n(-6.0, dims.d));
        Self {
            t: (0.0, model.horizon()),
            upper: lower.iter().map(|v| -v).collect(),
            lower,
        }
    }
}

/// User thresholds for the sampled quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionBounds {
    pub a1_gradient: f64,
    pub a2_gradient: f64,
    pub b1_second_derivative: f64,
    pub b2_sigma: f64,
    pub b2_m1_inverse: f64,
    pub b3_growth: f64,
    pub b4_market_price: f64,
    pub c1_gradient: f64,
}

impl Default for ConditionBounds {
    fn default() -> Self {
        Self {
            a1_gradient: 10.0,
            a2_gradient: 10.0,
            b1_second_derivative: 100.0,
            b2_sigma: 10.0,
            b2_m1_inverse: 1e4,
            b3_growth: 10.0,
            b4_market_price: 100.0,
            c1_gradient: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub condition: ConditionId,
    pub expression: String,
    /// Non-finite maxima (e.g. a singular `M₁`) serialize as `null`.
    pub max_value: f64,
    pub argmax_point: SamplePoint,
    pub bound: f64,
    pub samples: usize,
    pub violations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub model: String,
    pub domain: DomainBox,
    pub records: Vec<ConditionRecord>,
    /// Sampled minimum of `1 - |N|`; the adequacy of the margin is left to the user.
    pub min_one_minus_norm_n: f64,
    pub min_one_minus_norm_n_point: SamplePoint,
    pub note: String,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn record(&self, id: ConditionId) -> impl Iterator<Item = &ConditionRecord> {
        self.records.iter().filter(move |r| r.condition == id)
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// Randomly shifted Halton points in `[0,1)^dim`.
pub fn halton_points(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "halton dimension {dim} unsupported");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    let v = radical_inverse(i, PRIMES[k]) + shift[k];
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}

struct Tracker {
    id: ConditionId,
    expression: &'static str,
    bound: f64,
    max: f64,
    at: SamplePoint,
    samples: usize,
    violations: usize,
}

impl Tracker {
    fn new(id: ConditionId, expression: &'static str, bound: f64) -> Self {
        Self {
            id,
            expression,
            bound,
            max: f64::NEG_INFINITY,
            at: SamplePoint { t: f64::NAN, z: Vec::new() },
            samples: 0,
            violations: 0,
        }
    }

    fn push(&mut self, value: f64, t: f64, z: &[f64]) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        self.samples += 1;
        if !(value <= self.bound) {
            self.violations += 1;
        }
        if value > self.max || self.at.z.is_empty() {
            self.max = value;
            self.at = SamplePoint { t, z: z.to_vec() };
        }
    }

    fn finish(self) -> ConditionRecord {
        ConditionRecord {
            condition: self.id,
            expression: self.expression.to_string(),
            max_value: self.max,
            argmax_point: self.at,
            bound: self.bound,
            samples: self.samples,
            violations: self.violations,
            pass: self.violations == 0,
        }
    }
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

fn frobenius(columns: &[Vec<f64>]) -> f64 {
    columns.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Samples every condition over `domain` at `sample_count` quasi-random points.
///
/// Derivatives are central differences with step `1e-5·(1+|z|)`. Failures
/// are recorded, never raised.
pub fn check_conditions(
    model: &ModelSpec,
    domain: &DomainBox,
    sample_count: usize,
    seed: u64,
    bounds: &ConditionBounds,
) -> ConditionReport {
    let dims = model.dims();
    let (n, dim) = (dims.n, dims.state());
    let step = FdStep::Relative(1e-5);

    let mut a1 = Tracker::new(ConditionId::A1, "max(|d_z mu1_tilde|, |d_z sigma|)", bounds.a1_gradient);
    let mut a2 = Tracker::new(ConditionId::A2, "|grad_y mu2|", bounds.a2_gradient);
    let mut b1 = Tracker::new(ConditionId::B1, "|d2_z sigma| (second differences)", bounds.b1_second_derivative);
    let mut b2s = Tracker::new(ConditionId::B2, "|sigma|", bounds.b2_sigma);
    let mut b2m = Tracker::new(ConditionId::B2, "|M1^-1|", bounds.b2_m1_inverse);
    let mut b3 = Tracker::new(ConditionId::B3, "max(|mu1_tilde|, |mu2|)/sqrt(1+|y|)", bounds.b3_growth);
    let mut b4 = Tracker::new(ConditionId::B4, "f + |grad_z f|, f = |M^-1/2 mu1|^2", bounds.b4_market_price);
    let mut c1 = Tracker::new(ConditionId::C1, "|grad_z (sigma2' M^-1 mu1)|/sqrt(1+|y|)", bounds.c1_gradient);
    let mut min_gap = f64::INFINITY;
    let mut min_gap_at = SamplePoint { t: f64::NAN, z: Vec::new() };

    let market_price = |t: f64, z: &[f64]| -> Vec<f64> {
        match model.coefficients(t, z) {
            Ok(c) => vec![c.mu1.dot(&c.solve_m(&c.mu1))],
            Err(_) => vec![f64::NAN],
        }
    };
    let hedge_drift = |t: f64, z: &[f64]| -> Vec<f64> {
        match model.coefficients(t, z) {
            Ok(c) => (c.sigma2.transpose() * c.solve_m(&c.mu1)).iter().copied().collect(),
            Err(_) => vec![f64::NAN; dims.d],
        }
    };

    for u in halton_points(sample_count, dim + 1, seed) {
        let t = domain.t.0 + u[0] * (domain.t.1 - domain.t.0);
        let z: Vec<f64> = (0..dim)
            .map(|k| domain.lower[k] + u[k + 1] * (domain.upper[k] - domain.lower[k]))
            .collect();
        let y_norm = z[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let root_growth = (1.0 + y_norm).sqrt();

        let mu1t_jac = fd_jacobian(|p| model.mu1_tilde(t, p).iter().copied().collect(), &z, step);
        let sigma_jac = fd_jacobian(|p| flatten(&model.sigma(t, p)), &z, step);
        let a1_val = match (&mu1t_jac, &sigma_jac) {
            (Ok(jm), Ok(js)) => frobenius(jm).max(frobenius(js)),
            _ => f64::INFINITY,
        };
        a1.push(a1_val, t, &z);

        let y = z[n..].to_vec();
        let mu2_jac = fd_jacobian(|p| model.mu2(t, &[&z[..n], p].concat()).iter().copied().collect(), &y, step);
        a2.push(mu2_jac.map(|j| frobenius(&j)).unwrap_or(f64::INFINITY), t, &z);

        let sigma0 = flatten(&model.sigma(t, &z));
        let mut second = 0.0_f64;
        for k in 0..dim {
            let h = 1e-4 * (1.0 + z[k].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let sp = flatten(&model.sigma(t, &zp));
            let sm = flatten(&model.sigma(t, &zm));
            for i in 0..sigma0.len() {
                second = second.max(((sp[i] - 2.0 * sigma0[i] + sm[i]) / (h * h)).abs());
            }
        }
        b1.push(second, t, &z);

        b2s.push(spectral_norm(&model.sigma(t, &z)), t, &z);
        let s1 = model.sigma1(t, &z);
        let lambda = min_eigenvalue(&(&s1 * s1.transpose()));
        b2m.push(if lambda > 0.0 { 1.0 / lambda } else { f64::INFINITY }, t, &z);

        let mu1t = model.mu1_tilde(t, &z).norm();
        let mu2 = model.mu2(t, &z).norm();
        b3.push(mu1t.max(mu2) / root_growth, t, &z);

        let f = market_price(t, &z)[0];
        let grad_f = fd_jacobian(|p| market_price(t, p), &z, step);
        b4.push(grad_f.map(|g| f.abs() + frobenius(&g)).unwrap_or(f64::INFINITY), t, &z);

        let grad_h = fd_jacobian(|p| hedge_drift(t, p), &z, step);
        c1.push(grad_h.map(|g| frobenius(&g) / root_growth).unwrap_or(f64::INFINITY), t, &z);

        if let Ok(c) = model.coefficients(t, &z) {
            let gap = 1.0 - c.n_norm();
            if gap < min_gap {
                min_gap = gap;
                min_gap_at = SamplePoint { t, z: z.clone() };
            }
        } else {
            min_gap = f64::NEG_INFINITY;
            min_gap_at = SamplePoint { t, z: z.clone() };
        }
    }

    ConditionReport {
        model: model.name().to_string(),
        domain: domain.clone(),
        records: [a1, a2, b1, b2s, b2m, b3, b4, c1].into_iter().map(Tracker::finish).collect(),
        min_one_minus_norm_n: min_gap,
        min_one_minus_norm_n_point: min_gap_at,
        note: "sampled, not proved".to_string(),
    }
}
