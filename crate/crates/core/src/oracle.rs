//! Reference results that the numerical modules are checked against.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hamiltonian::{running_cost, QuadraticForm};
use crate::model::{halton_points, ModelSpec};

/// Closed-form solution for constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MertonSolution {
    pub k: f64,
    pub horizon: f64,
    pub power: f64,
    /// `M⁻¹μ₁/(1-a)`.
    pub pi_star: DVector<f64>,
}

impl MertonSolution {
    /// `u(t) = -k (T - t)`.
    pub fn u(&self, t: f64) -> f64 {
        -self.k * (self.horizon - t)
    }

    /// `v(t, w) = (w^a/a) e^{k (T-t)}`.
    pub fn v(&self, t: f64, w: f64) -> f64 {
        w.powf(self.power) / self.power * (-self.u(t)).exp()
    }
}

/// With spatially constant coefficients `u_z ≡ 0`, so the HJB equation
/// reduces to `u_t = H(t,z,0) = k`.
pub fn merton_closed_form(model: &ModelSpec) -> Result<MertonSolution> {
    let dims = model.dims();
    let reference = model.coefficients(0.0, &vec![0.0; dims.state()])?;
    let mut worst = 0.0_f64;
    for u in halton_points(100, dims.state() + 1, 0x5eed) {
        let t = u[0] * model.horizon();
        let z: Vec<f64> = u[1..].iter().map(|v| 10.0 * v - 5.0).collect();
        let c = model.coefficients(t, &z)?;
        worst = worst
            .max((&c.mu1_tilde - &reference.mu1_tilde).amax())
            .max((&c.sigma1 - &reference.sigma1).amax())
            .max((&c.sigma2 - &reference.sigma2).amax())
            .max((&c.mu2 - &reference.mu2).amax());
    }
    if worst > 1e-12 {
        return Err(Error::Precondition(format!(
            "model coefficients are not constant (max deviation {worst:e})"
        )));
    }
    let a = model.power();
    let m_inv_mu1 = reference.solve_m(&reference.mu1);
    Ok(MertonSolution {
        k: 0.5 * a / (1.0 - a) * reference.mu1.dot(&m_inv_mu1),
        horizon: model.horizon(),
        power: a,
        pi_star: m_inv_mu1 / (1.0 - a),
    })
}

const BOUNDARY_DIRECTIONS: usize = 10_000;
const MAX_LEVELS: usize = 2_000;

/// Dense search for `sup_{|r̄| ≤ R} (-r̄·r - L(r̄))`.
///
/// Evaluates a `resolution`-per-axis lattice over `[-R, R]^dim` (points
/// outside the ball are pulled radially onto the sphere) plus 10⁴
/// boundary directions, then re-centres the lattice on the best point
/// found, halving its spacing whenever a pass brings no improvement.
pub fn brute_force_hr(qf: &QuadraticForm, r: &DVector<f64>, radius: f64, resolution: usize) -> f64 {
    let dim = qf.dim();
    assert!((1..=3).contains(&dim), "brute force supports 1 to 3 dimensions, got {dim}");
    let resolution = resolution.max(3);
    let objective = |x: &DVector<f64>| -x.dot(r) - running_cost(qf, x);
    let project = |mut x: DVector<f64>| {
        let norm = x.norm();
        if norm > radius {
            x *= radius / norm;
        }
        x
    };

    let mut best = DVector::zeros(dim);
    let mut best_val = objective(&best);
    let consider = |x: DVector<f64>, best: &mut DVector<f64>, best_val: &mut f64| {
        let val = objective(&x);
        if val > *best_val {
            *best_val = val;
            *best = x;
        }
    };

    for x in sphere_directions(dim, BOUNDARY_DIRECTIONS) {
        consider(x * radius, &mut best, &mut best_val);
    }

    let mut centre = DVector::zeros(dim);
    let mut spacing = 2.0 * radius / (resolution - 1) as f64;
    let half = (resolution / 2) as i64;
    for _level in 0..MAX_LEVELS {
        let before = best_val;
        let mut idx = vec![-half; dim];
        loop {
            let mut x = centre.clone();
            for k in 0..dim {
                x[k] += idx[k] as f64 * spacing;
            }
            consider(project(x), &mut best, &mut best_val);
            let mut k = 0;
            while k < dim {
                idx[k] += 1;
                if idx[k] <= half {
                    break;
                }
                idx[k] = -half;
                k += 1;
            }
            if k == dim {
                break;
            }
        }
        // Shrink only once the window stops improving, so narrow ridges
        // (ill-conditioned A) are followed rather than cut short.
        if best_val <= before {
            spacing *= 0.5;
            if spacing < 1e-12 * radius.max(1e-300) {
                break;
            }
        }
        centre = best.clone();
    }
    best_val
}

fn sphere_directions(dim: usize, count: usize) -> Vec<DVector<f64>> {
    match dim {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                DVector::from_vec(vec![theta.cos(), theta.sin()])
            })
            .collect(),
        _ => {
            // Fibonacci lattice on S².
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let zc = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let rho = (1.0 - zc * zc).sqrt();
                    let phi = golden * i as f64;
                    DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin(), zc])
                })
                .collect()
        }
    }
}

/// Step rule for central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    Absolute(f64),
    /// `h = c · (1 + |z|)` with `|z|` the Euclidean norm of the point.
    Relative(f64),
}

impl FdStep {
    pub fn at(&self, point: &[f64]) -> f64 {
        match *self {
            FdStep::Absolute(h) => h,
            FdStep::Relative(c) => c * (1.0 + point.iter().map(|v| v * v).sum::<f64>().sqrt()),
        }
    }
}

/// Central-difference gradient of a scalar field.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], step: FdStep) -> Result<Vec<f64>> {
    let columns = fd_jacobian(|p| vec![f(p)], point, step)?;
    Ok(columns.into_iter().map(|c| c[0]).collect())
}

/// Central-difference Jacobian; entry `k` holds the derivative of every
/// output with respect to coordinate `k`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, point: &[f64], step: FdStep) -> Result<Vec<Vec<f64>>> {
    let h = step.at(point);
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        probe[k] = point[k] + h;
        let plus = f(&probe);
        probe[k] = point[k] - h;
        let minus = f(&probe);
        probe[k] = point[k];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample near {point:?} along axis {k}")));
        }
        out.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{assemble_quadratic, hamiltonian_closed, hamiltonian_truncated};
    use crate::model::{builtin_model, BuiltinModel, CatalogOptions};
    use std::collections::BTreeMap;

    fn merton(a: f64, mu: f64) -> ModelSpec {
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), a);
        p.insert("mu".to_string(), mu);
        builtin_model(BuiltinModel::MertonConstant, &p, CatalogOptions::default()).unwrap()
    }

    #[test]
    fn merton_reference_numbers() {
        let sol = merton_closed_form(&merton(0.5, 0.08)).unwrap();
        assert!((sol.k - 0.125).abs() < 1e-15);
        assert!((sol.u(0.0) + 0.125).abs() < 1e-15);
        assert_eq!(sol.u(1.0), 0.0);
        assert!((sol.v(0.0, 1.0) - 2.0 * 0.125f64.exp()).abs() < 1e-14);
        assert!((sol.v(0.0, 1.0) - 2.26630).abs() < 1e-5);
        assert!((sol.pi_star[0] - 5.0).abs() < 1e-13);
    }

    #[test]
    fn zero_risk_premium() {
        // μ₁ = μ̃₁ + σ²/2 = 0
        let sol = merton_closed_form(&merton(0.5, -0.02)).unwrap();
        assert!(sol.k.abs() < 1e-15);
        assert!(sol.pi_star[0].abs() < 1e-13);
        assert!((sol.v(0.3, 4.0) - 4f64.sqrt() / 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_power() {
        let sol = merton_closed_form(&merton(-1.0, 0.08)).unwrap();
        assert!((sol.k + 0.0625).abs() < 1e-15);
        assert!((sol.pi_star[0] - 1.25).abs() < 1e-13);
    }

    #[test]
    fn rejects_varying_model() {
        let model = builtin_model(BuiltinModel::ScottBoundedVol, &BTreeMap::new(), CatalogOptions::default()).unwrap();
        assert!(matches!(merton_closed_form(&model), Err(Error::Precondition(_))));
    }

    fn merton_qf() -> QuadraticForm {
        let c = merton(0.5, 0.08).coefficients(0.0, &[0.0, 0.0]).unwrap();
        assemble_quadratic(&c, 0.5).unwrap()
    }

    #[test]
    fn brute_force_hand_case() {
        let qf = merton_qf();
        let r = DVector::from_vec(vec![1.0, 0.0]);
        let brute = brute_force_hr(&qf, &r, 0.05, 41);
        assert!((brute + 0.030625).abs() < 1e-9, "{brute}");
        let exact = hamiltonian_truncated(&qf, &r, 0.05).unwrap().value;
        assert!((brute - exact).abs() < 1e-9);
    }

    #[test]
    fn brute_force_inactive_and_tiny_ball() {
        let qf = merton_qf();
        let r = DVector::from_vec(vec![1.0, 0.0]);
        let h = hamiltonian_closed(&qf, &r);
        let brute = brute_force_hr(&qf, &r, 1.0, 41);
        assert!((brute - h).abs() < 1e-9);
        assert!(brute <= h + 1e-15);
        let tiny = brute_force_hr(&qf, &r, 1e-9, 11);
        let at_zero = -running_cost(&qf, &DVector::zeros(2));
        assert!((tiny - at_zero).abs() < 1e-8);
    }

    #[test]
    fn fd_gradient_basics() {
        let g = fd_gradient(|z| z.iter().map(|v| v * v).sum(), &[0.0, 0.0, 0.0], FdStep::Absolute(1e-3)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let c = [1.5, -2.0, 0.25];
        let g = fd_gradient(|z| c.iter().zip(z).map(|(a, b)| a * b).sum(), &[0.3, 0.1, -4.0], FdStep::Relative(1e-5)).unwrap();
        for (gi, ci) in g.iter().zip(c) {
            assert!((gi - ci).abs() < 1e-9);
        }
        assert!(fd_gradient(|z| 1.0 / z[0], &[0.0], FdStep::Absolute(0.0)).is_err());
    }

    #[test]
    fn fd_gradient_of_hamiltonian_is_minus_ell() {
        let qf = merton_qf();
        let g = fd_gradient(
            |r| hamiltonian_closed(&qf, &DVector::from_column_slice(r)),
            &[0.0, 0.0],
            FdStep::Absolute(1e-4),
        )
        .unwrap();
        assert!((g[0] + 0.18).abs() < 1e-10);
        assert!(g[1].abs() < 1e-10);
    }
}
