//! Ball-constrained Hamiltonian `H^R(r) = sup_{|r̄| ≤ R} (-r̄·r - L(r̄))`.
//!
//! The maximand is a strictly concave quadratic, so this is a trust-region
//! subproblem with a unique solution. When the unconstrained maximizer
//! `r̂ = ℓ - A r` lies outside the ball, the KKT conditions give
//! `r̄(λ) = (A⁻¹ + λI)⁻¹ (A⁻¹ℓ - r) = (I + λA)⁻¹ r̂` and `λ > 0` solves the
//! secular equation `|r̄(λ)| = R`.

use nalgebra::{DVector, Dyn, SymmetricEigen};

use super::{dual_maximizer, hamiltonian_closed, running_cost, QuadraticForm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMax {
    pub value: f64,
    pub maximizer: DVector<f64>,
    /// Whether the ball constraint binds.
    pub active: bool,
    /// KKT multiplier `λ ≥ 0` of the constraint.
    pub multiplier: f64,
    /// `|-r - A⁻¹(r̄ - ℓ) - λ r̄|`.
    pub kkt_residual: f64,
}

pub fn hamiltonian_truncated(qf: &QuadraticForm, r: &DVector<f64>, radius: f64) -> Result<TruncatedMax> {
    hamiltonian_truncated_with(qf, &qf.spectral(), r, radius)
}

/// As [`hamiltonian_truncated`] with a precomputed eigendecomposition of `A`.
pub fn hamiltonian_truncated_with(
    qf: &QuadraticForm,
    eig: &SymmetricEigen<f64, Dyn>,
    r: &DVector<f64>,
    radius: f64,
) -> Result<TruncatedMax> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("cutoff radius must be positive, got {radius}")));
    }
    let r_hat = dual_maximizer(qf, r);
    if r_hat.norm() <= radius {
        let kkt_residual = kkt_residual(qf, r, &r_hat, 0.0);
        return Ok(TruncatedMax {
            value: hamiltonian_closed(qf, r),
            maximizer: r_hat,
            active: false,
            multiplier: 0.0,
            kkt_residual,
        });
    }

    let alpha = &eig.eigenvalues;
    let coords = eig.eigenvectors.tr_mul(&r_hat);
    let norm_at = |lambda: f64| -> f64 {
        coords
            .iter()
            .zip(alpha.iter())
            .map(|(c, a)| {
                let s = c / (1.0 + lambda * a);
                s * s
            })
            .sum::<f64>()
            .sqrt()
    };
    // d|r̄|/dλ = -(1/|r̄|) Σ cᵢ² αᵢ / (1+λαᵢ)³
    let norm_slope = |lambda: f64, norm: f64| -> f64 {
        -coords
            .iter()
            .zip(alpha.iter())
            .map(|(c, a)| c * c * a / (1.0 + lambda * a).powi(3))
            .sum::<f64>()
            / norm
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while norm_at(hi) >= radius {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        assert!(doublings < 2000, "secular equation could not be bracketed");
    }

    // Newton on ψ(λ) = 1/|r̄(λ)| - 1/R, which is close to linear in λ;
    // bisection whenever the step leaves the bracket.
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..200 {
        let norm = norm_at(lambda);
        let psi = 1.0 / norm - 1.0 / radius;
        if psi < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if (norm - radius).abs() <= 1e-15 * radius || hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
        let dpsi = -norm_slope(lambda, norm) / (norm * norm);
        let next = lambda - psi / dpsi;
        lambda = if next > lo && next < hi && next.is_finite() { next } else { 0.5 * (lo + hi) };
    }

    let scaled = DVector::from_iterator(
        coords.len(),
        coords.iter().zip(alpha.iter()).map(|(c, a)| c / (1.0 + lambda * a)),
    );
    let maximizer = &eig.eigenvectors * scaled;
    let value = -maximizer.dot(r) - running_cost(qf, &maximizer);
    Ok(TruncatedMax {
        kkt_residual: kkt_residual(qf, r, &maximizer, lambda),
        value,
        maximizer,
        active: true,
        multiplier: lambda,
    })
}

fn kkt_residual(qf: &QuadraticForm, r: &DVector<f64>, r_bar: &DVector<f64>, lambda: f64) -> f64 {
    let grad = -r - qf.solve_a(&(r_bar - &qf.ell)) - r_bar * lambda;
    grad.norm()
}
