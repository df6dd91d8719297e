//! Market model: log-price dynamics driven by an exogenous factor.
//!
//! ```text
//! dX = μ̃₁(t,Z) dt + σ₁(t,Z) dB + σ₂(t,Z) dW
//! dY = μ₂(t,Y) dt + dW
//! ```
//!
//! with `Z = (X, Y) ∈ ℝⁿ × ℝᵈ`. Everything downstream (Hamiltonian, PDE
//! solver, Monte Carlo) consumes the model through [`ModelSpec::coefficients`].

mod catalog;
mod conditions;

pub use catalog::{builtin_model, BuiltinModel, CatalogOptions};
pub use conditions::{
    check_conditions, halton_points, ConditionBounds, ConditionId, ConditionRecord,
    ConditionReport, DomainBox, SamplePoint,
};

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Vector-valued coefficient `(t, z) ↦ ℝᵏ`.
pub type VectorFn = Arc<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;
/// Matrix-valued coefficient `(t, z) ↦ ℝ^{r×c}`.
pub type MatrixFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Dimensions of the market: `n` risky assets, `m` price-only noise
/// sources and `d` exogenous factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl Dims {
    /// Dimension of the state space `E = ℝⁿ × ℝᵈ`.
    pub fn state(&self) -> usize {
        self.n + self.d
    }

    /// Dimension of the driving Brownian motion `(B, W)`.
    pub fn noise(&self) -> usize {
        self.m + self.d
    }
}

/// An immutable market model with utility power `a` and horizon `T`.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dims: Dims,
    horizon: f64,
    power: f64,
    time_homogeneous: bool,
    mu1_tilde: VectorFn,
    sigma1: MatrixFn,
    sigma2: MatrixFn,
    mu2: VectorFn,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("horizon", &self.horizon)
            .field("power", &self.power)
            .field("time_homogeneous", &self.time_homogeneous)
            .finish_non_exhaustive()
    }
}

/// Builder for user-supplied models.
pub struct ModelBuilder {
    name: String,
    dims: Dims,
    horizon: f64,
    power: f64,
    time_homogeneous: bool,
    mu1_tilde: Option<VectorFn>,
    sigma1: Option<MatrixFn>,
    sigma2: Option<MatrixFn>,
    mu2: Option<VectorFn>,
}

impl ModelBuilder {
    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    /// Declares that no coefficient depends on `t`, which lets the solver
    /// reuse pointwise quadratic forms across time layers.
    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.time_homogeneous = yes;
        self
    }

    pub fn mu1_tilde(mut self, f: impl Fn(f64, &[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.mu1_tilde = Some(Arc::new(f));
        self
    }

    pub fn sigma1(mut self, f: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.sigma1 = Some(Arc::new(f));
        self
    }

    pub fn sigma2(mut self, f: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.sigma2 = Some(Arc::new(f));
        self
    }

    /// Factor drift; the closure receives `(t, y)` only.
    pub fn mu2(mut self, f: impl Fn(f64, &[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.mu2 = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let Dims { n, m, d } = self.dims;
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::InvalidModel(format!(
                "dimensions must be positive, got n={n}, m={m}, d={d}"
            )));
        }
        validate_horizon(self.horizon)?;
        validate_power(self.power)?;
        let missing = |what: &str| Error::InvalidModel(format!("{what} coefficient not set"));
        Ok(ModelSpec {
            name: self.name,
            dims: self.dims,
            horizon: self.horizon,
            power: self.power,
            time_homogeneous: self.time_homogeneous,
            mu1_tilde: self.mu1_tilde.ok_or_else(|| missing("mu1_tilde"))?,
            sigma1: self.sigma1.ok_or_else(|| missing("sigma1"))?,
            sigma2: self.sigma2.ok_or_else(|| missing("sigma2"))?,
            mu2: self.mu2.ok_or_else(|| missing("mu2"))?,
        })
    }
}

fn validate_horizon(horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidModel(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

fn validate_power(power: f64) -> Result<()> {
    if !power.is_finite() || power >= 1.0 || power == 0.0 {
        return Err(Error::InvalidModel(format!(
            "utility power must lie in (-inf, 1) and be non-zero, got {power}"
        )));
    }
    Ok(())
}

impl ModelSpec {
    pub fn builder(name: impl Into<String>, n: usize, m: usize, d: usize) -> ModelBuilder {
        ModelBuilder {
            name: name.into(),
            dims: Dims { n, m, d },
            horizon: 1.0,
            power: 0.5,
            time_homogeneous: false,
            mu1_tilde: None,
            sigma1: None,
            sigma2: None,
            mu2: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    /// Same coefficients, different utility power.
    pub fn with_power(&self, power: f64) -> Result<ModelSpec> {
        validate_power(power)?;
        Ok(ModelSpec { power, ..self.clone() })
    }

    /// Same coefficients, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<ModelSpec> {
        validate_horizon(horizon)?;
        Ok(ModelSpec { horizon, ..self.clone() })
    }

    pub fn mu1_tilde(&self, t: f64, z: &[f64]) -> DVector<f64> {
        (self.mu1_tilde)(t, z)
    }

    pub fn sigma1(&self, t: f64, z: &[f64]) -> DMatrix<f64> {
        (self.sigma1)(t, z)
    }

    pub fn sigma2(&self, t: f64, z: &[f64]) -> DMatrix<f64> {
        (self.sigma2)(t, z)
    }

    /// Factor drift evaluated at the `y` part of `z`.
    pub fn mu2(&self, t: f64, z: &[f64]) -> DVector<f64> {
        (self.mu2)(t, &z[self.dims.n..])
    }

    /// Full volatility `σ = [σ₁ σ₂]` (n × (m+d)).
    pub fn sigma(&self, t: f64, z: &[f64]) -> DMatrix<f64> {
        let Dims { n, m, d } = self.dims;
        let mut sigma = DMatrix::zeros(n, m + d);
        sigma.columns_mut(0, m).copy_from(&self.sigma1(t, z));
        sigma.columns_mut(m, d).copy_from(&self.sigma2(t, z));
        sigma
    }

    pub fn eval_coefficients(&self, pt: &StatePoint) -> Result<DerivedCoefficients> {
        self.coefficients(pt.t, &pt.z)
    }

    /// Evaluates every derived coefficient at `(t, z)`.
    pub fn coefficients(&self, t: f64, z: &[f64]) -> Result<DerivedCoefficients> {
        let Dims { n, m, d } = self.dims;
        if z.len() != n + d {
            return Err(Error::Domain(format!(
                "state has {} coordinates, model expects {}",
                z.len(),
                n + d
            )));
        }
        let mu1_tilde = self.mu1_tilde(t, z);
        let sigma1 = self.sigma1(t, z);
        let sigma2 = self.sigma2(t, z);
        let mu2 = self.mu2(t, z);
        if mu1_tilde.len() != n
            || sigma1.shape() != (n, m)
            || sigma2.shape() != (n, d)
            || mu2.len() != d
        {
            return Err(Error::InvalidModel(format!(
                "coefficient shapes do not match dims n={n}, m={m}, d={d}"
            )));
        }
        let finite = mu1_tilde.iter().chain(sigma1.iter()).chain(sigma2.iter()).chain(mu2.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coefficient at t={t}, z={z:?}")));
        }

        let m1 = &sigma1 * sigma1.transpose();
        let m2 = &sigma2 * sigma2.transpose();
        let m_total = &m1 + &m2;
        let m_chol = Cholesky::new(m_total.clone()).ok_or_else(|| Error::Degenerate {
            t,
            z: z.to_vec(),
            min_eigenvalue: min_eigenvalue(&m_total),
        })?;
        let m_inv_sigma2 = m_chol.solve(&sigma2);
        let n_mat = sigma2.transpose() * &m_inv_sigma2;
        let beta = DVector::from_fn(n, |i, _| {
            0.5 * (sigma1.row(i).norm_squared() + sigma2.row(i).norm_squared())
        });
        let mu1 = &mu1_tilde + &beta;

        Ok(DerivedCoefficients {
            t,
            z: z.to_vec(),
            power: self.power,
            sigma1,
            sigma2,
            m1,
            m2,
            m: m_total,
            m_chol,
            n_mat,
            beta,
            mu1_tilde,
            mu1,
            mu2,
        })
    }
}

/// A point `(t, z)` of `[0,T] × E`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint {
    pub t: f64,
    pub z: Vec<f64>,
}

impl StatePoint {
    pub fn new(t: f64, x: &[f64], y: &[f64]) -> Self {
        let mut z = x.to_vec();
        z.extend_from_slice(y);
        Self { t, z }
    }
}

/// Coefficients derived from the model at a single point.
#[derive(Debug, Clone)]
pub struct DerivedCoefficients {
    pub t: f64,
    pub z: Vec<f64>,
    pub power: f64,
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub m_chol: Cholesky<f64, Dyn>,
    /// `N = σ₂' M⁻¹ σ₂`.
    pub n_mat: DMatrix<f64>,
    /// `βᵢ = ½|σⁱ|²`, the Itô correction of the i-th log-price.
    pub beta: DVector<f64>,
    pub mu1_tilde: DVector<f64>,
    /// `μ₁ = μ̃₁ + β`.
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
}

impl DerivedCoefficients {
    pub fn n(&self) -> usize {
        self.sigma1.nrows()
    }

    pub fn d(&self) -> usize {
        self.sigma2.ncols()
    }

    /// Full volatility `σ = [σ₁ σ₂]`.
    pub fn sigma(&self) -> DMatrix<f64> {
        let (n, m, d) = (self.n(), self.sigma1.ncols(), self.d());
        let mut sigma = DMatrix::zeros(n, m + d);
        sigma.columns_mut(0, m).copy_from(&self.sigma1);
        sigma.columns_mut(m, d).copy_from(&self.sigma2);
        sigma
    }

    /// `M⁻¹ v` through the Cholesky factor of `M`.
    pub fn solve_m(&self, v: &DVector<f64>) -> DVector<f64> {
        self.m_chol.solve(v)
    }

    /// Spectral norm `|N|`.
    pub fn n_norm(&self) -> f64 {
        spectral_norm_sym(&self.n_mat)
    }

    /// Joint diffusion covariance `ΣΣ' = [[M, σ₂], [σ₂', I]]` of `Z`.
    pub fn state_covariance(&self) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.d());
        let mut cov = DMatrix::identity(n + d, n + d);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.m);
        cov.view_mut((0, n), (n, d)).copy_from(&self.sigma2);
        cov.view_mut((n, 0), (d, n)).copy_from(&self.sigma2.transpose());
        cov
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Operator 2-norm of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Operator 2-norm of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0_f64, |acc, v| acc.max(*v))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a symmetric positive definite matrix via its
/// eigendecomposition `M = V Λ V'`, `S = V Λ^{1/2} V'`.
pub fn matrix_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Domain(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if !(asym <= 1e-12 * scale) {
        return Err(Error::Domain(format!("matrix is not symmetric (asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("matrix is not positive definite (eigenvalue {bad:e})")));
    }
    let root = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&root) * v.transpose())
}
