//! The pointwise Hamiltonian of the log-transformed HJB equation.
//!
//! After maximizing over the portfolio, `H(t,z,·)` is the convex quadratic
//!
//! ```text
//! H(r) = ½ (r, A r) - (r, ℓ) + k,      r = (p, q) ∈ ℝⁿ × ℝᵈ
//! ```
//!
//! and its convex conjugate (in `-r̄`) is the running cost
//! `L(r) = ½ (r-ℓ)' A⁻¹ (r-ℓ) - k` of the dual control problem.
//! `A` is never inverted densely: it factors as `A = T D T'` with a unit
//! block-lower-triangular `T` and block-diagonal `D = diag(M/(1-a), I-N)`.

mod truncated;

pub use truncated::{hamiltonian_truncated, hamiltonian_truncated_with, TruncatedMax};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{min_eigenvalue, DerivedCoefficients};

/// Block factors of `A = T D T'`.
#[derive(Debug, Clone)]
pub struct SchurFactors {
    /// `G = σ₂' M⁻¹` (d × n); `T (p, q) = (p, G p + q)`.
    pub coupling: DMatrix<f64>,
    /// Cholesky factor of the upper block `M/(1-a)` of `D`.
    pub upper: Cholesky<f64, Dyn>,
    /// Cholesky factor of the lower block `I - N` of `D`.
    pub lower: Cholesky<f64, Dyn>,
}

/// The triple `(A, ℓ, k)` at one `(t, z)`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub n: usize,
    pub d: usize,
    pub a_mat: DMatrix<f64>,
    pub ell: DVector<f64>,
    pub k: f64,
    pub schur: SchurFactors,
}

/// Builds `(A, ℓ, k)` and the Schur factors from the model coefficients.
pub fn assemble_quadratic(coeffs: &DerivedCoefficients, a: f64) -> Result<QuadraticForm> {
    let (n, d) = (coeffs.n(), coeffs.d());
    let inv = 1.0 / (1.0 - a);
    let ratio = a * inv;

    let mut a_mat = DMatrix::zeros(n + d, n + d);
    a_mat.view_mut((0, 0), (n, n)).copy_from(&(&coeffs.m * inv));
    a_mat.view_mut((0, n), (n, d)).copy_from(&(&coeffs.sigma2 * inv));
    a_mat.view_mut((n, 0), (d, n)).copy_from(&(coeffs.sigma2.transpose() * inv));
    let mut lower_right = &coeffs.n_mat * ratio;
    for i in 0..d {
        lower_right[(i, i)] += 1.0;
    }
    a_mat.view_mut((n, n), (d, d)).copy_from(&lower_right);

    let m_inv_mu1 = coeffs.solve_m(&coeffs.mu1);
    let mut ell = DVector::zeros(n + d);
    ell.rows_mut(0, n).copy_from(&(&coeffs.mu1 * inv - &coeffs.beta));
    ell.rows_mut(n, d)
        .copy_from(&(&coeffs.mu2 + coeffs.sigma2.transpose() * &m_inv_mu1 * ratio));
    let k = 0.5 * ratio * coeffs.mu1.dot(&m_inv_mu1);

    let coupling = coeffs.m_chol.solve(&coeffs.sigma2).transpose();
    let degenerate = |m: &DMatrix<f64>| Error::Degenerate {
        t: coeffs.t,
        z: coeffs.z.clone(),
        min_eigenvalue: min_eigenvalue(m),
    };
    let upper_block = &coeffs.m * inv;
    let upper = Cholesky::new(upper_block.clone()).ok_or_else(|| degenerate(&upper_block))?;
    let lower_block = DMatrix::identity(d, d) - &coeffs.n_mat;
    let lower = Cholesky::new(lower_block.clone()).ok_or_else(|| degenerate(&lower_block))?;

    Ok(QuadraticForm {
        n,
        d,
        a_mat,
        ell,
        k,
        schur: SchurFactors { coupling, upper, lower },
    })
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.n + self.d
    }

    fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (v.rows(0, self.n).into_owned(), v.rows(self.n, self.d).into_owned())
    }

    fn join(&self, top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.n).copy_from(top);
        out.rows_mut(self.n, self.d).copy_from(bottom);
        out
    }

    /// `T r = (p, G p + q)`.
    pub fn apply_t(&self, r: &DVector<f64>) -> DVector<f64> {
        let (p, q) = self.split(r);
        let bottom = &self.schur.coupling * &p + q;
        self.join(&p, &bottom)
    }

    /// `T' r = (p + G' q, q)`.
    pub fn apply_t_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        let (p, q) = self.split(r);
        let top = p + self.schur.coupling.tr_mul(&q);
        self.join(&top, &q)
    }

    /// `D r = (M p / (1-a), (I-N) q)`.
    pub fn apply_d(&self, r: &DVector<f64>) -> DVector<f64> {
        let (p, q) = self.split(r);
        let lu = self.schur.upper.l();
        let ll = self.schur.lower.l();
        let top = &lu * lu.tr_mul(&p);
        let bottom = &ll * ll.tr_mul(&q);
        self.join(&top, &bottom)
    }

    /// `A r` through the factorization.
    pub fn apply_a(&self, r: &DVector<f64>) -> DVector<f64> {
        self.apply_t(&self.apply_d(&self.apply_t_transpose(r)))
    }

    /// `A⁻¹ v = T'⁻¹ D⁻¹ T⁻¹ v`.
    pub fn solve_a(&self, v: &DVector<f64>) -> DVector<f64> {
        let (v1, v2) = self.split(v);
        let w2 = v2 - &self.schur.coupling * &v1;
        let s1 = self.schur.upper.solve(&v1);
        let s2 = self.schur.lower.solve(&w2);
        let top = s1 - self.schur.coupling.tr_mul(&s2);
        self.join(&top, &s2)
    }

    /// Dense `T`, `D` for inspection and tests.
    pub fn schur_dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let dim = self.dim();
        let mut t = DMatrix::identity(dim, dim);
        t.view_mut((self.n, 0), (self.d, self.n)).copy_from(&self.schur.coupling);
        let mut dm = DMatrix::zeros(dim, dim);
        let lu = self.schur.upper.l();
        let ll = self.schur.lower.l();
        dm.view_mut((0, 0), (self.n, self.n)).copy_from(&(&lu * lu.transpose()));
        dm.view_mut((self.n, self.n), (self.d, self.d)).copy_from(&(&ll * ll.transpose()));
        (t, dm)
    }

    /// Eigendecomposition of `A`, used by the ball-constrained maximization.
    pub fn spectral(&self) -> SymmetricEigen<f64, Dyn> {
        SymmetricEigen::new(self.a_mat.clone())
    }
}

/// `H(r) = ½ r'Ar - r'ℓ + k`.
pub fn hamiltonian_closed(qf: &QuadraticForm, r: &DVector<f64>) -> f64 {
    0.5 * r.dot(&(&qf.a_mat * r)) - r.dot(&qf.ell) + qf.k
}

/// The inner portfolio objective `π'(μ₁ - M p - σ₂ q) - ½(1-a)|σ'π|²`.
pub fn portfolio_objective(coeffs: &DerivedCoefficients, a: f64, r: &DVector<f64>, pi: &DVector<f64>) -> f64 {
    let n = coeffs.n();
    let p = r.rows(0, n);
    let q = r.rows(n, coeffs.d());
    let excess = &coeffs.mu1 - &coeffs.m * p - &coeffs.sigma2 * q;
    pi.dot(&excess) - 0.5 * (1.0 - a) * pi.dot(&(&coeffs.m * pi))
}

/// Maximizer of [`portfolio_objective`] and its risk `|σ'π̃|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioChoice {
    pub weights: DVector<f64>,
    pub risk: f64,
}

/// `π̃ = M⁻¹(μ₁ - M p - σ₂ q)/(1-a)`.
pub fn optimal_portfolio(coeffs: &DerivedCoefficients, a: f64, r: &DVector<f64>) -> PortfolioChoice {
    let n = coeffs.n();
    let p = r.rows(0, n);
    let q = r.rows(n, coeffs.d());
    let excess = &coeffs.mu1 - &coeffs.m * p - &coeffs.sigma2 * q;
    let m_inv_excess = coeffs.solve_m(&excess);
    let scale = 1.0 / (1.0 - a);
    PortfolioChoice {
        risk: scale * scale * excess.dot(&m_inv_excess),
        weights: m_inv_excess * scale,
    }
}

/// `H` evaluated from its definition as a supremum over portfolios, with
/// the supremum attained at [`optimal_portfolio`].
pub fn hamiltonian_maxform(coeffs: &DerivedCoefficients, a: f64, r: &DVector<f64>) -> f64 {
    let n = coeffs.n();
    let p = r.rows(0, n);
    let q = r.rows(n, coeffs.d());
    let sigma_p = coeffs.sigma1.tr_mul(&p).norm_squared() + coeffs.sigma2.tr_mul(&p).norm_squared();
    let cross = q.dot(&coeffs.sigma2.tr_mul(&p));
    let linear = 0.5 * sigma_p + cross + 0.5 * q.norm_squared() - coeffs.mu1_tilde.dot(&p) - coeffs.mu2.dot(&q);
    let pi = optimal_portfolio(coeffs, a, r).weights;
    linear + a * portfolio_objective(coeffs, a, r, &pi)
}

/// `L(r) = ½ (r-ℓ)'A⁻¹(r-ℓ) - k`.
pub fn running_cost(qf: &QuadraticForm, r: &DVector<f64>) -> f64 {
    let w = r - &qf.ell;
    0.5 * w.dot(&qf.solve_a(&w)) - qf.k
}

/// Maximizer `r̂ = ℓ - A r` of `r̄ ↦ -r̄·r - L(r̄)`.
pub fn dual_maximizer(qf: &QuadraticForm, r: &DVector<f64>) -> DVector<f64> {
    &qf.ell - qf.apply_a(r)
}
