use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hamiltonian::{dual_maximizer, hamiltonian_truncated, QuadraticForm};
use crate::pde::{Grid, PolicyField, ValueField};

/// Portfolio weights as a function of `(t, z)`.
pub trait Policy: Sync {
    fn assets(&self) -> usize;
    /// Writes `π(t, z)` into `out`; returns `true` if `z` had to be clamped
    /// into the policy's domain.
    fn weights(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool;
}

/// Drift control `ν(t, z) ∈ E` of the dual problem.
pub trait Control: Sync {
    fn dim(&self) -> usize;
    /// Writes `ν(t, z)` into `out`, given the quadratic form of the
    /// Hamiltonian at `(t, z)`; returns `true` if `z` was clamped into the
    /// control's domain.
    fn drift(&self, t: f64, z: &[f64], qf: &QuadraticForm, out: &mut [f64]) -> Result<bool>;
}

/// Linear in time, multilinear in space over `width` values per node.
fn interpolate(grid: &Grid, data: &[f64], width: usize, t: f64, z: &[f64], out: &mut [f64]) -> bool {
    let mut corners = Vec::with_capacity(1 << grid.dim());
    let clamped = grid.corners(z, &mut corners);
    let (j, w) = grid.time_bracket(t);
    let layer = grid.node_count() * width;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (offset, lw) in [(j * layer, 1.0 - w), ((j + 1) * layer, w)] {
        if lw == 0.0 {
            continue;
        }
        for &(node, cw) in &corners {
            let vals = &data[offset + node * width..offset + (node + 1) * width];
            for (o, v) in out.iter_mut().zip(vals) {
                *o += lw * cw * v;
            }
        }
    }
    clamped
}

impl Policy for PolicyField {
    fn assets(&self) -> usize {
        self.n
    }

    fn weights(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        interpolate(&self.grid, self.all_weights(), self.n, t, z, out)
    }
}

/// The same weights everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl ConstantPolicy {
    pub fn zero(assets: usize) -> ConstantPolicy {
        ConstantPolicy(vec![0.0; assets])
    }
}

impl Policy for ConstantPolicy {
    fn assets(&self) -> usize {
        self.0.len()
    }

    fn weights(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.0);
        false
    }
}

/// A base policy plus a constant offset.
pub struct ShiftedPolicy<'a> {
    pub base: &'a dyn Policy,
    pub shift: Vec<f64>,
}

impl Policy for ShiftedPolicy<'_> {
    fn assets(&self) -> usize {
        self.base.assets()
    }

    fn weights(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        let clamped = self.base.weights(t, z, out);
        out.iter_mut().zip(&self.shift).for_each(|(o, s)| *o += s);
        clamped
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    /// `ν` itself, `dim` values per node.
    Nodes(Vec<f64>),
    /// `u_z` per node; `ν` is the dual maximizer at the interpolated
    /// gradient, ball-constrained when `cutoff` is set.
    Gradient { gradients: Vec<f64>, cutoff: Option<f64> },
}

/// Feedback drift read off a grid field by linear interpolation in time
/// and multilinear interpolation in space, optionally projected onto the
/// ball `|ν| ≤ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovControl {
    grid: Grid,
    source: Source,
    bound: Option<f64>,
}

impl MarkovControl {
    /// `dim` values of `ν` per node, layer-major.
    pub fn from_nodes(grid: Grid, nodes: Vec<f64>) -> Result<MarkovControl> {
        let dim = grid.dim();
        if nodes.len() != grid.layers() * grid.node_count() * dim {
            return Err(Error::Format(format!(
                "expected {} control values, got {}",
                grid.layers() * grid.node_count() * dim,
                nodes.len()
            )));
        }
        Ok(MarkovControl { grid, source: Source::Nodes(nodes), bound: None })
    }

    /// The optimal dual drift `ν̂ = argmax_{r̄} (-r̄·u_z - L(r̄))`: `ℓ - A u_z`
    /// for an uncut field, the ball-constrained maximizer (and a control
    /// bounded by the same radius) for a field solved with a cutoff. The
    /// gradient is interpolated and `ℓ`, `A` are taken at the exact state.
    pub fn from_field(field: &ValueField) -> MarkovControl {
        let cutoff = field.meta.cutoff;
        MarkovControl {
            grid: field.grid.clone(),
            source: Source::Gradient { gradients: field.gradients().to_vec(), cutoff },
            bound: cutoff,
        }
    }

    /// Projects `ν` onto `|ν| ≤ radius` after evaluation.
    pub fn with_bound(mut self, radius: f64) -> Result<MarkovControl> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("control bound must be positive, got {radius}")));
        }
        self.bound = Some(radius);
        Ok(self)
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

fn project(v: &mut [f64], radius: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > radius {
        v.iter_mut().for_each(|x| *x *= radius / norm);
    }
}

impl Control for MarkovControl {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn drift(&self, t: f64, z: &[f64], qf: &QuadraticForm, out: &mut [f64]) -> Result<bool> {
        let dim = self.grid.dim();
        let clamped = match &self.source {
            Source::Nodes(nodes) => interpolate(&self.grid, nodes, dim, t, z, out),
            Source::Gradient { gradients, cutoff } => {
                let mut r = DVector::zeros(dim);
                let clamped = interpolate(&self.grid, gradients, dim, t, z, r.as_mut_slice());
                let nu = match cutoff {
                    None => dual_maximizer(qf, &r),
                    Some(radius) => hamiltonian_truncated(qf, &r, *radius)?.maximizer,
                };
                out.copy_from_slice(nu.as_slice());
                clamped
            }
        };
        if let Some(r) = self.bound {
            project(out, r);
        }
        Ok(clamped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantControl(pub Vec<f64>);

impl Control for ConstantControl {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn drift(&self, _t: f64, _z: &[f64], _qf: &QuadraticForm, out: &mut [f64]) -> Result<bool> {
        out.copy_from_slice(&self.0);
        Ok(false)
    }
}

/// A base control plus a constant offset.
pub struct ShiftedControl<'a> {
    pub base: &'a dyn Control,
    pub shift: Vec<f64>,
}

impl Control for ShiftedControl<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn drift(&self, t: f64, z: &[f64], qf: &QuadraticForm, out: &mut [f64]) -> Result<bool> {
        let clamped = self.base.drift(t, z, qf, out)?;
        out.iter_mut().zip(&self.shift).for_each(|(o, s)| *o += s);
        Ok(clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinModel, CatalogOptions, ModelSpec};
    use crate::pde::{extract_policy, solve_semilinear, SolverConfig};
    use std::collections::BTreeMap;

    fn merton_field() -> (ModelSpec, ValueField) {
        let model = builtin_model(BuiltinModel::MertonConstant, &BTreeMap::new(), CatalogOptions::default()).unwrap();
        let grid = Grid::default_for(&model, &[0.0, 0.0], &[11, 11], 64).unwrap();
        let field = solve_semilinear(&model, &grid, &SolverConfig::default()).unwrap();
        (model, field)
    }

    fn merton_qf(model: &ModelSpec) -> QuadraticForm {
        crate::hamiltonian::assemble_quadratic(&model.coefficients(0.0, &[0.0, 0.0]).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn merton_optimal_drift_is_ell() {
        let (model, field) = merton_field();
        let qf = merton_qf(&model);
        let control = MarkovControl::from_field(&field);
        let mut nu = [0.0; 2];
        assert!(!control.drift(0.3, &[0.1, -0.2], &qf, &mut nu).unwrap());
        assert!((nu[0] - 0.18).abs() < 1e-12 && nu[1].abs() < 1e-12);
        assert!(control.drift(0.3, &[10.0, 0.0], &qf, &mut nu).unwrap());
    }

    #[test]
    fn bounded_control_stays_in_ball() {
        let (model, field) = merton_field();
        let qf = merton_qf(&model);
        let control = MarkovControl::from_field(&field).with_bound(0.05).unwrap();
        let mut nu = [0.0; 2];
        for z in [[0.0, 0.0], [0.5, 3.0], [-7.0, 1.0]] {
            control.drift(0.5, &z, &qf, &mut nu).unwrap();
            assert!((nu[0] * nu[0] + nu[1] * nu[1]).sqrt() <= 0.05 * (1.0 + 1e-14));
        }
        assert!(MarkovControl::from_field(&field).with_bound(0.0).is_err());
    }

    #[test]
    fn node_control_interpolates() {
        let (model, field) = merton_field();
        let grid = field.grid.clone();
        let values: Vec<f64> = (0..grid.layers() * grid.node_count()).flat_map(|_| [1.0, -2.0]).collect();
        let control = MarkovControl::from_nodes(grid, values).unwrap();
        let mut nu = [0.0; 2];
        control.drift(0.4, &[0.1, 0.1], &merton_qf(&model), &mut nu).unwrap();
        assert_eq!(nu, [1.0, -2.0]);
    }

    #[test]
    fn policy_interpolation_and_shift() {
        let (model, field) = merton_field();
        let policy = extract_policy(&field, &model).unwrap();
        let mut pi = [0.0];
        policy.weights(0.77, &[0.05, 0.3], &mut pi);
        assert!((pi[0] - 5.0).abs() < 1e-9);
        let shifted = ShiftedPolicy { base: &policy, shift: vec![-1.0] };
        shifted.weights(0.0, &[0.0, 0.0], &mut pi);
        assert!((pi[0] - 4.0).abs() < 1e-9);
        ConstantPolicy::zero(1).weights(0.0, &[0.0, 0.0], &mut pi);
        assert_eq!(pi[0], 0.0);
    }

    #[test]
    fn rejects_mismatched_node_values() {
        let (_, field) = merton_field();
        assert!(MarkovControl::from_nodes(field.grid.clone(), vec![0.0; 3]).is_err());
    }
}
