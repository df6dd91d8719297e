use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::ValueField;
use super::grid::Grid;
use super::solver::{solve_semilinear, SolverConfig};
use super::stencil::{self, Stencil};
use crate::error::{Error, Result};
use crate::hamiltonian::{assemble_quadratic, hamiltonian_closed, hamiltonian_truncated, optimal_portfolio};
use crate::model::{matrix_sqrt_spd, ModelSpec};

/// Maximum PDE residual over interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// One entry per layer `j < K`.
    pub per_layer: Vec<f64>,
    pub global: f64,
    pub dt: f64,
}

impl ResidualReport {
    /// `Σ_{t_j ≥ t0} ρ_j Δt`, a bound on the accumulated defect from `t0` to `T`.
    pub fn integrated_from(&self, t0: f64) -> f64 {
        self.per_layer
            .iter()
            .enumerate()
            .filter(|(j, _)| *j as f64 * self.dt >= t0 - 1e-12 * self.dt)
            .map(|(_, r)| r * self.dt)
            .sum()
    }
}

struct Interior {
    node: usize,
    d1: Vec<Stencil>,
    d2: Vec<Stencil>,
}

fn interior_nodes(grid: &Grid) -> Vec<Interior> {
    let strides_len = grid.dim();
    (0..grid.node_count())
        .filter_map(|node| {
            let idx = grid.multi_index(node);
            let mut d1 = Vec::with_capacity(strides_len);
            let mut d2 = Vec::with_capacity(strides_len);
            for (i, axis) in idx.iter().zip(&grid.axes) {
                d1.push(stencil::first4(*i, axis.nodes, axis.spacing())?);
                d2.push(stencil::second4(*i, axis.nodes, axis.spacing())?);
            }
            Some(Interior { node, d1, d2 })
        })
        .collect()
}

/// Substitutes fourth-order interior differences of the field into
/// `-u_t - ½ tr(ΣΣ' D²u) + H(t, z, u_z)` at each layer `t_j`, with the
/// forward time difference `(u_{j+1} - u_j)/Δt`. The Hamiltonian is the
/// truncated one when the field was solved with a cutoff.
pub fn residual(field: &ValueField, model: &ModelSpec) -> Result<ResidualReport> {
    let grid = &field.grid;
    let strides = grid.strides();
    let dim = grid.dim();
    let dt = grid.dt();
    let interior = interior_nodes(grid);
    let a = model.power();
    let mut per_layer = Vec::with_capacity(grid.time_steps);
    let mut cache: Option<Vec<_>> = None;
    for j in 0..grid.time_steps {
        let t = grid.time(j);
        if cache.is_none() || !model.is_time_homogeneous() {
            cache = Some(
                interior
                    .par_iter()
                    .map(|p| {
                        let coeffs = model.coefficients(t, &grid.coords(p.node))?;
                        Ok((coeffs.state_covariance(), assemble_quadratic(&coeffs, a)?))
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let data = cache.as_ref().expect("filled above");
        let u = field.layer(j);
        let next = field.layer(j + 1);
        let worst = interior
            .par_iter()
            .zip(data.par_iter())
            .map(|(p, (cov, qf))| -> Result<f64> {
                let mut grad = DVector::zeros(dim);
                let mut diffusion = 0.0;
                for k in 0..dim {
                    grad[k] = p.d1[k].apply(u, p.node, strides[k]);
                    diffusion += 0.5 * cov[(k, k)] * p.d2[k].apply(u, p.node, strides[k]);
                    for l in k + 1..dim {
                        if cov[(k, l)] != 0.0 {
                            diffusion += cov[(k, l)]
                                * stencil::apply_mixed(&p.d1[k], strides[k], &p.d1[l], strides[l], u, p.node);
                        }
                    }
                }
                let h = match field.meta.cutoff {
                    None => hamiltonian_closed(qf, &grad),
                    Some(radius) => hamiltonian_truncated(qf, &grad, radius)?.value,
                };
                let u_t = (next[p.node] - u[p.node]) / dt;
                Ok((-u_t - diffusion + h).abs())
            })
            .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))?;
        per_layer.push(worst);
    }
    let global = per_layer.iter().copied().fold(0.0, f64::max);
    Ok(ResidualReport { per_layer, global, dt })
}

/// Optimal feedback portfolio on every node of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid,
    pub n: usize,
    weights: Vec<f64>,
    risk: Vec<f64>,
    /// `max |σ'π̂|² / (1 + |y|²)` over the grid.
    pub risk_bound: f64,
}

impl PolicyField {
    /// Builds a policy field from raw weights (`n` per node, layer-major).
    pub fn from_weights(model: &ModelSpec, grid: Grid, weights: Vec<f64>) -> Result<PolicyField> {
        let n = model.dims().n;
        let nodes = grid.node_count();
        if weights.len() != grid.layers() * nodes * n {
            return Err(Error::Format(format!(
                "expected {} weights, got {}",
                grid.layers() * nodes * n,
                weights.len()
            )));
        }
        let mut risk = Vec::with_capacity(grid.layers() * nodes);
        let mut risk_bound = 0.0_f64;
        for j in 0..grid.layers() {
            for node in 0..nodes {
                let z = grid.coords(node);
                let pi = DVector::from_column_slice(&weights[(j * nodes + node) * n..][..n]);
                let rho = (model.sigma(grid.time(j), &z).transpose() * pi).norm_squared();
                let y2: f64 = z[n..].iter().map(|v| v * v).sum();
                risk_bound = risk_bound.max(rho / (1.0 + y2));
                risk.push(rho);
            }
        }
        Ok(PolicyField { grid, n, weights, risk, risk_bound })
    }

    pub fn node_weights(&self, layer: usize, node: usize) -> &[f64] {
        let nodes = self.grid.node_count();
        &self.weights[(layer * nodes + node) * self.n..][..self.n]
    }

    pub fn risk(&self, layer: usize, node: usize) -> f64 {
        self.risk[layer * self.grid.node_count() + node]
    }

    pub fn all_weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `π̂ = π̃(t, z, u_z)` from the cached gradients.
pub fn extract_policy(field: &ValueField, model: &ModelSpec) -> Result<PolicyField> {
    let grid = &field.grid;
    let a = model.power();
    let n = model.dims().n;
    let nodes = grid.node_count();
    let weights = (0..grid.layers())
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(nodes * n);
            for node in 0..nodes {
                let coeffs = model.coefficients(grid.time(j), &grid.coords(node))?;
                let r = DVector::from_column_slice(field.gradient(j, node));
                out.extend(optimal_portfolio(&coeffs, a, &r).weights.iter());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    PolicyField::from_weights(model, grid.clone(), weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// `max (|M^{1/2} u_x| + |u_y|) / (1 + |y|)` over all layers and nodes.
    pub ratio: f64,
    pub t: f64,
    pub z: Vec<f64>,
}

pub fn growth_diagnostics(field: &ValueField, model: &ModelSpec) -> Result<GrowthReport> {
    let grid = &field.grid;
    let n = field.meta.n;
    let nodes = grid.node_count();
    let per_layer = (0..grid.layers())
        .into_par_iter()
        .map(|j| -> Result<(f64, usize)> {
            let mut best = (0.0, 0);
            for node in 0..nodes {
                let z = grid.coords(node);
                let coeffs = model.coefficients(grid.time(j), &z)?;
                let root = matrix_sqrt_spd(&coeffs.m)?;
                let g = field.gradient(j, node);
                let ux = DVector::from_column_slice(&g[..n]);
                let uy = DVector::from_column_slice(&g[n..]);
                let y = DVector::from_column_slice(&z[n..]);
                let ratio = ((root * ux).norm() + uy.norm()) / (1.0 + y.norm());
                if ratio > best.0 {
                    best = (ratio, node);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let (j, &(ratio, node)) = per_layer
        .iter()
        .enumerate()
        .fold((0, &(0.0, 0)), |acc, (j, b)| if b.0 > acc.1 .0 { (j, b) } else { acc });
    Ok(GrowthReport { ratio, t: grid.time(j), z: grid.coords(node) })
}

/// Relative spread `(max - min) / max` of growth ratios across a family of fields.
pub fn growth_spread(reports: &[GrowthReport]) -> f64 {
    let max = reports.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let min = reports.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    if reports.is_empty() || max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub radius: f64,
    /// `‖u^R - u‖_max` over all layers and nodes.
    pub sup_diff: f64,
    /// Node-layer pairs at which the ball constraint was binding.
    pub active_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffTable {
    pub rows: Vec<CutoffRow>,
    /// Largest radius at which the constraint was ever binding.
    pub largest_active_radius: Option<f64>,
}

pub fn cutoff_convergence(model: &ModelSpec, grid: &Grid, cfg: &SolverConfig, radii: &[f64]) -> Result<CutoffTable> {
    if radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("cutoff radii must be strictly ascending".into()));
    }
    let uncut = solve_semilinear(model, grid, &cfg.with_cutoff(None))?;
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let cut = solve_semilinear(model, grid, &cfg.with_cutoff(Some(radius)))?;
        let sup_diff = cut
            .values()
            .iter()
            .zip(uncut.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        rows.push(CutoffRow { radius, sup_diff, active_nodes: cut.cutoff_active().iter().sum() });
    }
    let largest_active_radius = rows.iter().filter(|r| r.active_nodes > 0).map(|r| r.radius).next_back();
    Ok(CutoffTable { rows, largest_active_radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinModel, CatalogOptions};
    use crate::pde::field::FieldMeta;
    use std::collections::BTreeMap;

    fn merton() -> ModelSpec {
        builtin_model(BuiltinModel::MertonConstant, &BTreeMap::new(), CatalogOptions::default()).unwrap()
    }

    fn merton_grid(model: &ModelSpec) -> Grid {
        Grid::default_for(model, &[0.0, 0.0], &[21, 21], 64).unwrap()
    }

    #[test]
    fn merton_residual_vanishes() {
        let model = merton();
        let grid = merton_grid(&model);
        let field = solve_semilinear(&model, &grid, &SolverConfig::default()).unwrap();
        let report = residual(&field, &model).unwrap();
        assert_eq!(report.per_layer.len(), 64);
        assert!(report.global <= 1e-6, "{}", report.global);
    }

    #[test]
    fn zero_field_residual_is_k() {
        let model = merton();
        let grid = merton_grid(&model);
        let meta = FieldMeta { model: "merton".into(), n: 1, d: 1, power: 0.5, cutoff: None, config_hash: 0 };
        let field = ValueField::from_values(grid.clone(), meta, vec![0.0; grid.layers() * grid.node_count()]).unwrap();
        let report = residual(&field, &model).unwrap();
        assert!(report.per_layer.iter().all(|r| (r - 0.125).abs() < 1e-15));
        assert!((report.integrated_from(0.0) - 0.125).abs() < 1e-12);
        assert!((report.integrated_from(0.5) - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn merton_policy_is_constant() {
        let model = merton();
        let grid = merton_grid(&model);
        let field = solve_semilinear(&model, &grid, &SolverConfig::default()).unwrap();
        let policy = extract_policy(&field, &model).unwrap();
        for j in 0..grid.layers() {
            for node in 0..grid.node_count() {
                assert!((policy.node_weights(j, node)[0] - 5.0).abs() < 1e-9);
                assert!((policy.risk(j, node) - 1.0).abs() < 1e-9);
            }
        }
        assert!(policy.risk_bound <= 1.0 + 1e-9);
    }

    #[test]
    fn doubling_one_minus_a_halves_policy() {
        let grid = merton_grid(&merton());
        let at = |a: f64| {
            let model = merton().with_power(a).unwrap();
            let field = solve_semilinear(&model, &grid, &SolverConfig::default()).unwrap();
            extract_policy(&field, &model).unwrap().node_weights(0, 7)[0]
        };
        let (narrow, wide) = (at(0.75), at(0.5));
        assert!((narrow - 10.0).abs() < 1e-9);
        assert!((wide - 0.5 * narrow).abs() < 1e-9);
    }

    #[test]
    fn merton_growth_ratio_is_zero() {
        let model = merton();
        let field = solve_semilinear(&model, &merton_grid(&model), &SolverConfig::default()).unwrap();
        assert!(growth_diagnostics(&field, &model).unwrap().ratio < 1e-10);
    }

    #[test]
    fn merton_cutoff_table() {
        let model = merton();
        let grid = merton_grid(&model);
        let table = cutoff_convergence(&model, &grid, &SolverConfig::default(), &[0.01, 0.1, 0.18, 1.0]).unwrap();
        assert!(table.rows[0].sup_diff > 0.0);
        assert_eq!(table.rows[0].active_nodes, grid.layers() * grid.node_count());
        for w in table.rows.windows(2) {
            assert!(w[1].sup_diff <= w[0].sup_diff);
        }
        assert_eq!(table.rows[2].sup_diff, 0.0);
        assert_eq!(table.rows[3].sup_diff, 0.0);
        assert_eq!(table.largest_active_radius, Some(0.1));
        assert!(cutoff_convergence(&model, &grid, &SolverConfig::default(), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn growth_spread_is_relative() {
        let r = |ratio| GrowthReport { ratio, t: 0.0, z: vec![] };
        assert_eq!(growth_spread(&[r(2.0), r(1.5), r(1.9)]), 0.25);
        assert_eq!(growth_spread(&[r(0.0)]), 0.0);
    }
}
