use nalgebra::{DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{fnv1a, FieldMeta, ValueField};
use super::grid::Grid;
use super::operators::Operators;
use crate::error::{Error, Result};
use crate::hamiltonian::{assemble_quadratic, hamiltonian_closed, hamiltonian_truncated_with, QuadraticForm};
use crate::model::ModelSpec;

/// Largest utility exponent the explicit solver accepts.
pub const MAX_POWER: f64 = 0.95;

/// Treatment of the spatial boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryScheme {
    /// The equation is imposed at boundary nodes with skewed second-order stencils.
    #[default]
    OneSidedSecondOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Fraction of the explicit stability limit used as the time step bound.
    pub safety: f64,
    pub boundary: BoundaryScheme,
    /// Ball radius for the truncated Hamiltonian; `None` solves the uncut equation.
    pub cutoff: Option<f64>,
    /// Log progress at info level.
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { safety: 0.9, boundary: BoundaryScheme::default(), cutoff: None, verbose: false }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!("safety factor must lie in (0, 1], got {}", self.safety)));
        }
        if let Some(r) = self.cutoff {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("cutoff radius must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn with_cutoff(&self, cutoff: Option<f64>) -> SolverConfig {
        SolverConfig { cutoff, ..self.clone() }
    }
}

/// Per-node data that depends only on `(t, z)`.
struct NodeData {
    cov: Vec<f64>,
    qf: QuadraticForm,
    eig: Option<SymmetricEigen<f64, Dyn>>,
}

fn node_data(model: &ModelSpec, grid: &Grid, t: f64, with_eig: bool) -> Result<Vec<NodeData>> {
    let a = model.power();
    (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let coeffs = model.coefficients(t, &grid.coords(node))?;
            let cov = coeffs.state_covariance();
            let qf = assemble_quadratic(&coeffs, a)?;
            let eig = with_eig.then(|| qf.spectral());
            Ok(NodeData { cov: cov.as_slice().to_vec(), qf, eig })
        })
        .collect()
}

/// Largest stable explicit step: `1 / Σ_k max_nodes (ΣΣ')_kk / h_k²`.
pub fn stable_time_step(model: &ModelSpec, grid: &Grid) -> Result<f64> {
    let times: Vec<f64> = if model.is_time_homogeneous() {
        vec![0.0]
    } else {
        (0..=4).map(|i| grid.horizon * i as f64 / 4.0).collect()
    };
    let dim = grid.dim();
    let mut max_diag = vec![0.0_f64; dim];
    for t in times {
        for node in 0..grid.node_count() {
            let cov = model.coefficients(t, &grid.coords(node))?.state_covariance();
            for (k, m) in max_diag.iter_mut().enumerate() {
                *m = m.max(cov[(k, k)]);
            }
        }
    }
    let rate: f64 = max_diag
        .iter()
        .zip(&grid.axes)
        .map(|(c, axis)| c / axis.spacing().powi(2))
        .sum();
    Ok(if rate > 0.0 { 1.0 / rate } else { f64::INFINITY })
}

pub(crate) fn config_hash(model: &ModelSpec, grid: &Grid, cfg: &SolverConfig) -> u64 {
    let text = format!(
        "{}|{:?}|{:?}|{:?}|{:?}|{:?}",
        model.name(),
        model.power(),
        grid,
        cfg.safety,
        cfg.boundary,
        cfg.cutoff
    );
    fnv1a(text.as_bytes())
}

/// Marches the HJB equation backwards from `u(T, ·) = 0` with explicit Euler
/// steps. The diffusion and Hamiltonian are evaluated on the known layer.
pub fn solve_semilinear(model: &ModelSpec, grid: &Grid, cfg: &SolverConfig) -> Result<ValueField> {
    cfg.validate()?;
    let dims = model.dims();
    if grid.dim() != dims.state() {
        return Err(Error::Config(format!(
            "grid has {} axes, model state has dimension {}",
            grid.dim(),
            dims.state()
        )));
    }
    if (grid.horizon - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(Error::Config(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon,
            model.horizon()
        )));
    }
    if model.power() > MAX_POWER {
        return Err(Error::Config(format!(
            "utility exponent {} exceeds the supported maximum {MAX_POWER}",
            model.power()
        )));
    }
    let dt = grid.dt();
    let dt_max = cfg.safety * stable_time_step(model, grid)?;
    if dt > dt_max {
        return Err(Error::Cfl { dt, dt_max });
    }

    let ops = Operators::new(grid);
    let nodes = grid.node_count();
    let dim = grid.dim();
    let layers = grid.layers();
    let mut values = vec![0.0; layers * nodes];
    let mut gradients = vec![0.0; layers * nodes * dim];
    let mut cutoff_active = vec![0; layers];
    let homogeneous = model.is_time_homogeneous();
    let mut data = if homogeneous { Some(node_data(model, grid, 0.0, cfg.cutoff.is_some())?) } else { None };

    for j in (0..grid.time_steps).rev() {
        let t_next = grid.time(j + 1);
        if !homogeneous {
            data = Some(node_data(model, grid, t_next, cfg.cutoff.is_some())?);
        }
        let data = data.as_ref().expect("node data computed above");
        let (head, tail) = values.split_at_mut((j + 1) * nodes);
        let known = &tail[..nodes];
        let target = &mut head[j * nodes..];
        let grad_layer = &mut gradients[(j + 1) * nodes * dim..(j + 2) * nodes * dim];

        let active: usize = target
            .par_iter_mut()
            .zip(grad_layer.par_chunks_mut(dim))
            .enumerate()
            .map(|(node, (out, grad))| -> Result<usize> {
                ops.gradient(known, node, grad);
                let nd = &data[node];
                let diffusion = ops.diffusion(known, node, &nd.cov);
                let r = DVector::from_column_slice(grad);
                let (h, active) = match cfg.cutoff {
                    None => (hamiltonian_closed(&nd.qf, &r), false),
                    Some(radius) => {
                        let eig = nd.eig.as_ref().expect("eigendecomposition cached with cutoff");
                        let res = hamiltonian_truncated_with(&nd.qf, eig, &r, radius)?;
                        (res.value, res.active)
                    }
                };
                *out = known[node] + dt * (diffusion - h);
                Ok(usize::from(active))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        cutoff_active[j + 1] = active;

        if target[..nodes].iter().any(|v| !v.is_finite() || v.abs() > 1e150) {
            return Err(Error::Divergence { layer: j, t: grid.time(j) });
        }
        if cfg.verbose && (j % (grid.time_steps / 10).max(1) == 0) {
            log::info!("layer {j}/{}: t = {:.4}, cutoff active at {active} nodes", grid.time_steps, grid.time(j));
        }
    }
    let first = ops.layer_gradient(&values[..nodes]);
    gradients[..nodes * dim].copy_from_slice(&first);
    if let (Some(radius), Some(data)) = (cfg.cutoff, data.as_ref().filter(|_| homogeneous)) {
        cutoff_active[0] = count_active(data, &first, dim, radius)?;
    } else if let Some(radius) = cfg.cutoff {
        let data = node_data(model, grid, 0.0, true)?;
        cutoff_active[0] = count_active(&data, &first, dim, radius)?;
    }

    let meta = FieldMeta {
        model: model.name().to_string(),
        n: dims.n,
        d: dims.d,
        power: model.power(),
        cutoff: cfg.cutoff,
        config_hash: config_hash(model, grid, cfg),
    };
    ValueField::from_parts(grid.clone(), meta, values, gradients, cutoff_active)
}

fn count_active(data: &[NodeData], grads: &[f64], dim: usize, radius: f64) -> Result<usize> {
    let mut count = 0;
    for (nd, g) in data.iter().zip(grads.chunks(dim)) {
        let eig = nd.eig.as_ref().expect("eigendecomposition cached with cutoff");
        if hamiltonian_truncated_with(&nd.qf, eig, &DVector::from_column_slice(g), radius)?.active {
            count += 1;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinModel, CatalogOptions};
    use crate::oracle::merton_closed_form;
    use std::collections::BTreeMap;

    fn builtin(kind: BuiltinModel) -> ModelSpec {
        builtin_model(kind, &BTreeMap::new(), CatalogOptions::default()).unwrap()
    }

    #[test]
    fn merton_matches_closed_form() {
        let model = builtin(BuiltinModel::MertonConstant);
        let grid = Grid::default_for(&model, &[0.0, 0.0], &[41, 41], 64).unwrap();
        let field = solve_semilinear(&model, &grid, &SolverConfig::default()).unwrap();
        let sol = merton_closed_form(&model).unwrap();
        for j in 0..grid.layers() {
            let exact = sol.u(grid.time(j));
            assert!(field.layer(j).iter().all(|u| (u - exact).abs() < 1e-12));
        }
        assert_eq!(field.terminal_max_abs(), 0.0);
        assert!(field.gradients().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let model = builtin(BuiltinModel::MertonConstant);
        let grid = Grid::default_for(&model, &[0.0, 0.0], &[81, 81], 16).unwrap();
        assert!(matches!(
            solve_semilinear(&model, &grid, &SolverConfig::default()),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn refuses_power_near_one() {
        let model = builtin(BuiltinModel::MertonConstant).with_power(0.97).unwrap();
        let grid = Grid::default_for(&model, &[0.0, 0.0], &[9, 9], 64).unwrap();
        assert!(matches!(solve_semilinear(&model, &grid, &SolverConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_safety() {
        let cfg = SolverConfig { safety: 1.5, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig { safety: 0.0, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scott_solution_is_finite_and_stable() {
        let model = builtin(BuiltinModel::ScottBoundedVol);
        let grid = Grid::default_for(&model, &[0.0, 0.0], &[9, 41], 200).unwrap();
        let field = solve_semilinear(&model, &grid, &SolverConfig::default()).unwrap();
        assert_eq!(field.terminal_max_abs(), 0.0);
        // Values stay within the range spanned by the extreme Merton constants.
        let u0 = field.layer(0);
        assert!(u0.iter().all(|u| *u < 0.0 && *u > -1.0), "{:?}", &u0[..5]);
    }
}
