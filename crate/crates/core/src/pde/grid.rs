use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{spectral_norm, ModelSpec};

/// One spatial axis: `nodes` equally spaced points on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }
}

/// Uniform time partition of `[0, T]` times a tensor-product spatial box
/// over `E = ℝⁿ × ℝᵈ` (x axes first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub horizon: f64,
    pub time_steps: usize,
    pub axes: Vec<Axis>,
}

impl Grid {
    pub fn new(horizon: f64, time_steps: usize, axes: Vec<Axis>) -> Result<Grid> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("grid horizon must be positive, got {horizon}")));
        }
        if time_steps < 2 {
            return Err(Error::Config(format!("need at least 2 time steps, got {time_steps}")));
        }
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.nodes < 5 {
                return Err(Error::Config(format!("axis {k} has {} nodes, need at least 5", axis.nodes)));
            }
            if !(axis.lower < axis.upper) || !axis.lower.is_finite() || !axis.upper.is_finite() {
                return Err(Error::Config(format!(
                    "axis {k} has an empty or non-finite interval [{}, {}]",
                    axis.lower, axis.upper
                )));
            }
        }
        Ok(Grid { horizon, time_steps, axes })
    }

    /// Box centred on `z0`: each log-price axis spans `x₀ ± 4·max|σⁱ|·√T`,
    /// each factor axis `y₀ ± (4√T + T·max|μ₂|)`, with the maxima sampled
    /// along the factor range.
    pub fn default_for(model: &ModelSpec, z0: &[f64], nodes: &[usize], time_steps: usize) -> Result<Grid> {
        let dims = model.dims();
        if z0.len() != dims.state() || nodes.len() != dims.state() {
            return Err(Error::Config(format!(
                "expected {} coordinates and node counts, got {} and {}",
                dims.state(),
                z0.len(),
                nodes.len()
            )));
        }
        let horizon = model.horizon();
        let root_t = horizon.sqrt();
        let y_reach = 4.0 * root_t;
        let mut vol = vec![0.0_f64; dims.n];
        let mut drift = 0.0_f64;
        let samples = 41;
        for t in [0.0, 0.5 * horizon, horizon] {
            for s in 0..samples {
                let frac = 2.0 * s as f64 / (samples - 1) as f64 - 1.0;
                let mut z = z0.to_vec();
                for yk in z[dims.n..].iter_mut() {
                    *yk += frac * y_reach;
                }
                let sigma = model.sigma(t, &z);
                for (i, v) in vol.iter_mut().enumerate() {
                    *v = v.max(spectral_norm(&sigma.rows(i, 1).into_owned()));
                }
                drift = drift.max(model.mu2(t, &z).norm());
            }
        }
        let mut axes = Vec::with_capacity(dims.state());
        for k in 0..dims.state() {
            let half = if k < dims.n {
                let v = if vol[k] > 0.0 { vol[k] } else { 1.0 };
                4.0 * v * root_t
            } else {
                y_reach + horizon * drift
            };
            axes.push(Axis { lower: z0[k] - half, upper: z0[k] + half, nodes: nodes[k] });
        }
        Grid::new(horizon, time_steps, axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn time(&self, layer: usize) -> f64 {
        if layer == self.time_steps {
            self.horizon
        } else {
            layer as f64 * self.dt()
        }
    }

    pub fn layers(&self) -> usize {
        self.time_steps + 1
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Row-major strides: the last axis varies fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].nodes;
        }
        strides
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let n = self.axes[k].nodes;
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, axis)| axis.coord(i))
            .collect()
    }

    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(0.0, f64::max)
    }

    /// Checks that `z` sits at least three spacings inside the box along every axis.
    pub fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Config(format!("point has {} coordinates, grid has {}", z.len(), self.dim())));
        }
        for (k, (v, axis)) in z.iter().zip(&self.axes).enumerate() {
            let margin = 3.0 * axis.spacing();
            if *v - axis.lower < margin || axis.upper - *v < margin {
                return Err(Error::Config(format!(
                    "coordinate {k} = {v} is within {margin} of the box edge [{}, {}]",
                    axis.lower, axis.upper
                )));
            }
        }
        Ok(())
    }

    /// Multilinear interpolation weights `(flat node, weight)` for `z`,
    /// written into `out`. Coordinates outside the box are clamped to the
    /// nearest face; the return value reports whether that happened.
    pub fn corners(&self, z: &[f64], out: &mut Vec<(usize, f64)>) -> bool {
        let mut clamped = false;
        out.clear();
        out.push((0, 1.0));
        for (k, axis) in self.axes.iter().enumerate() {
            let h = axis.spacing();
            let mut s = (z[k] - axis.lower) / h;
            let last = (axis.nodes - 1) as f64;
            if !(0.0..=last).contains(&s) {
                clamped = true;
                s = if s.is_nan() { 0.0 } else { s.clamp(0.0, last) };
            }
            let i = (s.floor() as usize).min(axis.nodes - 2);
            let w = s - i as f64;
            let stride: usize = self.axes[k + 1..].iter().map(|a| a.nodes).product();
            let len = out.len();
            for c in 0..len {
                let (base, weight) = out[c];
                out[c] = (base + i * stride, weight * (1.0 - w));
                out.push((base + (i + 1) * stride, weight * w));
            }
        }
        clamped
    }

    /// Layer at or below `t` and the linear weight of the next layer.
    pub fn time_bracket(&self, t: f64) -> (usize, f64) {
        let s = (t / self.dt()).clamp(0.0, self.time_steps as f64);
        let j = (s.floor() as usize).min(self.time_steps - 1);
        (j, s - j as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinModel, CatalogOptions};
    use std::collections::BTreeMap;

    #[test]
    fn merton_default_box() {
        let model = builtin_model(BuiltinModel::MertonConstant, &BTreeMap::new(), CatalogOptions::default()).unwrap();
        let grid = Grid::default_for(&model, &[0.0, 0.0], &[41, 41], 64).unwrap();
        assert!((grid.axes[0].upper - 0.8).abs() < 1e-12);
        assert!((grid.axes[1].upper - 4.0).abs() < 1e-12);
        assert!((grid.axes[0].spacing() - 0.04).abs() < 1e-12);
        assert!(grid.check_point(&[0.0, 0.0]).is_ok());
        assert!(grid.check_point(&[0.75, 0.0]).is_err());
    }

    #[test]
    fn indexing_round_trips() {
        let grid = Grid::new(
            1.0,
            4,
            vec![
                Axis { lower: 0.0, upper: 1.0, nodes: 5 },
                Axis { lower: -1.0, upper: 1.0, nodes: 7 },
                Axis { lower: 2.0, upper: 3.0, nodes: 6 },
            ],
        )
        .unwrap();
        assert_eq!(grid.strides(), vec![42, 6, 1]);
        for flat in 0..grid.node_count() {
            let idx = grid.multi_index(flat);
            let back: usize = idx.iter().zip(grid.strides()).map(|(i, s)| i * s).sum();
            assert_eq!(back, flat);
        }
        assert_eq!(grid.coords(grid.node_count() - 1), vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_small_grids() {
        let axis = Axis { lower: 0.0, upper: 1.0, nodes: 5 };
        assert!(Grid::new(1.0, 1, vec![axis.clone()]).is_err());
        assert!(Grid::new(1.0, 2, vec![Axis { nodes: 4, ..axis.clone() }]).is_err());
        assert!(Grid::new(1.0, 2, vec![Axis { upper: 0.0, ..axis }]).is_err());
    }

    #[test]
    fn corners_reproduce_linear_functions() {
        let grid = Grid::new(
            1.0,
            2,
            vec![Axis { lower: -1.0, upper: 1.0, nodes: 5 }, Axis { lower: 0.0, upper: 2.0, nodes: 9 }],
        )
        .unwrap();
        let f: Vec<f64> = (0..grid.node_count())
            .map(|i| {
                let c = grid.coords(i);
                2.0 * c[0] - c[1] + 0.5
            })
            .collect();
        let mut buf = Vec::new();
        for z in [[0.1, 0.3], [-1.0, 2.0], [0.999, 1.26]] {
            assert!(!grid.corners(&z, &mut buf));
            let v: f64 = buf.iter().map(|(i, w)| w * f[*i]).sum();
            assert!((v - (2.0 * z[0] - z[1] + 0.5)).abs() < 1e-12);
            assert!((buf.iter().map(|c| c.1).sum::<f64>() - 1.0).abs() < 1e-14);
        }
        assert!(grid.corners(&[5.0, 1.0], &mut buf));
        let v: f64 = buf.iter().map(|(i, w)| w * f[*i]).sum();
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn time_bracket_edges() {
        let grid = Grid::new(2.0, 4, vec![Axis { lower: 0.0, upper: 1.0, nodes: 5 }]).unwrap();
        assert_eq!(grid.time_bracket(0.0), (0, 0.0));
        assert_eq!(grid.time_bracket(2.0), (3, 1.0));
        let (j, w) = grid.time_bracket(0.75);
        assert_eq!(j, 1);
        assert!((w - 0.5).abs() < 1e-15);
    }
}
