use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::operators::Operators;
use crate::error::{Error, Result};

/// Identifies how a field was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub model: String,
    pub n: usize,
    pub d: usize,
    pub power: f64,
    pub cutoff: Option<f64>,
    /// FNV-1a hash of the model name, power, grid and solver settings.
    pub config_hash: u64,
}

/// Solution `u` of the log-transformed HJB equation on every layer of a grid,
/// with cached spatial gradients. The value function is `v = (w^a/a) e^{-u}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub meta: FieldMeta,
    values: Vec<f64>,
    gradients: Vec<f64>,
    cutoff_active: Vec<usize>,
}

impl ValueField {
    /// Builds a field from raw layer values, computing the gradient cache.
    pub fn from_values(grid: Grid, meta: FieldMeta, values: Vec<f64>) -> Result<ValueField> {
        let ops = Operators::new(&grid);
        let nodes = grid.node_count();
        if values.len() != grid.layers() * nodes {
            return Err(Error::Format(format!(
                "expected {} values, got {}",
                grid.layers() * nodes,
                values.len()
            )));
        }
        let gradients = values.chunks(nodes).flat_map(|layer| ops.layer_gradient(layer)).collect();
        let layers = grid.layers();
        ValueField::from_parts(grid, meta, values, gradients, vec![0; layers])
    }

    pub(crate) fn from_parts(
        grid: Grid,
        meta: FieldMeta,
        values: Vec<f64>,
        gradients: Vec<f64>,
        cutoff_active: Vec<usize>,
    ) -> Result<ValueField> {
        let nodes = grid.node_count();
        let layers = grid.layers();
        if meta.n + meta.d != grid.dim() {
            return Err(Error::Format(format!(
                "metadata dims {}+{} do not match a {}-axis grid",
                meta.n,
                meta.d,
                grid.dim()
            )));
        }
        if values.len() != layers * nodes
            || gradients.len() != layers * nodes * grid.dim()
            || cutoff_active.len() != layers
        {
            return Err(Error::Format("field arrays do not match the grid".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at layer {}", i / nodes)));
        }
        if values[(layers - 1) * nodes..].iter().any(|v| *v != 0.0) {
            return Err(Error::Format("terminal layer is not identically zero".into()));
        }
        Ok(ValueField { grid, meta, values, gradients, cutoff_active })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        let nodes = self.grid.node_count();
        &self.values[j * nodes..(j + 1) * nodes]
    }

    pub fn layer_gradients(&self, j: usize) -> &[f64] {
        let stride = self.grid.node_count() * self.dim();
        &self.gradients[j * stride..(j + 1) * stride]
    }

    pub fn gradient(&self, j: usize, node: usize) -> &[f64] {
        let dim = self.dim();
        &self.layer_gradients(j)[node * dim..(node + 1) * dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &[f64] {
        &self.gradients
    }

    /// Nodes per layer at which the cutoff constraint was binding.
    pub fn cutoff_active(&self) -> &[usize] {
        &self.cutoff_active
    }

    pub fn terminal_max_abs(&self) -> f64 {
        self.layer(self.grid.time_steps).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `u(t, z)` by linear interpolation in time and multilinear in space.
    pub fn value_at(&self, t: f64, z: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(1 << self.dim());
        self.grid.corners(z, &mut buf);
        let (j, w) = self.grid.time_bracket(t);
        let at = |layer: &[f64]| buf.iter().map(|(i, c)| c * layer[*i]).sum::<f64>();
        (1.0 - w) * at(self.layer(j)) + w * at(self.layer(j + 1))
    }

    /// `u_z(t, z)` interpolated the same way as [`ValueField::value_at`].
    pub fn gradient_at(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(1 << self.dim());
        self.grid.corners(z, &mut buf);
        let (j, w) = self.grid.time_bracket(t);
        let mut out = vec![0.0; self.dim()];
        for (layer, lw) in [(j, 1.0 - w), (j + 1, w)] {
            for (i, c) in &buf {
                for (o, g) in out.iter_mut().zip(self.gradient(layer, *i)) {
                    *o += lw * c * g;
                }
            }
        }
        out
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::grid::Axis;

    fn grid() -> Grid {
        Grid::new(
            1.0,
            4,
            vec![Axis { lower: -1.0, upper: 1.0, nodes: 5 }, Axis { lower: -2.0, upper: 2.0, nodes: 9 }],
        )
        .unwrap()
    }

    fn meta() -> FieldMeta {
        FieldMeta { model: "test".into(), n: 1, d: 1, power: 0.5, cutoff: None, config_hash: 0 }
    }

    #[test]
    fn gradient_cache_matches_fresh_stencil() {
        let g = grid();
        let nodes = g.node_count();
        let mut values = vec![0.0; g.layers() * nodes];
        for j in 0..g.time_steps {
            for i in 0..nodes {
                let c = g.coords(i);
                values[j * nodes + i] = (c[0] * c[1]).sin() * (g.time_steps - j) as f64;
            }
        }
        let field = ValueField::from_values(g.clone(), meta(), values).unwrap();
        let ops = Operators::new(&g);
        let mut fresh = [0.0; 2];
        for j in 0..g.layers() {
            for i in 0..nodes {
                ops.gradient(field.layer(j), i, &mut fresh);
                assert_eq!(field.gradient(j, i), &fresh);
            }
        }
    }

    #[test]
    fn rejects_nonzero_terminal_layer() {
        let g = grid();
        let values = vec![1.0; g.layers() * g.node_count()];
        assert!(ValueField::from_values(g, meta(), values).is_err());
    }

    #[test]
    fn interpolates_in_time() {
        let g = grid();
        let nodes = g.node_count();
        let values: Vec<f64> = (0..g.layers()).flat_map(|j| vec![-(4 - j as i32) as f64; nodes]).collect();
        let field = ValueField::from_values(g, meta(), values).unwrap();
        assert!((field.value_at(0.125, &[0.3, 0.1]) + 3.5).abs() < 1e-14);
        assert_eq!(field.gradient_at(0.5, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
