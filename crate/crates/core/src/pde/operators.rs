use super::grid::Grid;
use super::stencil::{self, Stencil};

/// Precomputed per-axis stencils for the second-order scheme.
#[derive(Debug, Clone)]
pub(crate) struct Operators {
    pub dim: usize,
    pub strides: Vec<usize>,
    /// Multi-indices, `dim` entries per node.
    pub index: Vec<usize>,
    d1: Vec<Vec<Stencil>>,
    d2: Vec<Vec<Stencil>>,
}

impl Operators {
    pub fn new(grid: &Grid) -> Operators {
        let dim = grid.dim();
        let nodes = grid.node_count();
        let mut index = Vec::with_capacity(nodes * dim);
        for flat in 0..nodes {
            index.extend(grid.multi_index(flat));
        }
        let per_axis = |f: fn(usize, usize, f64) -> Stencil| -> Vec<Vec<Stencil>> {
            grid.axes
                .iter()
                .map(|a| (0..a.nodes).map(|i| f(i, a.nodes, a.spacing())).collect())
                .collect()
        };
        Operators {
            dim,
            strides: grid.strides(),
            index,
            d1: per_axis(stencil::first),
            d2: per_axis(stencil::second),
        }
    }

    pub fn node_index(&self, node: usize) -> &[usize] {
        &self.index[node * self.dim..(node + 1) * self.dim]
    }

    pub fn gradient(&self, u: &[f64], node: usize, out: &mut [f64]) {
        let idx = self.node_index(node);
        for k in 0..self.dim {
            out[k] = self.d1[k][idx[k]].apply(u, node, self.strides[k]);
        }
    }

    /// `½ Σ_ab c_ab ∂_a∂_b u` with `c` the row-major state covariance.
    pub fn diffusion(&self, u: &[f64], node: usize, cov: &[f64]) -> f64 {
        let idx = self.node_index(node);
        let dim = self.dim;
        let mut acc = 0.0;
        for a in 0..dim {
            let caa = cov[a * dim + a];
            if caa != 0.0 {
                acc += 0.5 * caa * self.d2[a][idx[a]].apply(u, node, self.strides[a]);
            }
            for b in a + 1..dim {
                let cab = cov[a * dim + b];
                if cab != 0.0 {
                    acc += cab
                        * stencil::apply_mixed(
                            &self.d1[a][idx[a]],
                            self.strides[a],
                            &self.d1[b][idx[b]],
                            self.strides[b],
                            u,
                            node,
                        );
                }
            }
        }
        acc
    }

    /// Gradients of a whole layer, `dim` entries per node.
    pub fn layer_gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len() * self.dim];
        for (node, g) in out.chunks_mut(self.dim).enumerate() {
            self.gradient(u, node, g);
        }
        out
    }
}
