//! Finite-difference weights on a uniform axis.

/// Up to five `(offset, weight)` taps along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    offsets: [isize; 5],
    weights: [f64; 5],
    len: usize,
}

impl Stencil {
    fn new(taps: &[(isize, f64)], scale: f64) -> Stencil {
        let mut offsets = [0; 5];
        let mut weights = [0.0; 5];
        for (k, &(o, w)) in taps.iter().enumerate() {
            offsets[k] = o;
            weights[k] = w * scale;
        }
        Stencil { offsets, weights, len: taps.len() }
    }

    pub fn taps(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        self.offsets[..self.len].iter().copied().zip(self.weights[..self.len].iter().copied())
    }

    /// Applies the stencil to `values` at flat index `centre` with axis stride `stride`.
    #[inline]
    pub fn apply(&self, values: &[f64], centre: usize, stride: usize) -> f64 {
        self.taps()
            .map(|(o, w)| w * values[(centre as isize + o * stride as isize) as usize])
            .sum()
    }
}

/// Second-order first derivative: central inside, one-sided three-point at
/// the two ends.
pub fn first(i: usize, nodes: usize, h: f64) -> Stencil {
    let s = 1.0 / (2.0 * h);
    if i == 0 {
        Stencil::new(&[(0, -3.0), (1, 4.0), (2, -1.0)], s)
    } else if i + 1 == nodes {
        Stencil::new(&[(0, 3.0), (-1, -4.0), (-2, 1.0)], s)
    } else {
        Stencil::new(&[(-1, -1.0), (1, 1.0)], s)
    }
}

/// Second-order second derivative: central inside, one-sided four-point at
/// the two ends.
pub fn second(i: usize, nodes: usize, h: f64) -> Stencil {
    let s = 1.0 / (h * h);
    if i == 0 {
        Stencil::new(&[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)], s)
    } else if i + 1 == nodes {
        Stencil::new(&[(0, 2.0), (-1, -5.0), (-2, 4.0), (-3, -1.0)], s)
    } else {
        Stencil::new(&[(-1, 1.0), (0, -2.0), (1, 1.0)], s)
    }
}

/// Fourth-order central first derivative, defined two nodes away from the ends.
pub fn first4(i: usize, nodes: usize, h: f64) -> Option<Stencil> {
    (i >= 2 && i + 2 < nodes)
        .then(|| Stencil::new(&[(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)], 1.0 / (12.0 * h)))
}

/// Fourth-order central second derivative, defined two nodes away from the ends.
pub fn second4(i: usize, nodes: usize, h: f64) -> Option<Stencil> {
    (i >= 2 && i + 2 < nodes).then(|| {
        Stencil::new(&[(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)], 1.0 / (12.0 * h * h))
    })
}

/// Mixed derivative as the tensor product of two first-derivative stencils.
#[inline]
pub fn apply_mixed(a: &Stencil, sa: usize, b: &Stencil, sb: usize, values: &[f64], centre: usize) -> f64 {
    let mut acc = 0.0;
    for (oa, wa) in a.taps() {
        let base = centre as isize + oa * sa as isize;
        for (ob, wb) in b.taps() {
            acc += wa * wb * values[(base + ob * sb as isize) as usize];
        }
    }
    acc
}
