//! Lowest-order Brezzi–Douglas–Marini shape functions on a triangle.
//!
//! Degrees of freedom per facet `e` with global unit normal `n_e`, traversed
//! from its lower-indexed vertex (`t = 0`) to its higher-indexed vertex:
//!
//! * moment 0: `∫_e v·n_e ds`
//! * moment 1: `∫_e v·n_e (2t − 1) ds`
//!
//! Both functionals use the global normal and orientation, so the normal
//! trace is single-valued across interior facets. The six local shape
//! functions are obtained by inverting the Vandermonde matrix of these
//! functionals on the full linear vector space, in coordinates centered at
//! the cell centroid and scaled by `sqrt(area)`.

use faer::prelude::*;
use faer::Mat;

use super::quadrature::SEGMENT_GAUSS2;
use crate::mesh::{Mesh, Point};

/// Number of BDM1 functions per cell and stress row.
pub const LOCAL_DOFS: usize = 6;

/// Normal-trace weight of moment `k` at parameter `t` of a facet of length
/// `len`: the normal trace of the shape function owning that moment.
pub fn trace_weight(moment: usize, t: f64, len: f64) -> f64 {
    match moment {
        0 => 1.0 / len,
        _ => 3.0 * (2.0 * t - 1.0) / len,
    }
}

pub fn moment_weight(moment: usize, t: f64) -> f64 {
    match moment {
        0 => 1.0,
        _ => 2.0 * t - 1.0,
    }
}

#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub centroid: Point,
    pub scale: f64,
    pub area: f64,
    /// `coeffs[l]` are the coefficients of shape function `l = 2 j + k` on the
    /// monomials `(1,0) (ξ,0) (η,0) (0,1) (0,ξ) (0,η)`.
    pub coeffs: [[f64; 6]; 6],
}

fn monomial(m: usize, xi: f64, eta: f64) -> [f64; 2] {
    match m {
        0 => [1.0, 0.0],
        1 => [xi, 0.0],
        2 => [eta, 0.0],
        3 => [0.0, 1.0],
        4 => [0.0, xi],
        _ => [0.0, eta],
    }
}

impl LocalBasis {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let centroid = mesh.cell_centroid(cell);
        let area = mesh.cell_area(cell);
        let scale = area.sqrt();
        let local = |p: Point| [(p[0] - centroid[0]) / scale, (p[1] - centroid[1]) / scale];

        let vandermonde = Mat::<f64>::from_fn(LOCAL_DOFS, LOCAL_DOFS, |l, m| {
            let facet = mesh.cell_facets[cell][l / 2];
            let moment = l % 2;
            let n = mesh.facet_normal(facet);
            let len = mesh.facet_length(facet);
            SEGMENT_GAUSS2
                .iter()
                .map(|&(t, w)| {
                    let [xi, eta] = local(mesh.facet_point(facet, t));
                    let p = monomial(m, xi, eta);
                    w * len * (p[0] * n[0] + p[1] * n[1]) * moment_weight(moment, t)
                })
                .sum()
        });
        let inverse = vandermonde.partial_piv_lu().solve(Mat::<f64>::identity(LOCAL_DOFS, LOCAL_DOFS));
        let mut coeffs = [[0.0; 6]; 6];
        for (l, row) in coeffs.iter_mut().enumerate() {
            for (m, c) in row.iter_mut().enumerate() {
                *c = inverse[(m, l)];
            }
        }
        Self { centroid, scale, area, coeffs }
    }

    /// Value of shape function `l` at a physical point.
    pub fn value(&self, l: usize, x: Point) -> [f64; 2] {
        let xi = (x[0] - self.centroid[0]) / self.scale;
        let eta = (x[1] - self.centroid[1]) / self.scale;
        let c = &self.coeffs[l];
        [c[0] + c[1] * xi + c[2] * eta, c[3] + c[4] * xi + c[5] * eta]
    }

    /// Cellwise constant divergence of shape function `l`.
    pub fn divergence(&self, l: usize) -> f64 {
        (self.coeffs[l][1] + self.coeffs[l][5]) / self.scale
    }

    /// Values of all six functions at `x`.
    pub fn values(&self, x: Point) -> [[f64; 2]; 6] {
        std::array::from_fn(|l| self.value(l, x))
    }

    /// Integral of shape function `l` over the cell (exact: centroid value).
    pub fn integral(&self, l: usize) -> [f64; 2] {
        let v = self.value(l, self.centroid);
        [v[0] * self.area, v[1] * self.area]
    }
}
