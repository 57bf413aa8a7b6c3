//! Assembly of the mixed weak form on Σh = BDM1², Uh = P0², Rh = P0.
//!
//! Multiplier ordering is `[u(0,x), u(0,y), u(1,x), …, r(0), r(1), …]`: all
//! displacement rows first, then all rotation rows. P0 basis functions are
//! cell indicators, so `B` rows are `−∫_c div σ_i` and `∫_c asym σ`.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::constitutive::{Hooke, Mat2};
use super::element::{trace_weight, LocalBasis, LOCAL_DOFS};
use super::quadrature::{bary_to_point, SEGMENT_GAUSS2, TRIANGLE_DEGREE2};
use super::FemError;
use crate::mesh::{BoundarySide, Mesh, Point};
use crate::par;
use crate::sparse::CsrMatrix;

/// Partition of the boundary into displacement (∂uΩ) and traction-free (∂σΩ)
/// sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySpec {
    displacement: Vec<BoundarySide>,
    traction: Vec<BoundarySide>,
}

impl BoundarySpec {
    pub fn new(displacement: &[BoundarySide], traction: &[BoundarySide]) -> Result<Self, FemError> {
        let d: BTreeSet<_> = displacement.iter().copied().collect();
        let t: BTreeSet<_> = traction.iter().copied().collect();
        if d.is_empty() {
            return Err(FemError::InvalidBoundary("displacement boundary must be non-empty".into()));
        }
        if !d.is_disjoint(&t) {
            return Err(FemError::InvalidBoundary("displacement and traction sides overlap".into()));
        }
        if d.len() + t.len() != 4 {
            return Err(FemError::InvalidBoundary("sides must cover the whole boundary".into()));
        }
        Ok(Self {
            displacement: d.into_iter().collect(),
            traction: t.into_iter().collect(),
        })
    }

    pub fn all_displacement() -> Self {
        Self::new(&BoundarySide::ALL, &[]).expect("valid partition")
    }

    pub fn is_displacement(&self, side: BoundarySide) -> bool {
        self.displacement.contains(&side)
    }

    pub fn displacement_sides(&self) -> &[BoundarySide] {
        &self.displacement
    }

    pub fn traction_sides(&self) -> &[BoundarySide] {
        &self.traction
    }
}

/// Numbering of the free stress coefficients and the P0 multipliers.
#[derive(Debug, Clone)]
pub struct DofMap {
    raw_to_free: Vec<Option<usize>>,
    free_to_raw: Vec<usize>,
    num_cells: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, bc: &BoundarySpec) -> Self {
        let mut raw_to_free = vec![None; 4 * mesh.num_facets()];
        let mut free_to_raw = Vec::new();
        for facet in 0..mesh.num_facets() {
            let constrained = mesh.boundary_tags[facet].is_some_and(|side| !bc.is_displacement(side));
            if constrained {
                continue;
            }
            for k in 0..4 {
                raw_to_free[4 * facet + k] = Some(free_to_raw.len());
                free_to_raw.push(4 * facet + k);
            }
        }
        Self {
            raw_to_free,
            free_to_raw,
            num_cells: mesh.num_cells(),
        }
    }

    /// Free index of moment `moment` of stress row `row` on `facet`, or `None`
    /// when the facet lies on ∂σΩ.
    pub fn stress(&self, facet: usize, row: usize, moment: usize) -> Option<usize> {
        self.raw_to_free[4 * facet + 2 * row + moment]
    }

    /// `(facet, row, moment)` of a free stress index.
    pub fn stress_location(&self, free: usize) -> (usize, usize, usize) {
        let raw = self.free_to_raw[free];
        (raw / 4, (raw % 4) / 2, raw % 2)
    }

    pub fn num_stress(&self) -> usize {
        self.free_to_raw.len()
    }

    pub fn num_constrained(&self) -> usize {
        self.raw_to_free.len() - self.free_to_raw.len()
    }

    pub fn num_displacement(&self) -> usize {
        2 * self.num_cells
    }

    pub fn num_rotation(&self) -> usize {
        self.num_cells
    }

    pub fn num_multipliers(&self) -> usize {
        3 * self.num_cells
    }

    pub fn displacement_index(&self, cell: usize, component: usize) -> usize {
        2 * cell + component
    }

    pub fn rotation_index(&self, cell: usize) -> usize {
        2 * self.num_cells + cell
    }

    /// The three constraint rows owned by a cell.
    pub fn cell_rows(&self, cell: usize) -> [usize; 3] {
        [2 * cell, 2 * cell + 1, 2 * self.num_cells + cell]
    }
}

/// Parameter-independent part of the discretization: mesh, DOF numbering,
/// local bases, the constraint operator and the Σh/Uh/Rh Gramians.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub bc: BoundarySpec,
    pub dofs: DofMap,
    pub elements: Vec<LocalBasis>,
    /// `B = (−div, asym)`, `3C × N_Σ`.
    pub b: CsrMatrix,
    /// Cellwise divergence values, `2C × N_Σ`.
    pub div: CsrMatrix,
    pub mass_stress: CsrMatrix,
    /// Σh Gramian `M_Σ + Divᵀ M_U Div`.
    pub gramian: CsrMatrix,
    pub mass_u: Vec<f64>,
    pub mass_r: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: Mesh, bc: BoundarySpec) -> Self {
        let dofs = DofMap::new(&mesh, &bc);
        let elements = par::map_indexed(mesh.num_cells(), |c| LocalBasis::new(&mesh, c));
        let n_cells = mesh.num_cells();
        let n_sigma = dofs.num_stress();

        let mut disc = Self {
            mesh,
            bc,
            dofs,
            elements,
            b: CsrMatrix::from_triplets(0, 0, &[]),
            div: CsrMatrix::from_triplets(0, 0, &[]),
            mass_stress: CsrMatrix::from_triplets(0, 0, &[]),
            gramian: CsrMatrix::from_triplets(0, 0, &[]),
            mass_u: Vec::new(),
            mass_r: Vec::new(),
        };

        let mut b = Vec::new();
        let mut div = Vec::new();
        for c in 0..n_cells {
            let basis = &disc.elements[c];
            let rows = disc.dofs.cell_rows(c);
            for (row, l, dof) in disc.local_dofs(c) {
                let Some(dof) = dof else { continue };
                let dv = basis.divergence(l);
                if l % 2 == 0 {
                    // constant moments carry the whole flux
                    div.push((2 * c + row, dof, dv));
                    b.push((rows[row], dof, -dv * basis.area));
                }
                let integral = basis.integral(l);
                // asym σ = σ_yx − σ_xy
                let a = if row == 1 { integral[0] } else { -integral[1] };
                b.push((rows[2], dof, a));
            }
        }
        disc.b = CsrMatrix::from_triplets(3 * n_cells, n_sigma, &b);
        disc.div = CsrMatrix::from_triplets(2 * n_cells, n_sigma, &div);
        disc.mass_u = (0..n_cells)
            .flat_map(|c| {
                let a = disc.elements[c].area;
                [a, a]
            })
            .collect();
        disc.mass_r = disc.elements.iter().map(|e| e.area).collect();

        let unit = Hooke::new(0.5, 0.0).expect("valid");
        disc.mass_stress = disc.compliance_uniform(unit);
        let mut gram: Vec<_> = disc.mass_stress.triplets().collect();
        for c in 0..n_cells {
            let entries: Vec<_> = disc.local_dofs(c).filter(|&(_, l, d)| l % 2 == 0 && d.is_some()).collect();
            let area = disc.elements[c].area;
            for &(ri, li, di) in &entries {
                for &(rj, lj, dj) in &entries {
                    if ri == rj {
                        let (si, sj) = (disc.elements[c].divergence(li), disc.elements[c].divergence(lj));
                        gram.push((di.unwrap(), dj.unwrap(), area * si * sj));
                    }
                }
            }
        }
        disc.gramian = CsrMatrix::from_triplets(n_sigma, n_sigma, &gram);
        disc
    }

    /// `(row, local function, free index)` for the 12 stress coefficients
    /// touching a cell; local function `l = 2 j + k` for local facet `j`.
    pub fn local_dofs(&self, cell: usize) -> impl Iterator<Item = (usize, usize, Option<usize>)> + '_ {
        (0..2).flat_map(move |row| {
            (0..LOCAL_DOFS).map(move |l| {
                let facet = self.mesh.cell_facets[cell][l / 2];
                (row, l, self.dofs.stress(facet, row, l % 2))
            })
        })
    }

    pub fn num_stress(&self) -> usize {
        self.dofs.num_stress()
    }

    pub fn num_multipliers(&self) -> usize {
        self.dofs.num_multipliers()
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_cells()
    }

    fn local_compliance(&self, cell: usize, law: Hooke) -> Vec<(usize, usize, f64)> {
        let basis = &self.elements[cell];
        let verts = self.mesh.cell_vertices(cell);
        let dofs: Vec<_> = self.local_dofs(cell).collect();
        let coupling = law.trace_coupling();
        let inv2mu = 0.5 / law.mu();
        let mut local = [[0.0; 12]; 12];
        for (bary, w) in TRIANGLE_DEGREE2 {
            let x = bary_to_point(&verts, bary);
            let phi = basis.values(x);
            let weight = w * basis.area * inv2mu;
            for (a, &(ra, la, _)) in dofs.iter().enumerate() {
                for (b, &(rb, lb, _)) in dofs.iter().enumerate() {
                    let mut v = -coupling * phi[la][ra] * phi[lb][rb];
                    if ra == rb {
                        v += phi[la][0] * phi[lb][0] + phi[la][1] * phi[lb][1];
                    }
                    local[a][b] += weight * v;
                }
            }
        }
        let mut out = Vec::with_capacity(144);
        for (a, &(_, _, da)) in dofs.iter().enumerate() {
            for (b, &(_, _, db)) in dofs.iter().enumerate() {
                if let (Some(da), Some(db)) = (da, db) {
                    out.push((da, db, local[a][b]));
                }
            }
        }
        out
    }

    /// `A_h` for cellwise Lamé parameters.
    pub fn compliance(&self, laws: &[Hooke]) -> Result<CsrMatrix, FemError> {
        if laws.len() != self.num_cells() {
            return Err(FemError::DimensionMismatch {
                what: "cellwise laws",
                expected: self.num_cells(),
                got: laws.len(),
            });
        }
        let blocks = par::map_indexed(self.num_cells(), |c| self.local_compliance(c, laws[c]));
        let triplets: Vec<_> = blocks.into_iter().flatten().collect();
        let n = self.num_stress();
        Ok(CsrMatrix::from_triplets(n, n, &triplets))
    }

    pub fn compliance_uniform(&self, law: Hooke) -> CsrMatrix {
        self.compliance(&vec![law; self.num_cells()]).expect("sized")
    }

    /// `f = (∫_c f_u, 0)` over all multiplier rows.
    pub fn load(&self, f_u: &(dyn Fn(Point) -> [f64; 2] + Sync)) -> Vec<f64> {
        let mut f = vec![0.0; self.num_multipliers()];
        for c in 0..self.num_cells() {
            let verts = self.mesh.cell_vertices(c);
            let area = self.elements[c].area;
            for (bary, w) in TRIANGLE_DEGREE2 {
                let v = f_u(bary_to_point(&verts, bary));
                f[2 * c] += w * area * v[0];
                f[2 * c + 1] += w * area * v[1];
            }
        }
        f
    }

    /// `g_h = ⟨g_u, ν·σ̃⟩` over ∂uΩ.
    pub fn boundary_functional(&self, g_u: &(dyn Fn(BoundarySide, Point) -> [f64; 2] + Sync)) -> Vec<f64> {
        let mut g = vec![0.0; self.num_stress()];
        for (facet, side) in self.mesh.boundary_facets() {
            if !self.bc.is_displacement(side) {
                continue;
            }
            let cell = self.mesh.facet_cells[facet].0;
            let j = self.mesh.local_facet_index(cell, facet).expect("incidence");
            let outward = self.mesh.cell_facet_signs[cell][j];
            let len = self.mesh.facet_length(facet);
            for &(t, w) in &SEGMENT_GAUSS2 {
                let val = g_u(side, self.mesh.facet_point(facet, t));
                for row in 0..2 {
                    for moment in 0..2 {
                        let dof = self.dofs.stress(facet, row, moment).expect("free on ∂uΩ");
                        g[dof] += outward * w * len * val[row] * trace_weight(moment, t, len);
                    }
                }
            }
        }
        g
    }

    pub fn assemble(
        self: &Arc<Self>,
        laws: &[Hooke],
        f_u: &(dyn Fn(Point) -> [f64; 2] + Sync),
        g_u: &(dyn Fn(BoundarySide, Point) -> [f64; 2] + Sync),
    ) -> Result<MixedSystem, FemError> {
        Ok(MixedSystem {
            disc: Arc::clone(self),
            a: self.compliance(laws)?,
            f: self.load(f_u),
            g: self.boundary_functional(g_u),
        })
    }

    /// Stress tensor (rows = stress rows) at a point of `cell`.
    pub fn stress_at(&self, sigma: &[f64], cell: usize, x: Point) -> Mat2 {
        let basis = &self.elements[cell];
        let phi = basis.values(x);
        let mut s = [[0.0; 2]; 2];
        for (row, l, dof) in self.local_dofs(cell) {
            if let Some(d) = dof {
                s[row][0] += sigma[d] * phi[l][0];
                s[row][1] += sigma[d] * phi[l][1];
            }
        }
        s
    }

    pub fn stress_at_centroid(&self, sigma: &[f64], cell: usize) -> Mat2 {
        self.stress_at(sigma, cell, self.elements[cell].centroid)
    }

    /// Canonical interpolant of a matrix field (exact for linear fields).
    /// Coefficients on ∂σΩ are dropped.
    pub fn interpolate(&self, field: impl Fn(Point) -> Mat2) -> Vec<f64> {
        let mut sigma = vec![0.0; self.num_stress()];
        for facet in 0..self.mesh.num_facets() {
            let n = self.mesh.facet_normal(facet);
            let len = self.mesh.facet_length(facet);
            for &(t, w) in &SEGMENT_GAUSS2 {
                let s = field(self.mesh.facet_point(facet, t));
                for row in 0..2 {
                    let flux = s[row][0] * n[0] + s[row][1] * n[1];
                    for moment in 0..2 {
                        if let Some(d) = self.dofs.stress(facet, row, moment) {
                            sigma[d] += w * len * flux * super::element::moment_weight(moment, t);
                        }
                    }
                }
            }
        }
        sigma
    }

    pub fn sigma_norm(&self, sigma: &[f64]) -> f64 {
        self.gramian.quad_form(sigma, sigma).max(0.0).sqrt()
    }

    pub fn u_norm(&self, u: &[f64]) -> f64 {
        weighted_norm(&self.mass_u, u)
    }

    pub fn r_norm(&self, r: &[f64]) -> f64 {
        weighted_norm(&self.mass_r, r)
    }

    /// `Bσ − f`
    pub fn constraint_residual(&self, sigma: &[f64], f: &[f64]) -> Vec<f64> {
        let mut r = self.b.mul_vec(sigma);
        r.iter_mut().zip(f).for_each(|(a, b)| *a -= b);
        r
    }

    /// Splits a multiplier vector into `(u, r)`.
    pub fn split_multipliers<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        w.split_at(self.dofs.num_displacement())
    }
}

fn weighted_norm(weights: &[f64], v: &[f64]) -> f64 {
    weights.iter().zip(v).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Assembled operators for one parameter instance.
#[derive(Debug, Clone)]
pub struct MixedSystem {
    pub disc: Arc<Discretization>,
    pub a: CsrMatrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::constitutive::asym2d;
    use crate::mesh::build_structured_unit_square;

    fn disc(n: usize, bc: BoundarySpec) -> Arc<Discretization> {
        Arc::new(Discretization::new(build_structured_unit_square(n, n).unwrap(), bc))
    }

    #[test]
    fn single_square_dimensions() {
        let d = disc(1, BoundarySpec::all_displacement());
        assert_eq!(d.num_stress(), 20);
        assert_eq!(d.dofs.num_displacement(), 4);
        assert_eq!(d.dofs.num_rotation(), 2);
        assert_eq!((d.b.nrows(), d.b.ncols()), (6, 20));
        let s = d.b.to_dense().thin_svd().unwrap();
        let sv = s.S().column_vector();
        assert!(sv[5] > 1e-8 * sv[0], "B must have rank 6: {sv:?}");
    }

    #[test]
    fn traction_sides_are_eliminated() {
        let bc = BoundarySpec::new(
            &[BoundarySide::Bottom, BoundarySide::Top],
            &[BoundarySide::Left, BoundarySide::Right],
        )
        .unwrap();
        let d = disc(10, bc);
        assert_eq!(d.dofs.num_constrained(), 20 * 4);
        assert_eq!(d.num_stress(), 320 * 4 - 80);
    }

    #[test]
    fn boundary_spec_validation() {
        assert!(BoundarySpec::new(&[], &BoundarySide::ALL).is_err());
        assert!(BoundarySpec::new(&[BoundarySide::Top], &[BoundarySide::Top]).is_err());
        assert!(BoundarySpec::new(&[BoundarySide::Top], &[BoundarySide::Left]).is_err());
    }

    #[test]
    fn constant_symmetric_field_is_in_kernel() {
        let d = disc(4, BoundarySpec::all_displacement());
        let sigma = d.interpolate(|_| [[1.0, 0.0], [0.0, 1.0]]);
        assert!(inf_norm(&d.b.mul_vec(&sigma)) < 1e-14);
        let sigma = d.interpolate(|_| [[0.3, -0.7], [-0.7, 2.0]]);
        assert!(inf_norm(&d.b.mul_vec(&sigma)) < 1e-14);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let d = disc(3, BoundarySpec::all_displacement());
        let field = |p: Point| [[1.0 + p[0], 2.0 * p[1] - p[0]], [0.5 * p[1], -p[0] + 3.0 * p[1]]];
        let sigma = d.interpolate(field);
        for c in 0..d.num_cells() {
            for x in d.mesh.cell_vertices(c) {
                let s = d.stress_at(&sigma, c, x);
                let e = field(x);
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((s[i][j] - e[i][j]).abs() < 1e-12);
                    }
                }
            }
        }
        // B rows of the interpolant equal the exact cell integrals
        let bs = d.b.mul_vec(&sigma);
        for c in 0..d.num_cells() {
            let area = d.elements[c].area;
            let centroid = d.elements[c].centroid;
            assert!((bs[2 * c] + area * (1.0 + 2.0)).abs() < 1e-12); // −∫ div row 0
            assert!((bs[2 * c + 1] + area * 3.0).abs() < 1e-12);
            assert!((bs[2 * d.num_cells() + c] - area * asym2d(&field(centroid))).abs() < 1e-12);
        }
    }

    #[test]
    fn compliance_symmetric_and_gramian_positive() {
        let d = disc(3, BoundarySpec::all_displacement());
        let a = d.compliance_uniform(Hooke::new(1.3, 0.7).unwrap());
        assert!(a.max_asymmetry() < 1e-15);
        assert!(d.gramian.max_asymmetry() < 1e-12);
        let evals = d.gramian.to_dense().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        assert!(evals[0] > 0.0);
    }

    #[test]
    fn adjoint_identity_random() {
        use rand::{Rng, SeedableRng};
        let d = disc(5, BoundarySpec::all_displacement());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sigma: Vec<f64> = (0..d.num_stress()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..d.num_multipliers()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = d.b.mul_vec(&sigma).iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = d.b.tmul_vec(&w).iter().zip(&sigma).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn sigma_norm_matches_quadrature() {
        // ‖σ‖²_Σ of a linear field computed independently with the degree-4 rule
        use crate::fem::quadrature::{integrate_triangle, TRIANGLE_DEGREE4};
        let d = disc(2, BoundarySpec::all_displacement());
        let field = |p: Point| [[1.0 + p[0], p[1]], [2.0 * p[0], -p[1] + 0.5]];
        let sigma = d.interpolate(field);
        let mut exact = 0.0;
        for c in 0..d.num_cells() {
            let verts = d.mesh.cell_vertices(c);
            exact += integrate_triangle(&verts, TRIANGLE_DEGREE4, |p| {
                let s = field(p);
                s.iter().flatten().map(|x| x * x).sum()
            });
            // div rows: (2, 1)
            exact += d.elements[c].area * (4.0 + 1.0);
        }
        assert!((d.sigma_norm(&sigma).powi(2) - exact).abs() < 1e-13);
    }

    #[test]
    fn wrong_law_count_rejected() {
        let d = disc(2, BoundarySpec::all_displacement());
        assert!(d.compliance(&[Hooke::new(1.0, 1.0).unwrap()]).is_err());
    }
}
