//! Spanning-forest right-inverse of the momentum constraint operator.
//!
//! Each cell owns exactly one "tree facet": the facet to its parent in a
//! breadth-first forest over the dual graph, or, for a root, a facet on ∂uΩ.
//! Solving the cell's three equations (two linear momentum rows and one
//! angular momentum row) for three of the four stress coefficients on its
//! tree facet, leaves first, yields `S_I` with `B S_I = I`. All other
//! coefficients are zero. The transpose is the same sweep run root first.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{BoundarySpec, Discretization};
use crate::mesh::{BoundarySide, DualGraph, Mesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("root count must be positive")]
    NoRoots,
    #[error("requested {requested} roots but only {available} cells touch the displacement boundary")]
    TooManyRoots { requested: usize, available: usize },
    #[error("cell {0} is not reachable from any root")]
    Unreachable(usize),
    #[error("tree facet of cell {cell} carries a constrained stress coefficient")]
    ConstrainedTreeFacet { cell: usize },
    #[error("local block of cell {cell} is numerically singular (|det| = {det:e})")]
    SingularBlock { cell: usize, det: f64 },
}

/// Rooted breadth-first forest over the dual graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningForest {
    /// `(cell, boundary facet on ∂uΩ)` per tree.
    pub roots: Vec<(usize, usize)>,
    pub parent: Vec<Option<usize>>,
    pub parent_facet: Vec<Option<usize>>,
    /// Index into `roots` of the tree containing each cell.
    pub tree_of: Vec<usize>,
    /// Breadth-first visiting order, roots first.
    pub bfs_order: Vec<usize>,
}

impl SpanningForest {
    pub fn num_trees(&self) -> usize {
        self.roots.len()
    }

    pub fn num_cells(&self) -> usize {
        self.parent.len()
    }

    /// The facet whose coefficients a cell solves for.
    pub fn tree_facet(&self, cell: usize) -> usize {
        match self.parent_facet[cell] {
            Some(f) => f,
            None => self.roots[self.tree_of[cell]].1,
        }
    }

    pub fn tree_facets(&self) -> Vec<usize> {
        (0..self.num_cells()).map(|c| self.tree_facet(c)).collect()
    }

    /// Leaves-first order used by the forward sweep.
    pub fn elimination_order(&self) -> Vec<usize> {
        self.bfs_order.iter().rev().copied().collect()
    }

    pub fn num_tree_edges(&self) -> usize {
        self.parent_facet.iter().filter(|p| p.is_some()).count()
    }

    /// Structural invariants: each cell once, one tree facet per cell, tree
    /// facets distinct, root facets on ∂uΩ.
    pub fn validate(&self, mesh: &Mesh, bc: &BoundarySpec) -> Result<(), String> {
        let n = mesh.num_cells();
        let mut seen = vec![false; n];
        for &c in &self.bfs_order {
            if std::mem::replace(&mut seen[c], true) {
                return Err(format!("cell {c} visited twice"));
            }
        }
        if seen.iter().any(|s| !s) || self.bfs_order.len() != n {
            return Err("forest does not cover every cell".into());
        }
        let mut facets = self.tree_facets();
        facets.sort_unstable();
        facets.dedup();
        if facets.len() != n {
            return Err("tree facets are not distinct".into());
        }
        if self.num_tree_edges() + self.num_trees() != n {
            return Err("tree facet count differs from cell count".into());
        }
        for &(cell, facet) in &self.roots {
            match mesh.boundary_tags[facet] {
                Some(side) if bc.is_displacement(side) => {}
                _ => return Err(format!("root facet {facet} is not on the displacement boundary")),
            }
            if mesh.local_facet_index(cell, facet).is_none() {
                return Err(format!("root facet {facet} does not bound cell {cell}"));
            }
        }
        Ok(())
    }
}

/// Counter-clockwise arc-length position of a boundary point, starting at
/// the origin.
fn perimeter_position(side: BoundarySide, p: [f64; 2]) -> f64 {
    match side {
        BoundarySide::Bottom => p[0],
        BoundarySide::Right => 1.0 + p[1],
        BoundarySide::Top => 3.0 - p[0],
        BoundarySide::Left => 4.0 - p[1],
    }
}

/// Cells adjacent to ∂uΩ (one entry per cell, its first such facet), ordered
/// along the boundary.
pub fn root_candidates(mesh: &Mesh, bc: &BoundarySpec) -> Vec<(usize, usize)> {
    let mut facets: Vec<(f64, usize)> = mesh
        .boundary_facets()
        .filter(|&(_, side)| bc.is_displacement(side))
        .map(|(f, side)| (perimeter_position(side, mesh.facet_midpoint(f)), f))
        .collect();
    facets.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut taken = vec![false; mesh.num_cells()];
    facets
        .into_iter()
        .filter_map(|(_, f)| {
            let cell = mesh.facet_cells[f].0;
            (!std::mem::replace(&mut taken[cell], true)).then_some((cell, f))
        })
        .collect()
}

/// Multi-source breadth-first forest with `root_count` roots spread evenly
/// along ∂uΩ.
pub fn build_forest(
    mesh: &Mesh,
    dual: &DualGraph,
    bc: &BoundarySpec,
    root_count: usize,
) -> Result<SpanningForest, TreeError> {
    if root_count == 0 {
        return Err(TreeError::NoRoots);
    }
    let candidates = root_candidates(mesh, bc);
    let m = candidates.len();
    if root_count > m {
        return Err(TreeError::TooManyRoots {
            requested: root_count,
            available: m,
        });
    }
    let roots: Vec<_> = (0..root_count).map(|k| candidates[(2 * k + 1) * m / (2 * root_count)]).collect();

    let n = mesh.num_cells();
    let mut parent = vec![None; n];
    let mut parent_facet = vec![None; n];
    let mut tree_of = vec![usize::MAX; n];
    let mut bfs_order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    for (t, &(cell, _)) in roots.iter().enumerate() {
        tree_of[cell] = t;
        queue.push_back(cell);
    }
    while let Some(cell) = queue.pop_front() {
        bfs_order.push(cell);
        for &(next, facet) in &dual.adjacency[cell] {
            if tree_of[next] == usize::MAX {
                tree_of[next] = tree_of[cell];
                parent[next] = Some(cell);
                parent_facet[next] = Some(facet);
                queue.push_back(next);
            }
        }
    }
    if let Some(cell) = tree_of.iter().position(|&t| t == usize::MAX) {
        return Err(TreeError::Unreachable(cell));
    }
    Ok(SpanningForest {
        roots,
        parent,
        parent_facet,
        tree_of,
        bfs_order,
    })
}

type Mat3 = [[f64; 3]; 3];

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &Mat3, det: f64) -> Mat3 {
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

fn mul3(m: &Mat3, x: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2])
}

fn tmul3(m: &Mat3, x: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|j| m[0][j] * x[0] + m[1][j] * x[1] + m[2][j] * x[2])
}

#[derive(Debug, Clone)]
struct CellBlock {
    rows: [usize; 3],
    dofs: [usize; 3],
    inverse: Mat3,
    parent: Option<usize>,
    /// Parent rows restricted to this cell's selected coefficients.
    coupling: Mat3,
    det: f64,
}

/// Linear-time realization of `S_I = Π*(BΠ*)⁻¹` and its transpose.
#[derive(Debug, Clone)]
pub struct TreeFactorization {
    num_stress: usize,
    num_multipliers: usize,
    order: Vec<usize>,
    blocks: Vec<CellBlock>,
}

impl TreeFactorization {
    pub fn new(disc: &Discretization, forest: &SpanningForest) -> Result<Self, TreeError> {
        let bt = disc.b.transpose();
        let column = |dof: usize, rows: &[usize; 3]| -> [f64; 3] {
            let mut col = [0.0; 3];
            for (r, v) in bt.row(dof) {
                if let Some(i) = rows.iter().position(|&x| x == r) {
                    col[i] = v;
                }
            }
            col
        };

        let mut blocks = Vec::with_capacity(disc.num_cells());
        for cell in 0..disc.num_cells() {
            let rows = disc.dofs.cell_rows(cell);
            let facet = forest.tree_facet(cell);
            let mut candidates = [0usize; 4];
            for row in 0..2 {
                for moment in 0..2 {
                    candidates[2 * row + moment] = disc
                        .dofs
                        .stress(facet, row, moment)
                        .ok_or(TreeError::ConstrainedTreeFacet { cell })?;
                }
            }
            let cols = candidates.map(|d| column(d, &rows));
            let row_scale: f64 = (0..3)
                .map(|i| cols.iter().fold(0.0f64, |m, c| m.max(c[i].abs())))
                .product();

            // keep the three columns with the largest |det|
            let mut best: Option<([usize; 3], Mat3, f64)> = None;
            for skip in (0..4).rev() {
                let pick: Vec<usize> = (0..4).filter(|&k| k != skip).collect();
                let pick = [pick[0], pick[1], pick[2]];
                let m: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| cols[pick[j]][i]));
                let det = det3(&m);
                if best.as_ref().is_none_or(|b| det.abs() > b.2.abs()) {
                    best = Some((pick, m, det));
                }
            }
            let (pick, m, det) = best.expect("four candidate subsets");
            if !(det.abs() >= 1e-10 * row_scale) || row_scale == 0.0 {
                return Err(TreeError::SingularBlock { cell, det });
            }
            let dofs = pick.map(|k| candidates[k]);
            let parent = forest.parent[cell];
            let coupling = match parent {
                Some(p) => {
                    let prow = disc.dofs.cell_rows(p);
                    let pc = dofs.map(|d| column(d, &prow));
                    std::array::from_fn(|i| std::array::from_fn(|j| pc[j][i]))
                }
                None => [[0.0; 3]; 3],
            };
            blocks.push(CellBlock {
                rows,
                dofs,
                inverse: inverse3(&m, det),
                parent,
                coupling,
                det,
            });
        }
        Ok(Self {
            num_stress: disc.num_stress(),
            num_multipliers: disc.num_multipliers(),
            order: forest.elimination_order(),
            blocks,
        })
    }

    pub fn num_stress(&self) -> usize {
        self.num_stress
    }

    pub fn num_multipliers(&self) -> usize {
        self.num_multipliers
    }

    /// Smallest absolute local determinant.
    pub fn min_abs_det(&self) -> f64 {
        self.blocks.iter().map(|b| b.det.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Selected stress coefficients of each cell, in cell order.
    pub fn selected_dofs(&self) -> Vec<[usize; 3]> {
        self.blocks.iter().map(|b| b.dofs).collect()
    }

    /// `S_I f`: a stress with `B S_I f = f`, supported on tree facets.
    pub fn apply_si(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.num_multipliers, "functional dimension");
        let mut rhs: Vec<[f64; 3]> = self.blocks.iter().map(|b| b.rows.map(|r| f[r])).collect();
        let mut sigma = vec![0.0; self.num_stress];
        for &cell in &self.order {
            let block = &self.blocks[cell];
            let x = mul3(&block.inverse, &rhs[cell]);
            for (d, v) in block.dofs.iter().zip(x) {
                sigma[*d] = v;
            }
            if let Some(p) = block.parent {
                let push = mul3(&block.coupling, &x);
                for (r, v) in rhs[p].iter_mut().zip(push) {
                    *r -= v;
                }
            }
        }
        sigma
    }

    /// `S_Iᵀ φ`, the root-to-leaves transposed sweep.
    pub fn apply_si_adjoint(&self, phi: &[f64]) -> Vec<f64> {
        assert_eq!(phi.len(), self.num_stress, "stress functional dimension");
        let mut y = vec![[0.0; 3]; self.blocks.len()];
        for &cell in self.order.iter().rev() {
            let block = &self.blocks[cell];
            let mut t = block.dofs.map(|d| phi[d]);
            if let Some(p) = block.parent {
                let pull = tmul3(&block.coupling, &y[p]);
                for (a, b) in t.iter_mut().zip(pull) {
                    *a -= b;
                }
            }
            y[cell] = tmul3(&block.inverse, &t);
        }
        let mut out = vec![0.0; self.num_multipliers];
        for (block, yc) in self.blocks.iter().zip(&y) {
            for (r, v) in block.rows.iter().zip(yc) {
                out[*r] = *v;
            }
        }
        out
    }

    /// `S_0 σ = σ − S_I B σ`, the projection onto `ker B` along `range S_I`.
    pub fn apply_s0(&self, b: &CsrMatrix, sigma: &[f64]) -> Vec<f64> {
        let particular = self.apply_si(&b.mul_vec(sigma));
        sigma.iter().zip(particular).map(|(s, p)| s - p).collect()
    }

    /// `S_0ᵀ φ = φ − Bᵀ S_Iᵀ φ`
    pub fn apply_s0_adjoint(&self, b: &CsrMatrix, phi: &[f64]) -> Vec<f64> {
        let back = b.tmul_vec(&self.apply_si_adjoint(phi));
        phi.iter().zip(back).map(|(p, q)| p - q).collect()
    }

    /// ℓ² operator norm of `S_0` by power iteration on `S_0ᵀ S_0`.
    pub fn kernel_projector_norm(&self, b: &CsrMatrix, iterations: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..self.num_stress).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let w = self.apply_s0_adjoint(b, &self.apply_s0(b, &v));
            estimate = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            v = w;
        }
        estimate.max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::inf_norm;
    use crate::mesh::{build_dual_graph, build_structured_unit_square};

    fn footing_bc() -> BoundarySpec {
        BoundarySpec::new(
            &[BoundarySide::Bottom, BoundarySide::Top],
            &[BoundarySide::Left, BoundarySide::Right],
        )
        .unwrap()
    }

    fn setup(n: usize, bc: BoundarySpec, roots: usize) -> (Discretization, SpanningForest, TreeFactorization) {
        let mesh = build_structured_unit_square(n, n).unwrap();
        let dual = build_dual_graph(&mesh);
        let forest = build_forest(&mesh, &dual, &bc, roots).unwrap();
        let disc = Discretization::new(mesh, bc);
        let fact = TreeFactorization::new(&disc, &forest).unwrap();
        (disc, forest, fact)
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forest_sizes() {
        let mesh = build_structured_unit_square(1, 1).unwrap();
        let dual = build_dual_graph(&mesh);
        let bc = BoundarySpec::all_displacement();
        let forest = build_forest(&mesh, &dual, &bc, 1).unwrap();
        assert_eq!(forest.num_tree_edges() + forest.num_trees(), 2);

        let mesh = build_structured_unit_square(10, 10).unwrap();
        let dual = build_dual_graph(&mesh);
        let forest = build_forest(&mesh, &dual, &bc, 1).unwrap();
        assert_eq!(forest.num_tree_edges(), 199);
        forest.validate(&mesh, &bc).unwrap();
        let forest = build_forest(&mesh, &dual, &bc, 4).unwrap();
        assert_eq!((forest.num_trees(), forest.num_tree_edges()), (4, 196));
        forest.validate(&mesh, &bc).unwrap();
    }

    #[test]
    fn too_many_roots_rejected() {
        let mesh = build_structured_unit_square(2, 2).unwrap();
        let dual = build_dual_graph(&mesh);
        let bc = footing_bc();
        let available = root_candidates(&mesh, &bc).len();
        assert_eq!(available, 4);
        assert_eq!(
            build_forest(&mesh, &dual, &bc, 5).unwrap_err(),
            TreeError::TooManyRoots { requested: 5, available: 4 }
        );
        assert_eq!(build_forest(&mesh, &dual, &bc, 0).unwrap_err(), TreeError::NoRoots);
    }

    #[test]
    fn single_square_blocks_invertible() {
        let (_, _, fact) = setup(1, BoundarySpec::all_displacement(), 1);
        assert_eq!(fact.blocks.len(), 2);
        assert!(fact.min_abs_det() > 0.0);
    }

    #[test]
    fn right_inverse_random() {
        let (disc, _, fact) = setup(10, BoundarySpec::all_displacement(), 1);
        assert!(fact.apply_si(&vec![0.0; disc.num_multipliers()]).iter().all(|&x| x == 0.0));
        let f = random(disc.num_multipliers(), 1);
        let sigma = fact.apply_si(&f);
        let res = disc.constraint_residual(&sigma, &f);
        assert!(inf_norm(&res) <= 1e-12 * inf_norm(&f));
    }

    #[test]
    fn kernel_projector_properties() {
        let (disc, _, fact) = setup(6, footing_bc(), 1);
        let sigma = random(disc.num_stress(), 2);
        let s0 = fact.apply_s0(&disc.b, &sigma);
        assert!(inf_norm(&disc.b.mul_vec(&s0)) <= 1e-12 * inf_norm(&disc.b.mul_vec(&sigma)) + 1e-14);
        let s00 = fact.apply_s0(&disc.b, &s0);
        assert!(s0.iter().zip(&s00).all(|(a, b)| (a - b).abs() < 1e-12));
        let f = random(disc.num_multipliers(), 3);
        let z = fact.apply_s0(&disc.b, &fact.apply_si(&f));
        assert!(inf_norm(&z) < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        let (disc, _, fact) = setup(6, BoundarySpec::all_displacement(), 3);
        assert!(fact.apply_si_adjoint(&vec![0.0; disc.num_stress()]).iter().all(|&x| x == 0.0));
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            let f = random(disc.num_multipliers(), 100 + k);
            let phi = random(disc.num_stress(), 200 + k);
            let lhs: f64 = fact.apply_si(&f).iter().zip(&phi).map(|(a, b)| a * b).sum();
            let rhs: f64 = fact.apply_si_adjoint(&phi).iter().zip(&f).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn deterministic_selection() {
        let (_, _, a) = setup(5, footing_bc(), 2);
        let (_, _, b) = setup(5, footing_bc(), 2);
        assert_eq!(a.selected_dofs(), b.selected_dofs());
    }

    #[test]
    fn forest_choice_changes_field_not_constraint() {
        let (disc, _, one) = setup(8, BoundarySpec::all_displacement(), 1);
        let (_, _, four) = setup(8, BoundarySpec::all_displacement(), 4);
        let f = random(disc.num_multipliers(), 9);
        let (a, b) = (one.apply_si(&f), four.apply_si(&f));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
        assert!(inf_norm(&disc.constraint_residual(&a, &f)) <= 1e-12 * inf_norm(&f));
        assert!(inf_norm(&disc.constraint_residual(&b, &f)) <= 1e-12 * inf_norm(&f));
    }

    #[test]
    fn projector_norm_at_least_one() {
        let (disc, _, fact) = setup(4, footing_bc(), 1);
        let norm = fact.kernel_projector_norm(&disc.b, 50, 1);
        assert!(norm >= 1.0 - 1e-6, "{norm}");
    }
}
