//! Full-order solves of the mixed system
//!
//! ```text
//! A_h σ − Bᵀ w = g_h
//! B σ          = f
//! ```
//!
//! with `w = (u, r)`. The symmetric indefinite form `[[A, Bᵀ], [B, 0]]` is
//! factorized with a sparse LU; its multiplier block equals `−w`.

use std::sync::{Arc, Once};

use faer::sparse::SparseColMat;
use faer::prelude::*;
use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{inf_norm, Discretization, FemError, HenckyVonMises, Hooke};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum FomError {
    #[error("saddle-point factorization failed: {0}")]
    Singular(String),
    #[error("fixed-point iteration did not converge in {iterations} iterations (last update {last:e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionTriplet {
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    /// Number of linear solves after the initial one (1 for linear laws).
    pub iterations: usize,
    /// Relative Σh-norm update per iteration.
    pub residual_history: Vec<f64>,
}

static SEQUENTIAL_FAER: Once = Once::new();

/// Keeps faer kernels single-threaded so that solves are bitwise
/// reproducible; parallelism comes from running many solves at once.
pub fn init_linear_algebra() {
    SEQUENTIAL_FAER.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

fn residual(a: &CsrMatrix, b: &CsrMatrix, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let (sigma, w) = x.split_at(n);
    let mut top = a.mul_vec(sigma);
    let btw = b.tmul_vec(w);
    let bs = b.mul_vec(sigma);
    top.iter_mut().zip(btw).for_each(|(t, v)| *t += v);
    let mut r: Vec<f64> = top.into_iter().chain(bs).collect();
    r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    r
}

/// Solves the saddle-point system for `(σ, (u, r))` given an assembled
/// compliance.
pub fn solve_saddle_point(
    disc: &Discretization,
    a: &CsrMatrix,
    f: &[f64],
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), FomError> {
    init_linear_algebra();
    let n = disc.num_stress();
    let m = disc.num_multipliers();
    if f.len() != m || g.len() != n || a.nrows() != n {
        return Err(FemError::DimensionMismatch {
            what: "saddle-point data",
            expected: n + m,
            got: f.len() + g.len(),
        }
        .into());
    }
    let mut triplets = a.faer_triplets(0, 0);
    triplets.extend(disc.b.faer_triplets(n, 0));
    triplets.extend(disc.b.transpose().faer_triplets(0, n));
    let k = SparseColMat::<usize, f64>::try_new_from_triplets(n + m, n + m, &triplets)
        .map_err(|e| FomError::Singular(format!("{e:?}")))?;
    let lu = k.sp_lu().map_err(|e| FomError::Singular(format!("{e:?}")))?;

    let rhs: Vec<f64> = g.iter().chain(f).copied().collect();
    let scale = inf_norm(&rhs);
    if scale == 0.0 {
        return Ok((vec![0.0; n], vec![0.0; m]));
    }
    let solve = |b: &[f64]| -> Vec<f64> {
        let col = Mat::<f64>::from_fn(n + m, 1, |i, _| b[i]);
        let x = lu.solve(&col);
        (0..n + m).map(|i| x[(i, 0)]).collect()
    };
    let mut x = solve(&rhs);
    let mut res = residual(a, &disc.b, &x, &rhs);
    for _ in 0..3 {
        if inf_norm(&res) <= 1e-14 * scale {
            break;
        }
        let dx = solve(&res);
        x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
        res = residual(a, &disc.b, &x, &rhs);
    }
    let rel = inf_norm(&res) / scale;
    if !rel.is_finite() || x.iter().any(|v| !v.is_finite()) || rel > 1e-6 {
        return Err(FomError::Singular(format!("relative residual {rel:e}")));
    }
    if rel > 1e-10 {
        log::warn!("saddle-point residual {rel:e} above 1e-10");
    }
    let w = x.split_off(n);
    Ok((x, w.into_iter().map(|v| -v).collect()))
}

fn triplet(disc: &Discretization, sigma: Vec<f64>, w: Vec<f64>, iterations: usize, history: Vec<f64>) -> SolutionTriplet {
    let (u, r) = disc.split_multipliers(&w);
    SolutionTriplet {
        u: u.to_vec(),
        r: r.to_vec(),
        sigma,
        iterations,
        residual_history: history,
    }
}

/// Direct solve for a linear (cellwise Hooke) law.
pub fn solve_linear(disc: &Discretization, a: &CsrMatrix, f: &[f64], g: &[f64]) -> Result<SolutionTriplet, FomError> {
    let (sigma, w) = solve_saddle_point(disc, a, f, g)?;
    Ok(triplet(disc, sigma, w, 1, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HenckyOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for HenckyOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

/// Cellwise Lamé parameters induced by a stress field: at each centroid
/// `2μ(ζ)ζ = ‖dev σ‖`.
pub fn hencky_laws(disc: &Discretization, law: &HenckyVonMises, sigma: &[f64]) -> Result<Vec<Hooke>, FemError> {
    (0..disc.num_cells())
        .map(|c| {
            let s = crate::fem::frobenius_norm(&crate::fem::deviator(&disc.stress_at_centroid(sigma, c)));
            law.hooke(law.solve_zeta(s)?)
        })
        .collect()
}

/// Relative Σh-norm change `‖new − old‖ / ‖new‖` (0 for two zero fields).
pub fn relative_update(disc: &Discretization, old: &[f64], new: &[f64]) -> f64 {
    let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    let num = disc.sigma_norm(&diff);
    if num == 0.0 {
        return 0.0;
    }
    num / disc.sigma_norm(new)
}

/// Fixed-point iteration on the Lamé fields, starting from `μ = 2, λ = 0`.
pub fn solve_hencky(
    disc: &Arc<Discretization>,
    law: &HenckyVonMises,
    f: &[f64],
    g: &[f64],
    opts: &HenckyOptions,
) -> Result<SolutionTriplet, FomError> {
    let initial = law.hooke(0.0)?;
    let (mut sigma, _) = solve_saddle_point(disc, &disc.compliance_uniform(initial), f, g)?;
    let mut history = Vec::new();
    for it in 1..=opts.max_iterations {
        let laws = hencky_laws(disc, law, &sigma)?;
        let a = disc.compliance(&laws)?;
        let (next, next_w) = solve_saddle_point(disc, &a, f, g)?;
        let update = relative_update(disc, &sigma, &next);
        history.push(update);
        if update < opts.tolerance {
            return Ok(triplet(disc, next, next_w, it, history));
        }
        sigma = next;
    }
    Err(FomError::NotConverged {
        iterations: opts.max_iterations,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundarySpec, Mat2};
    use crate::mesh::{build_structured_unit_square, BoundarySide, Point};

    fn disc(n: usize, bc: BoundarySpec) -> Arc<Discretization> {
        Arc::new(Discretization::new(build_structured_unit_square(n, n).unwrap(), bc))
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let d = disc(3, BoundarySpec::all_displacement());
        let a = d.compliance_uniform(Hooke::new(1.0, 1.0).unwrap());
        let sol = solve_linear(&d, &a, &vec![0.0; d.num_multipliers()], &vec![0.0; d.num_stress()]).unwrap();
        assert!(sol.sigma.iter().chain(&sol.u).chain(&sol.r).all(|&x| x == 0.0));
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn affine_patch_test() {
        // u = Gx on the whole boundary, no load: σ = A⁻¹ sym G, u_h = cell means
        let g_mat: Mat2 = [[0.3, -0.2], [0.5, 0.1]];
        let law = Hooke::new(0.8, 1.3).unwrap();
        let d = disc(4, BoundarySpec::all_displacement());
        let g = d.boundary_functional(&|_, p: Point| {
            [g_mat[0][0] * p[0] + g_mat[0][1] * p[1], g_mat[1][0] * p[0] + g_mat[1][1] * p[1]]
        });
        let f = vec![0.0; d.num_multipliers()];
        let sol = solve_linear(&d, &d.compliance_uniform(law), &f, &g).unwrap();
        let sym = [[g_mat[0][0], 0.5 * (g_mat[0][1] + g_mat[1][0])], [0.5 * (g_mat[0][1] + g_mat[1][0]), g_mat[1][1]]];
        let exact = law.apply_inverse(&sym);
        for c in 0..d.num_cells() {
            let s = d.stress_at_centroid(&sol.sigma, c);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((s[i][j] - exact[i][j]).abs() < 1e-10, "{s:?} vs {exact:?}");
                }
            }
            let x = d.elements[c].centroid;
            assert!((sol.u[2 * c] - (g_mat[0][0] * x[0] + g_mat[0][1] * x[1])).abs() < 1e-10);
            assert!((sol.u[2 * c + 1] - (g_mat[1][0] * x[0] + g_mat[1][1] * x[1])).abs() < 1e-10);
            // Aσ − ∇u − asym*(r) = 0 gives r = (G12 − G21)/2
            assert!((sol.r[c] - 0.5 * (g_mat[0][1] - g_mat[1][0])).abs() < 1e-10);
        }
    }

    #[test]
    fn footing_constraint_and_determinism() {
        let bc = BoundarySpec::new(&[BoundarySide::Bottom, BoundarySide::Top], &[BoundarySide::Left, BoundarySide::Right]).unwrap();
        let d = disc(10, bc);
        let f = d.load(&|_| [0.0, -1e-2]);
        let g = d.boundary_functional(&|side, _| match side {
            BoundarySide::Top => [0.0, -1e-3],
            _ => [0.0, 0.0],
        });
        let a = d.compliance_uniform(Hooke::new(1.0, 1.0).unwrap());
        let sol = solve_linear(&d, &a, &f, &g).unwrap();
        let res = d.constraint_residual(&sol.sigma, &f);
        assert!(inf_norm(&res) <= 1e-12 * inf_norm(&f).max(1.0));
        assert!(inf_norm(&res[2 * d.num_cells()..]) <= 1e-12);
        let again = solve_linear(&d, &a, &f, &g).unwrap();
        assert_eq!(sol, again);
    }

    #[test]
    fn hencky_degenerate_matches_linear() {
        let d = disc(5, BoundarySpec::all_displacement());
        let f = d.load(&|p| [p[0], -p[1]]);
        let g = d.boundary_functional(&|_, p| [0.1 * p[0] * (1.0 - p[0]), 0.1 * p[1] * (1.0 - p[1])]);
        let law = HenckyVonMises::new(1.5, 2.0).unwrap();
        let it = solve_hencky(&d, &law, &f, &g, &HenckyOptions::default()).unwrap();
        assert_eq!(it.iterations, 1);
        let lin = solve_linear(&d, &d.compliance_uniform(Hooke::new(2.0, 0.0).unwrap()), &f, &g).unwrap();
        for (a, b) in it.sigma.iter().zip(&lin.sigma) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn hencky_zero_data() {
        let d = disc(3, BoundarySpec::all_displacement());
        let law = HenckyVonMises::new(1.2, 0.5).unwrap();
        let sol = solve_hencky(&d, &law, &vec![0.0; d.num_multipliers()], &vec![0.0; d.num_stress()], &HenckyOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.sigma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hencky_nonconvergence_reported() {
        let d = disc(4, BoundarySpec::all_displacement());
        let law = HenckyVonMises::new(2.0, 0.0).unwrap();
        let f = d.load(&|_| [3.0, -2.0]);
        let g = vec![0.0; d.num_stress()];
        let opts = HenckyOptions { tolerance: 1e-10, max_iterations: 1 };
        match solve_hencky(&d, &law, &f, &g, &opts) {
            Err(FomError::NotConverged { history, .. }) => assert_eq!(history.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
