//! Proper orthogonal decomposition of snapshot sets.

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum PodError {
    #[error("no snapshots")]
    Empty,
    #[error("snapshot {index} has length {got}, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("requested {requested} modes but the snapshots have rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("reduced dimension must be positive")]
    ZeroDimension,
    #[error("singular value decomposition failed")]
    Svd,
}

/// Inner product in which the basis is orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PodInner {
    #[default]
    Euclidean,
    /// Σh inner product `xᵀ D y`.
    Gramian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub dim: usize,
    pub inner: PodInner,
    /// `n` basis vectors of length `dim`.
    pub columns: Vec<Vec<f64>>,
    /// All singular values of the snapshot matrix, non-increasing.
    pub singular_values: Vec<f64>,
    /// `Vᵀ D V`, row-major `n × n`.
    pub latent_gramian: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let pivot = v.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn numerical_rank(s: &[f64], rows: usize, cols: usize) -> usize {
    let top = s.first().copied().unwrap_or(0.0);
    let tol = rows.max(cols) as f64 * f64::EPSILON * top;
    s.iter().filter(|&&x| x > tol).count()
}

impl PodBasis {
    pub fn n(&self) -> usize {
        self.columns.len()
    }

    /// Latent Gramian entry `(i, j)`.
    pub fn gramian_entry(&self, i: usize, j: usize) -> f64 {
        self.latent_gramian[i * self.n() + j]
    }

    /// Coefficients of the orthogonal projection in the basis' inner product.
    pub fn project(&self, x: &[f64], gramian: Option<&CsrMatrix>) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "vector length");
        match (self.inner, gramian) {
            (PodInner::Euclidean, _) => self.columns.iter().map(|v| dot(v, x)).collect(),
            (PodInner::Gramian, Some(d)) => {
                let dx = d.mul_vec(x);
                self.columns.iter().map(|v| dot(v, &dx)).collect()
            }
            (PodInner::Gramian, None) => panic!("Gramian-orthonormal basis needs the Gramian to project"),
        }
    }

    pub fn reconstruct(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.n(), "latent length");
        let mut out = vec![0.0; self.dim];
        for (v, &cj) in self.columns.iter().zip(c) {
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += cj * vi);
        }
        out
    }

    /// `V Vᵀ x` (Euclidean bases only).
    pub fn project_reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.reconstruct(&self.project(x, None))
    }

    /// Mean squared ℓ² projection error over a snapshot set.
    pub fn mean_projection_error(&self, snapshots: &[Vec<f64>], gramian: Option<&CsrMatrix>) -> f64 {
        let total: f64 = snapshots
            .iter()
            .map(|s| {
                let p = self.reconstruct(&self.project(s, gramian));
                s.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        total / snapshots.len() as f64
    }

    /// Replaces every column by `map(column)` and restores orthonormality in
    /// the basis' inner product with two modified Gram–Schmidt sweeps.
    pub fn mapped<F: Fn(&[f64]) -> Vec<f64>>(&self, map: F, gramian: &CsrMatrix) -> Self {
        let inner = |a: &[f64], b: &[f64]| match self.inner {
            PodInner::Euclidean => dot(a, b),
            PodInner::Gramian => dot(a, &gramian.mul_vec(b)),
        };
        let mut columns: Vec<Vec<f64>> = self.columns.iter().map(|v| map(v)).collect();
        for _ in 0..2 {
            for j in 0..columns.len() {
                let (done, rest) = columns.split_at_mut(j);
                let v = &mut rest[0];
                for q in done.iter() {
                    let c = inner(q, v);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
                }
                let norm = inner(v, v).sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Self {
            dim: self.dim,
            inner: self.inner,
            latent_gramian: latent_gramian(&columns, gramian),
            columns,
            singular_values: self.singular_values.clone(),
        }
    }

    /// Truncates to the leading `n` modes.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n());
        let old = self.n();
        let mut g = Vec::with_capacity(n * n);
        for i in 0..n {
            g.extend_from_slice(&self.latent_gramian[i * old..i * old + n]);
        }
        Self {
            dim: self.dim,
            inner: self.inner,
            columns: self.columns[..n].to_vec(),
            singular_values: self.singular_values.clone(),
            latent_gramian: g,
        }
    }
}

fn check_snapshots(snapshots: &[Vec<f64>]) -> Result<usize, PodError> {
    let first = snapshots.first().ok_or(PodError::Empty)?;
    let dim = first.len();
    for (index, s) in snapshots.iter().enumerate() {
        if s.len() != dim {
            return Err(PodError::Ragged {
                index,
                expected: dim,
                got: s.len(),
            });
        }
    }
    Ok(dim)
}

fn latent_gramian(columns: &[Vec<f64>], gramian: &CsrMatrix) -> Vec<f64> {
    let dv: Vec<Vec<f64>> = columns.iter().map(|v| gramian.mul_vec(v)).collect();
    let n = columns.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = dot(&columns[i], &dv[j]);
        }
    }
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (g[i * n + j] + g[j * n + i]);
            g[i * n + j] = m;
            g[j * n + i] = m;
        }
    }
    g
}

/// Leading `n` left singular vectors of the snapshot matrix `Ξ = [ξ_1 … ξ_N]`.
pub fn compute_pod(snapshots: &[Vec<f64>], n: usize, gramian: &CsrMatrix) -> Result<PodBasis, PodError> {
    let dim = check_snapshots(snapshots)?;
    if n == 0 {
        return Err(PodError::ZeroDimension);
    }
    crate::fom::init_linear_algebra();
    let xi = Mat::<f64>::from_fn(dim, snapshots.len(), |i, j| snapshots[j][i]);
    let svd = xi.thin_svd().map_err(|_| PodError::Svd)?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let rank = numerical_rank(&s, dim, snapshots.len());
    if n > rank {
        return Err(PodError::RankDeficient { requested: n, rank });
    }
    let u = svd.U();
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut v: Vec<f64> = (0..dim).map(|i| u[(i, j)]).collect();
            fix_sign(&mut v);
            v
        })
        .collect();
    Ok(PodBasis {
        dim,
        inner: PodInner::Euclidean,
        latent_gramian: latent_gramian(&columns, gramian),
        columns,
        singular_values: s,
    })
}

/// POD in the Σh inner product by the method of snapshots: eigenpairs of
/// `ΞᵀDΞ` give `V = Ξ U Λ^{-1/2}`, orthonormal in `D`.
pub fn compute_pod_weighted(snapshots: &[Vec<f64>], n: usize, gramian: &CsrMatrix) -> Result<PodBasis, PodError> {
    let dim = check_snapshots(snapshots)?;
    if n == 0 {
        return Err(PodError::ZeroDimension);
    }
    crate::fom::init_linear_algebra();
    let count = snapshots.len();
    let d_xi: Vec<Vec<f64>> = snapshots.iter().map(|s| gramian.mul_vec(s)).collect();
    let k = Mat::<f64>::from_fn(count, count, |i, j| dot(&snapshots[i], &d_xi[j]));
    let k = Mat::<f64>::from_fn(count, count, |i, j| 0.5 * (k[(i, j)] + k[(j, i)]));
    let eig = k.self_adjoint_eigen(faer::Side::Lower).map_err(|_| PodError::Svd)?;
    let vals = eig.S().column_vector();
    let vecs = eig.U();
    // ascending eigenvalues: walk from the top
    let order: Vec<usize> = (0..count).rev().collect();
    let s: Vec<f64> = order.iter().map(|&i| vals[i].max(0.0).sqrt()).collect();
    let rank = numerical_rank(&s, dim, count);
    if n > rank {
        return Err(PodError::RankDeficient { requested: n, rank });
    }
    let columns: Vec<Vec<f64>> = order[..n]
        .iter()
        .zip(&s)
        .map(|(&e, &sv)| {
            let mut v = vec![0.0; dim];
            for (j, snap) in snapshots.iter().enumerate() {
                let w = vecs[(j, e)] / sv;
                v.iter_mut().zip(snap).for_each(|(o, x)| *o += w * x);
            }
            fix_sign(&mut v);
            v
        })
        .collect();
    let basis = PodBasis {
        dim,
        inner: PodInner::Gramian,
        latent_gramian: Vec::new(),
        columns,
        singular_values: s,
    };
    // eigenvalues carry absolute error ~ eps·λ₁, so trailing columns lose
    // D-orthogonality; re-orthonormalizing restores it
    Ok(basis.mapped(|v| v.to_vec(), gramian))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> CsrMatrix {
        CsrMatrix::from_diagonal(&vec![1.0; n])
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_repeated_snapshot() {
        let v = vec![3.0, -4.0, 0.0];
        let basis = compute_pod(&[v.clone(), v.clone(), v.clone()], 1, &eye(3)).unwrap();
        let col = &basis.columns[0];
        assert!((col[0].abs() - 0.6).abs() < 1e-14 && (col[1].abs() - 0.8).abs() < 1e-14);
        assert!(basis.mean_projection_error(&[v], None) < 1e-24);
    }

    #[test]
    fn orthogonal_snapshots() {
        let snaps = vec![vec![3.0, 0.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]];
        let basis = compute_pod(&snaps, 2, &eye(4)).unwrap();
        let s = &basis.singular_values;
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 2.0).abs() < 1e-14 && (s[2] - 1.0).abs() < 1e-14);
        assert!((basis.mean_projection_error(&snaps, None) - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(
            compute_pod(&snaps, 4, &eye(4)).unwrap_err(),
            PodError::RankDeficient { requested: 4, rank: 3 }
        );
    }

    #[test]
    fn full_rank_has_no_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let snaps: Vec<_> = (0..5).map(|_| random_vec(&mut rng, 12)).collect();
        let basis = compute_pod(&snaps, 5, &eye(12)).unwrap();
        assert!(basis.mean_projection_error(&snaps, None) < 1e-24);
    }

    #[test]
    fn basis_orthonormal_and_projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let snaps: Vec<_> = (0..8).map(|_| random_vec(&mut rng, 20)).collect();
        let basis = compute_pod(&snaps, 4, &eye(20)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&basis.columns[i], &basis.columns[j]) - want).abs() < 1e-12);
                assert!((basis.gramian_entry(i, j) - want).abs() < 1e-12);
            }
        }
        assert!(basis.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let x = random_vec(&mut rng, 20);
        let p = basis.project_reconstruct(&x);
        let pp = basis.project_reconstruct(&p);
        assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-12));
        let resid: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
        assert!(basis.project(&resid, None).iter().all(|c| c.abs() < 1e-12));
        // vectors in the span round-trip, orthogonal ones vanish
        let inside = basis.reconstruct(&[0.3, -1.0, 2.0, 0.5]);
        let back = basis.project_reconstruct(&inside);
        assert!(inside.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(basis.project_reconstruct(&resid).iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn error_monotone_in_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let snaps: Vec<_> = (0..10).map(|_| random_vec(&mut rng, 15)).collect();
        let full = compute_pod(&snaps, 10, &eye(15)).unwrap();
        let errs: Vec<f64> = (1..=10).map(|n| full.truncated(n).mean_projection_error(&snaps, None)).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        // discarded energy identity
        for n in 1..=10 {
            let tail: f64 = full.singular_values[n..].iter().map(|s| s * s).sum::<f64>() / 10.0;
            assert!((errs[n - 1] - tail).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_basis_is_gramian_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let diag: Vec<f64> = (0..10).map(|_| rng.random_range(0.5..2.0)).collect();
        let d = CsrMatrix::from_diagonal(&diag);
        let snaps: Vec<_> = (0..6).map(|_| random_vec(&mut rng, 10)).collect();
        let basis = compute_pod_weighted(&snaps, 3, &d).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((basis.gramian_entry(i, j) - want).abs() < 1e-10);
            }
        }
        // with D = I it spans the same space as the plain POD
        let a = compute_pod_weighted(&snaps, 3, &eye(10)).unwrap();
        let b = compute_pod(&snaps, 3, &eye(10)).unwrap();
        for v in &a.columns {
            let p = b.project_reconstruct(v);
            assert!(v.iter().zip(&p).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    #[test]
    fn mapped_basis_stays_orthonormal_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let snaps: Vec<Vec<f64>> = (0..8).map(|_| random_vec(&mut rng, 12)).collect();
        let basis = compute_pod(&snaps, 4, &eye(12)).unwrap();
        // projector onto the first 9 coordinates
        let mapped = basis.mapped(|v| v.iter().enumerate().map(|(i, &x)| if i < 9 { x } else { 0.0 }).collect(), &eye(12));
        for i in 0..4 {
            assert!(mapped.columns[i][9..].iter().all(|&x| x == 0.0));
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((mapped.gramian_entry(i, j) - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn empty_and_ragged_rejected() {
        assert_eq!(compute_pod(&[], 1, &eye(1)).unwrap_err(), PodError::Empty);
        assert!(matches!(
            compute_pod(&[vec![1.0], vec![1.0, 2.0]], 1, &eye(2)),
            Err(PodError::Ragged { .. })
        ));
    }

    fn random_frame(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
        let mut frame: Vec<Vec<f64>> = Vec::new();
        while frame.len() < n {
            let mut v = random_vec(rng, dim);
            for q in &frame {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                frame.push(v);
            }
        }
        frame
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn pod_beats_random_frames(seed in 0u64..10_000, rank in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 12;
            let generators: Vec<_> = (0..rank).map(|_| random_vec(&mut rng, dim)).collect();
            let snaps: Vec<Vec<f64>> = (0..10).map(|_| {
                let mut s = vec![0.0; dim];
                for g in &generators {
                    let c: f64 = rng.random_range(-1.0..1.0);
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
                s
            }).collect();
            let n = rank - 1;
            let basis = compute_pod(&snaps, n, &eye(dim)).unwrap();
            let best = basis.mean_projection_error(&snaps, None);
            for _ in 0..100 {
                let frame = random_frame(&mut rng, dim, n);
                let other = PodBasis { dim, inner: PodInner::Euclidean, columns: frame, singular_values: vec![], latent_gramian: vec![0.0; n * n] };
                prop_assert!(other.mean_projection_error(&snaps, None) >= best - 1e-12);
            }
        }
    }
}
