use momentum_rom::cases::{Case, CaseConfig};
use momentum_rom::fem::inf_norm;
use momentum_rom::pod::{compute_pod, compute_pod_weighted, PodBasis};
use momentum_rom::sparse::CsrMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn low_rank_snapshots(rng: &mut ChaCha8Rng, dim: usize, count: usize, rank: usize) -> Vec<Vec<f64>> {
    let factors: Vec<Vec<f64>> = (0..rank).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (0..count)
        .map(|_| {
            let mut s = vec![0.0; dim];
            for (k, f) in factors.iter().enumerate() {
                let c = rng.random_range(-1.0..1.0) / (k + 1) as f64;
                s.iter_mut().zip(f).for_each(|(x, fi)| *x += c * fi);
            }
            s
        })
        .collect()
}

fn random_frame(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(n);
    while frame.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for q in &frame {
            let c = dot(q, &v);
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            frame.push(v);
        }
    }
    frame
}

fn frame_error(frame: &[Vec<f64>], snapshots: &[Vec<f64>]) -> f64 {
    snapshots
        .iter()
        .map(|s| dot(s, s) - frame.iter().map(|q| dot(q, s).powi(2)).sum::<f64>())
        .sum::<f64>()
        / snapshots.len() as f64
}

fn identity(dim: usize) -> CsrMatrix {
    CsrMatrix::from_diagonal(&vec![1.0; dim])
}

fn check_basis(basis: &PodBasis, gramian: &CsrMatrix, tol: f64) -> Result<(), TestCaseError> {
    let n = basis.n();
    for i in 0..n {
        for j in 0..n {
            let g = match basis.inner {
                momentum_rom::pod::PodInner::Euclidean => dot(&basis.columns[i], &basis.columns[j]),
                momentum_rom::pod::PodInner::Gramian => gramian.quad_form(&basis.columns[i], &basis.columns[j]),
            };
            let target = if i == j { 1.0 } else { 0.0 };
            prop_assert!((g - target).abs() <= tol, "({}, {}) = {}", i, j, g);
            prop_assert_eq!(basis.gramian_entry(i, j), basis.gramian_entry(j, i));
        }
    }
    prop_assert!(basis.singular_values.windows(2).all(|w| w[1] <= w[0]));
    // latent Gramian positive definite: Cholesky pivots stay positive
    let mut l = basis.latent_gramian.clone();
    for k in 0..n {
        let pivot = l[k * n + k] - (0..k).map(|m| l[k * n + m].powi(2)).sum::<f64>();
        prop_assert!(pivot > 0.0);
        l[k * n + k] = pivot.sqrt();
        for i in k + 1..n {
            let v = (l[i * n + k] - (0..k).map(|m| l[i * n + m] * l[k * n + m]).sum::<f64>()) / l[k * n + k];
            l[i * n + k] = v;
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// No random orthonormal frame beats the POD basis.
    #[test]
    fn pod_is_optimal(seed: u64, rank in 2usize..8, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dim, count) = (24, 16);
        let snapshots = low_rank_snapshots(&mut rng, dim, count, rank);
        let n = n.min(rank);
        let basis = compute_pod(&snapshots, n, &identity(dim)).unwrap();
        check_basis(&basis, &identity(dim), 1e-12)?;
        let best = basis.mean_projection_error(&snapshots, None);
        prop_assert!((best - frame_error(&basis.columns, &snapshots)).abs() <= 1e-12);
        for _ in 0..100 {
            let frame = random_frame(&mut rng, dim, n);
            prop_assert!(frame_error(&frame, &snapshots) >= best - 1e-12);
        }
    }

    #[test]
    fn weighted_pod_is_gramian_orthonormal(seed: u64, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 20;
        let diag: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..3.0)).collect();
        let mut triplets: Vec<(usize, usize, f64)> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        for i in 0..dim - 1 {
            triplets.push((i, i + 1, 0.2));
            triplets.push((i + 1, i, 0.2));
        }
        let d = CsrMatrix::from_triplets(dim, dim, &triplets);
        let snapshots = low_rank_snapshots(&mut rng, dim, 12, 6);
        let basis = compute_pod_weighted(&snapshots, n, &d).unwrap();
        check_basis(&basis, &d, 1e-10)?;
    }

    /// Homogeneous snapshots give a homogeneous basis.
    #[test]
    fn homogeneity_is_preserved(seed: u64, n in 1usize..10) {
        let mut cfg = CaseConfig::footing();
        cfg.nx = 4;
        cfg.ny = 4;
        let case = Case::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snapshots: Vec<Vec<f64>> = (0..12)
            .map(|_| case.homogeneous_part(&(0..case.disc.num_stress()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let scale = snapshots.iter().map(|s| inf_norm(s)).fold(0.0, f64::max);
        let basis = compute_pod(&snapshots, n, &case.disc.gramian).unwrap();
        for col in &basis.columns {
            prop_assert!(inf_norm(&case.disc.b.mul_vec(col)) <= 1e-11 * scale);
        }
    }
}

#[test]
fn rank_deficiency_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let snapshots = low_rank_snapshots(&mut rng, 10, 8, 3);
    assert!(compute_pod(&snapshots, 4, &identity(10)).is_err());
    assert!(compute_pod(&snapshots, 3, &identity(10)).is_ok());
}
