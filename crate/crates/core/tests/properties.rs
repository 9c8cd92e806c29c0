use kprox::data::{Standardizer, TabularDataset};
use kprox::kernel::{ensemble_repulsion, rbf_grad_first, rbf_kernel, KernelConfig};
use kprox::metrics::{regression_metrics, LabelSpace};
use kprox::numcore::Matrix;
use kprox::ot::{cost_matrix, sinkhorn, wasserstein2_1d_exact, SinkhornConfig};
use kprox::sampler::{kprox_step, KproxConfig, ParticleEnsemble};
use kprox::score::Gaussian;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn vec_of(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, dim)
}

/// `(rows, cols, row-major entries)` with entries in `range`.
fn matrix(rows: std::ops::Range<usize>, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix<f64>> {
    rows.prop_flat_map(move |n| prop::collection::vec(lo..hi, n * cols))
        .prop_map(move |v| Matrix::from_vec(v.len() / cols, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric(a in vec_of(3), b in vec_of(3), h in 0.2..3.0f64) {
        prop_assert_eq!(rbf_kernel(&a, &b, h).unwrap(), rbf_kernel(&b, &a, h).unwrap());
    }

    #[test]
    fn kernel_gradient_is_antisymmetric(a in vec_of(2), b in vec_of(2), h in 0.2..3.0f64) {
        let ab = rbf_grad_first(&a, &b, h).unwrap();
        let ba = rbf_grad_first(&b, &a, h).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!(close(*x, -*y, 1e-14));
        }
    }

    #[test]
    fn repulsion_is_translation_invariant(
        particles in matrix(1..12, 2, -2.0, 2.0),
        z in vec_of(2),
        shift in vec_of(2),
    ) {
        let moved = Matrix::from_fn(particles.rows(), 2, |i, j| particles[(i, j)] + shift[j]);
        let z_moved: Vec<f64> = z.iter().zip(&shift).map(|(a, s)| a + s).collect();
        let r0 = ensemble_repulsion(&particles, &z, 1.0).unwrap();
        let r1 = ensemble_repulsion(&moved, &z_moved, 1.0).unwrap();
        for (a, b) in r0.iter().zip(&r1) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_step_commutes_with_permutation(
        particles in matrix(2..16, 2, -2.0, 2.0),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = particles.rows();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted = Matrix::from_fn(n, 2, |i, j| particles[(order[i], j)]);
        let target = Gaussian::new(vec![0.5, -1.0], vec![1.0, 2.0]).unwrap();
        let cfg = KproxConfig { epsilon: 0.1, kernel: KernelConfig::fixed(1.0), ..KproxConfig::default() };

        let mut direct = ParticleEnsemble::new(particles).unwrap();
        let mut shuffled = ParticleEnsemble::new(permuted).unwrap();
        let na = kprox_step(&mut direct, &target, &cfg).unwrap();
        let nb = kprox_step(&mut shuffled, &target, &cfg).unwrap();
        prop_assert!(close(na, nb, 1e-12));
        for (i, &src) in order.iter().enumerate() {
            for j in 0..2 {
                prop_assert!(close(shuffled.particle(i)[j], direct.particle(src)[j], 1e-13));
            }
        }
    }

    #[test]
    fn converged_plans_have_uniform_marginals(
        points in (2usize..20).prop_flat_map(|n| (
            prop::collection::vec(0.0..1.0f64, 2 * n),
            prop::collection::vec(0.0..1.0f64, 2 * n),
        )),
        eps in 0.05..1.0f64,
    ) {
        let n = points.0.len() / 2;
        let a = Matrix::from_vec(n, 2, points.0).unwrap();
        let b = Matrix::from_vec(n, 2, points.1).unwrap();
        let cost = cost_matrix(&a, &b).unwrap();
        prop_assert!(cost.as_slice().iter().all(|&c| c >= 0.0));
        let plan = sinkhorn(&cost, &SinkhornConfig::with_eps(eps)).unwrap();
        prop_assert!(plan.converged);
        prop_assert!(plan.pi.as_slice().iter().all(|&p| p >= 0.0));
        prop_assert!(plan.marginal_violation() <= 1e-8);
    }

    #[test]
    fn w2_1d_translation(a in prop::collection::vec(-5.0..5.0f64, 1..40), c in -3.0..3.0f64) {
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        prop_assert!(wasserstein2_1d_exact(&a, &a).unwrap() == 0.0);
        prop_assert!(close(wasserstein2_1d_exact(&a, &shifted).unwrap(), c.abs(), 1e-9));
    }

    #[test]
    fn metrics_ignore_joint_permutation(
        pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..30),
    ) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let (yr, pr): (Vec<f64>, Vec<f64>) = pairs.iter().rev().copied().unzip();
        let m0 = regression_metrics(&y, &p, LabelSpace::Standardized).unwrap();
        let m1 = regression_metrics(&yr, &pr, LabelSpace::Standardized).unwrap();
        prop_assert!(close(m0.rmse, m1.rmse, 1e-12));
        prop_assert!(close(m0.r2, m1.r2, 1e-12));
        prop_assert!(close(m0.mae, m1.mae, 1e-12));
        let own = regression_metrics(&y, &y, LabelSpace::Standardized).unwrap();
        prop_assert_eq!(own.rmse, 0.0);
        prop_assert_eq!(own.r2, 1.0);
    }

    #[test]
    fn standardizer_round_trip(
        x in matrix(2..20, 3, -100.0, 100.0),
        label_offset in -50.0..50.0f64,
    ) {
        let y: Vec<f64> = (0..x.rows()).map(|i| x[(i, 0)] * 0.5 + label_offset + i as f64).collect();
        let ds = TabularDataset::unnamed(x, y, false).unwrap();
        // Columns drawn this way are almost surely non-constant.
        let s = Standardizer::fit(&ds).unwrap();
        let back = s.invert(&s.apply(&ds).unwrap()).unwrap();
        for (a, b) in ds.x().as_slice().iter().zip(back.x().as_slice()) {
            prop_assert!(close(*a, *b, 1e-12));
        }
        for (a, b) in ds.y().iter().zip(back.y()) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }
}
