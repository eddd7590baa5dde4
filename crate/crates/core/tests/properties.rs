use ndarray::{Array2, Array3, Axis};
use patk_core::acoustics::{build_operator, Medium, ProbeConfig};
use patk_core::metrics::{ncc, pearson, sssim, ssim, SsimParams};
use patk_core::operator::LinearOperator;
use patk_core::register::SimilarityTransform;
use patk_core::uncertainty::aggregate;
use patk_core::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random image: sum of a few Gaussian blobs, never constant.
fn blobs(seed: u64, n: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..6);
    let spots: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.random_range(0.0..n as f64),
                rng.random_range(0.0..n as f64),
                rng.random_range(1.5..6.0),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    Array2::from_shape_fn((n, n), |(r, c)| {
        spots
            .iter()
            .map(|&(y, x, s, a)| a * (-((r as f64 - y).powi(2) + (c as f64 - x).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ncc_is_bounded_and_scale_free(sa in 0u64..1000, sb in 0u64..1000, g in 0.05f64..20.0, o in -3.0f64..3.0) {
        let (a, b) = (blobs(sa, 32), blobs(sb, 32));
        let v = ncc(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        prop_assert!(v >= pearson(&a, &b).unwrap() - 1e-12);
        // zero padding sits inside shifted windows, so only gain is free
        let w = ncc(&a.mapv(|x| g * x), &b).unwrap();
        prop_assert!((v - w).abs() < 1e-9, "{v} vs {w}");
        let p0 = pearson(&a, &b).unwrap();
        let p1 = pearson(&a.mapv(|x| g * x + o), &b).unwrap();
        prop_assert!((p0 - p1).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(sa in 0u64..1000, sb in 0u64..1000) {
        let (a, b) = (blobs(sa, 32), blobs(sb, 32));
        let p = SsimParams::default();
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0);
    }

    #[test]
    fn sssim_dominates_ssim(sa in 0u64..1000, sb in 0u64..1000) {
        let (a, b) = (blobs(sa, 32), blobs(sb, 32));
        let s = ssim(&a, &b, &SsimParams::default()).unwrap();
        let t = sssim(&a, &b).unwrap();
        prop_assert!(t >= s - 1e-12, "{t} < {s}");
        prop_assert!(t <= 1.0 + 1e-12);
    }

    #[test]
    fn transform_inverse_round_trips(
        rot in -1.0f64..1.0, tx in -20.0f64..20.0, tz in -20.0f64..20.0, sc in 0.5f64..2.0,
        x in -50.0f64..50.0, z in -50.0f64..50.0,
    ) {
        let t = SimilarityTransform { rotation: rot, tx, tz, scale: sc };
        let (cx, cz) = (15.5, 15.5);
        let (fx, fz) = t.forward(x, z, cx, cz);
        let (bx, bz) = t.inverse().forward(fx, fz, cx, cz);
        prop_assert!((bx - x).abs() < 1e-9 && (bz - z).abs() < 1e-9);
        let (ix, iz) = t.inverse_point(fx, fz, cx, cz);
        prop_assert!((ix - x).abs() < 1e-9 && (iz - z).abs() < 1e-9);
    }

    #[test]
    fn aggregate_is_permutation_invariant_and_shift_equivariant(seed in 0u64..1000, n in 2usize..12, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = Array3::from_shape_fn((n, 6, 5), |_| rng.random_range(-1.0..1.0));
        let a = aggregate(&stack).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(seed as usize % n);
        let p = stack.select(Axis(0), &order);
        let b = aggregate(&p).unwrap();
        prop_assert_eq!(&a.mean, &b.mean);
        prop_assert_eq!(&a.std, &b.std);
        let c = aggregate(&stack.mapv(|v| v + shift)).unwrap();
        for (x, y) in a.std.iter().zip(&c.std) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(a.std.iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn operator_adjoint_holds_for_random_geometry(
        rows in 8usize..24, cols in 8usize..24, elements in 4usize..20, depth_mm in 3.0f64..9.0, seed in 0u64..1000,
    ) {
        let grid = Grid::centered(rows, cols, 1e-4, 0.0, depth_mm * 1e-3);
        let medium = Medium::default();
        let mut probe = ProbeConfig { n_elements: elements, pitch: 2e-4, ..Default::default() };
        probe.n_samples = probe.samples_to_cover(&grid, &medium);
        let op = build_operator(&grid, &probe, &medium).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..op.domain_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..op.range_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = op.apply_vec(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(op.adjoint_vec(&y)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-30), "{lhs} vs {rhs}");
    }
}
