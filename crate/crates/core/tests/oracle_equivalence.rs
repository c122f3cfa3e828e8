//! Operator kernels against independent scalar oracles, plus the shape
//! and range properties.

mod common;

use dassf_core::ops::{self, Activation, PoolMode};
use dassf_core::tensor::Tensor;
use dassf_core::weights::Rng64;
use proptest::prelude::*;

const ORACLE_TOL: f64 = 1e-6;

#[test]
fn conv2d_matches_brute_force() {
    let stats = common::run_conv2d_cases(40, 11);
    assert!(stats.max_abs_err < ORACLE_TOL, "max err {}", stats.max_abs_err);
}

#[test]
fn conv3d_matches_brute_force() {
    let stats = common::run_conv3d_cases(30, 12);
    assert!(stats.max_abs_err < ORACLE_TOL, "max err {}", stats.max_abs_err);
}

#[test]
fn pool_matches_brute_force() {
    let stats = common::run_pool_cases(40, 13);
    assert!(stats.max_abs_err < ORACLE_TOL, "max err {}", stats.max_abs_err);
}

#[test]
fn nearest_resize_matches_per_pixel_copy() {
    let stats = common::run_nearest_cases(40, 14);
    assert_eq!(stats.max_abs_err, 0.0);
}

#[test]
fn grid_sample_matches_scalar_oracle() {
    let stats = common::run_grid_sample_cases(30, 15);
    assert!(stats.max_abs_err < ORACLE_TOL, "max err {}", stats.max_abs_err);
}

#[test]
fn nearest_factor3_blocks_constant() {
    let mut rng = Rng64::for_tensor(3, "blocks");
    let x = common::rand_tensor(&mut rng, &[1, 1, 5, 7], -1.0, 1.0);
    let y = ops::resize_nearest(&x, 3).unwrap();
    for by in 0..5 {
        for bx in 0..7 {
            let v = y.data()[(by * 3) * 21 + bx * 3];
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(y.data()[(by * 3 + i) * 21 + bx * 3 + j], v);
                }
            }
            assert_eq!(v, x.data()[by * 7 + bx]);
        }
    }
}

#[test]
fn reduce_mean_matches_sum_oracle() {
    let mut rng = Rng64::for_tensor(4, "mean");
    let x = common::rand_tensor(&mut rng, &[2, 3, 4, 5], -1.0, 1.0);
    let m = ops::reduce_mean(&x, &[0, 1, 2, 3]).unwrap();
    let want: f64 = x.data().iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    assert!((m.data()[0] as f64 - want).abs() < 1e-9);
}

proptest! {
    #[test]
    fn conv2d_output_shape_formula(
        n in 1usize..3, cg in 1usize..4, ocg in 1usize..4, groups in 1usize..3,
        k in 1usize..4, stride in 1usize..3, pad in 0usize..2,
        h in 1usize..10, w in 1usize..10,
    ) {
        let c = cg * groups;
        let oc = ocg * groups;
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let x = Tensor::zeros(&[n, c, h, w]).unwrap();
        let wt = Tensor::zeros(&[oc, cg, k, k]).unwrap();
        let p = dassf_core::ConvParams::with(wt, None, stride, pad, groups).unwrap();
        let y = ops::conv2d(&x, &p).unwrap();
        prop_assert_eq!(
            y.shape(),
            &[n, oc, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]
        );
    }

    #[test]
    fn pool_output_shape_formula(
        k in 1usize..4, stride in 1usize..4, h in 1usize..12, w in 1usize..12,
    ) {
        prop_assume!(k <= h && k <= w);
        let x = Tensor::zeros(&[1, 2, h, w]).unwrap();
        let y = ops::pool2d(&x, PoolMode::Avg, k, stride).unwrap();
        prop_assert_eq!(y.shape(), &[1, 2, (h - k) / stride + 1, (w - k) / stride + 1]);
    }

    #[test]
    fn depth_space_inverse_pair(
        r in prop::sample::select(vec![1usize, 2, 4]),
        c in 1usize..4, h in 1usize..6, w in 1usize..6,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng64::new(seed);
        let x = common::rand_tensor(&mut rng, &[1, c * r * r, h, w], -1.0, 1.0);
        let y = ops::depth_to_space(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[1, c, h * r, w * r]);
        let back = ops::space_to_depth(&y, r).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn grid_sample_is_convex(seed in 0u64..500) {
        let mut rng = Rng64::new(seed);
        let x = common::rand_tensor(&mut rng, &[1, 2, 6, 6], -3.0, 3.0);
        let coords = common::rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
        let y = ops::sample_bilinear_grid(&x, &coords).unwrap();
        let (lo, hi) = x.min_max();
        for &v in y.data() {
            prop_assert!(v as f64 >= lo - 1e-6 && v as f64 <= hi + 1e-6);
        }
    }

    #[test]
    fn activation_ranges(seed in 0u64..500) {
        let mut rng = Rng64::new(seed);
        let x = common::rand_tensor(&mut rng, &[3, 17], -50.0, 50.0);
        for &v in ops::activation(&x, Activation::Sigmoid).data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for &v in ops::activation(&x, Activation::HardSigmoid).data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for &v in ops::activation(&x, Activation::Relu).data() {
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn resize_shapes(factor in 1usize..5, h in 1usize..8, w in 1usize..8) {
        let x = Tensor::zeros(&[1, 3, h, w]).unwrap();
        let yn = ops::resize_nearest(&x, factor).unwrap();
        let yb = ops::resize_bilinear(&x, factor).unwrap();
        prop_assert_eq!(yn.shape(), &[1, 3, h * factor, w * factor]);
        prop_assert_eq!(yb.shape(), yn.shape());
    }
}

#[test]
fn operators_are_safely_shareable_across_threads() {
    // pure functions over immutable inputs: concurrent calls must agree
    // bit-for-bit with the sequential result
    let mut rng = Rng64::for_tensor(8, "threads");
    let x = std::sync::Arc::new(common::rand_tensor(&mut rng, &[2, 4, 9, 9], -1.0, 1.0));
    let w = Tensor::from_fn(&[6, 4, 3, 3], |_| rng.normal(0.3)).unwrap();
    let p = std::sync::Arc::new(dassf_core::ConvParams::with(w, None, 1, 1, 1).unwrap());
    let sequential = ops::conv2d(&x, &p).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let x = x.clone();
            let p = p.clone();
            std::thread::spawn(move || ops::conv2d(&x, &p).unwrap())
        })
        .collect();
    for h in handles {
        let y = h.join().unwrap();
        assert_eq!(y.data(), sequential.data());
    }
}

#[test]
fn resize_bilinear_matches_oracle() {
    let mut rng = Rng64::for_tensor(9, "bilinear_resize");
    for s in [2usize, 3, 4] {
        let x = common::rand_tensor(&mut rng, &[1, 3, 5, 4], -1.0, 1.0);
        let got = ops::resize_bilinear(&x, s).unwrap();
        let want = common::bilinear_resize_oracle(&x, s);
        assert!(got.max_abs_diff(&want).unwrap() < ORACLE_TOL);
    }
}
