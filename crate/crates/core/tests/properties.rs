use inn_sysid::activation::Activation;
use inn_sysid::adam::{AdamConfig, AdamState};
use inn_sysid::interval::{
    iv_activate, iv_add, iv_dot, iv_matmul_t, iv_mul, iv_sub, Interval, IntervalMatrix,
};
use inn_sysid::uq::{rqr_loss, rqrw_objective, width_loss};
use inn_sysid::Matrix;
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = Interval> {
    (-50.0f64..50.0, 0.0f64..20.0).prop_map(|(lo, w)| Interval::new(lo, lo + w).unwrap())
}

/// `inner` widened by nonnegative amounts on both sides.
fn widened(inner: Interval) -> impl Strategy<Value = Interval> {
    (0.0f64..5.0, 0.0f64..5.0).prop_map(move |(a, b)| Interval::new(inner.lo() - a, inner.hi() + b).unwrap())
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Sigmoid),
        Just(Activation::Tanh),
        Just(Activation::Relu),
        Just(Activation::Identity)
    ]
}

proptest! {
    #[test]
    fn binary_ops_are_inclusion_isotonic(
        (a, big_a) in interval().prop_flat_map(|a| (Just(a), widened(a))),
        (b, big_b) in interval().prop_flat_map(|b| (Just(b), widened(b))),
    ) {
        for (small, big) in [
            (iv_add(a, b), iv_add(big_a, big_b)),
            (iv_sub(a, b), iv_sub(big_a, big_b)),
            (iv_mul(a, b), iv_mul(big_a, big_b)),
        ] {
            prop_assert!(small.is_subset_of(&big), "{small:?} not inside {big:?}");
        }
    }

    #[test]
    fn activation_is_inclusion_isotonic(
        (a, big) in interval().prop_flat_map(|a| (Just(a), widened(a))),
        act in activation(),
    ) {
        prop_assert!(a.activate(act).is_subset_of(&big.activate(act)));
    }

    #[test]
    fn products_contain_sampled_points(a in interval(), b in interval(), s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let x = a.lo() + s * a.width();
        let y = b.lo() + t * b.width();
        let x = x.clamp(a.lo(), a.hi());
        let y = y.clamp(b.lo(), b.hi());
        prop_assert!(iv_mul(a, b).contains(x * y));
        prop_assert!(iv_add(a, b).contains(x + y));
        prop_assert!(iv_sub(a, b).contains(x - y));
    }

    #[test]
    fn degenerate_intervals_reproduce_crisp_arithmetic(x in -1e3f64..1e3, y in -1e3f64..1e3, act in activation()) {
        let (a, b) = (Interval::point(x), Interval::point(y));
        prop_assert_eq!(iv_add(a, b), Interval::point(x + y));
        prop_assert_eq!(iv_sub(a, b), Interval::point(x - y));
        prop_assert_eq!(iv_mul(a, b), Interval::point(x * y));
        prop_assert_eq!(a.activate(act), Interval::point(act.apply(x)));
    }

    #[test]
    fn dot_equals_sum_of_exhaustive_term_extrema(pairs in prop::collection::vec((interval(), interval()), 1..=10)) {
        let (u, v): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (a, b) in u.iter().zip(&v) {
            let candidates = [a.lo() * b.lo(), a.lo() * b.hi(), a.hi() * b.lo(), a.hi() * b.hi()];
            lo += candidates.iter().cloned().fold(f64::INFINITY, f64::min);
            hi += candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        let got = iv_dot(&u, &v).unwrap();
        prop_assert_eq!((got.lo(), got.hi()), (lo, hi));
    }

    #[test]
    fn degenerate_matrix_product_matches_crisp(
        data in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let x = Matrix::from_vec(2, 3, data[..6].to_vec()).unwrap();
        let w = Matrix::from_vec(2, 3, data[6..].to_vec()).unwrap();
        let iv = iv_matmul_t(&IntervalMatrix::from_crisp(&x), &IntervalMatrix::from_crisp(&w)).unwrap();
        let crisp = x.matmul_t(&w).unwrap();
        prop_assert_eq!(iv.lo(), &crisp);
        prop_assert_eq!(iv.hi(), &crisp);
        let act = iv_activate(&iv, Activation::Tanh);
        prop_assert_eq!(act.lo(), &crisp.map(f64::tanh));
    }

    #[test]
    fn rqr_loss_is_nonnegative_and_zero_on_bounds(lo in -5.0f64..5.0, w in 0.0f64..3.0, t in -10.0f64..10.0, alpha in 0.01f64..0.99) {
        let hi = lo + w;
        prop_assert!(rqr_loss(t, lo, hi, alpha) >= 0.0);
        prop_assert_eq!(rqr_loss(lo, lo, hi, alpha), 0.0);
        prop_assert_eq!(rqr_loss(hi, lo, hi, alpha), 0.0);
    }

    #[test]
    fn objective_equals_elementwise_loop(
        rows in prop::collection::vec((-2.0f64..2.0, 0.0f64..1.0, -3.0f64..3.0), 1..20),
        alpha in 0.5f64..0.99,
        lambda in 0.0f64..1.0,
    ) {
        let n = rows.len();
        let lo = Matrix::from_vec(n, 1, rows.iter().map(|r| r.0).collect()).unwrap();
        let hi = Matrix::from_vec(n, 1, rows.iter().map(|r| r.0 + r.1).collect()).unwrap();
        let t = Matrix::from_vec(n, 1, rows.iter().map(|r| r.2).collect()).unwrap();
        let mut sum = 0.0;
        for i in 0..n {
            let (l, h, y) = (lo.get(i, 0), hi.get(i, 0), t.get(i, 0));
            sum += rqr_loss(y, l, h, alpha) + lambda * width_loss(l, h);
        }
        let got = rqrw_objective(&lo, &hi, &t, alpha, lambda).unwrap();
        prop_assert!((got - sum / n as f64).abs() <= 1e-12 * (1.0 + got.abs()));
    }
}

#[test]
fn adam_matches_frozen_reference_trajectory() {
    // Scalar parameter under gradients 0.5, -1.0, 2.0 with the default
    // hyperparameters. Reference values computed with
    //   m ← β1 m + (1−β1) g, v ← β2 v + (1−β2) g², θ ← θ − lr m̂ / (√v̂ + ε).
    let reference = [0.99900000002, 0.9993661035424056, 0.998946447927181];
    let mut params = vec![Matrix::filled(1, 1, 1.0)];
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    for (g, want) in [0.5, -1.0, 2.0].into_iter().zip(reference) {
        adam.step(&mut params, &[Matrix::filled(1, 1, g)]).unwrap();
        let got = params[0].get(0, 0);
        assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
    }
    assert_eq!(adam.step_count(), 3);
}
