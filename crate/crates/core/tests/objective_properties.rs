mod common;

use common::*;
use flatlab::datagen::PiecewiseLinear;
use flatlab::objective::{
    excess_error, excess_risk, grad_loss, logistic, logistic_curvature, pop_pointwise, population_loss, sigmoid,
    IntervalUnion,
};
use flatlab::relu_net::NetParams;
use proptest::prelude::*;

fn truth() -> impl Strategy<Value = PiecewiseLinear> {
    prop::collection::vec(-4.0f64..4.0, 2..8).prop_map(|values| {
        let m = values.len();
        let bps = (0..m).map(|i| -2.0 + 4.0 * i as f64 / (m - 1) as f64).collect();
        PiecewiseLinear::new(bps, values).unwrap()
    })
}

proptest! {
    #![proptest_config(cases(512))]

    #[test]
    fn log_sandwich(t in 1e-12f64..1e6) {
        let l = t.ln_1p();
        prop_assert!(t / (1.0 + t) <= l * (1.0 + 1e-15));
        prop_assert!(l <= t);
    }

    #[test]
    fn softplus_reflection(m in -700.0f64..700.0) {
        let lhs = logistic(m) + logistic(-m);
        let rhs = m.abs() + 2.0 * logistic(m.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn pointwise_derivatives(f in -30.0f64..30.0, f0x in -30.0f64..30.0) {
        let pl = pop_pointwise(f, f0x);
        prop_assert!(pl.d2 > 0.0);
        prop_assert_eq!(pl.d2, logistic_curvature(f));
        // d1 vanishes only at f = f0x
        if (f - f0x).abs() > 1e-6 {
            prop_assert!(pl.d1.abs() > 0.0);
            prop_assert_eq!(pl.d1 > 0.0, f > f0x);
        }
        let at_truth = pop_pointwise(f0x, f0x);
        prop_assert!(at_truth.d1.abs() <= 1e-10);
        prop_assert!(at_truth.loss <= pl.loss + 1e-15);
        let h = 1e-6;
        let fd = (pop_pointwise(f + h, f0x).loss - pop_pointwise(f - h, f0x).loss) / (2.0 * h);
        prop_assert!((fd - pl.d1).abs() <= 1e-6);
    }

    #[test]
    fn excess_risk_nonnegative(f0 in truth(), seed in any::<u64>(), k in 1usize..30, scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let p = random_net(&mut r, k, scale);
        let data = random_dataset(&mut r, 50, 2.0);
        prop_assert!(excess_risk(&p, &f0, &data.xs) >= -1e-12);
        let err = excess_error(&p, &f0, &data.xs);
        prop_assert!((-1e-12..=1.0).contains(&err));
        prop_assert!(population_loss(&p, &f0, &data.xs) > 0.0);
    }

    #[test]
    fn interval_union_normalizes(pieces in prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0), 0..10), x in -4.0f64..4.0) {
        let raw: Vec<(f64, f64)> = pieces.iter().map(|&(a, w)| (a, a + w)).collect();
        let u = IntervalUnion::new(raw.clone()).unwrap();
        for w in u.intervals().windows(2) {
            prop_assert!(w[0].1 < w[1].0);
        }
        let inside_any = raw.iter().any(|&(a, b)| a <= x && x <= b);
        prop_assert_eq!(u.contains(x), inside_any);
        prop_assert!(u.includes(&u));
    }
}

#[test]
fn sigmoid_symmetry_and_extremes() {
    for t in [-800.0, -30.0, -1.0, 0.0, 0.5, 40.0, 800.0] {
        assert!((sigmoid(t) + sigmoid(-t) - 1.0).abs() < 1e-15);
        assert!(sigmoid(t).is_finite() && logistic(t).is_finite());
    }
    assert_eq!(logistic(800.0), 0.0);
    assert_eq!(logistic(-800.0), 800.0);
}

#[test]
fn inactive_net_gradient_only_touches_output_bias() {
    let mut r = rng(5);
    let data = random_dataset(&mut r, 20, 2.0);
    let g = grad_loss(&NetParams::inactive(7), &data);
    let mean_y: f64 = data.ys.iter().sum::<f64>() / data.len() as f64;
    assert!(g[..21].iter().all(|&v| v == 0.0));
    assert!((g[21] + 0.5 * mean_y).abs() < 1e-15);
}
