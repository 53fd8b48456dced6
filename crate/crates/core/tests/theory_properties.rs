mod common;

use common::*;
use flatlab::datagen::{sample_iid_features, PiecewiseLinear};
use flatlab::objective::{empirical_loss, excess_risk};
use flatlab::sweep::{run_cell, SweepSpec};
use flatlab::theory::{
    bias_certificate, gamma_fn, gen_gap_rate, h_empirical, hbar_asymptotic, hbar_empirical, p_correction, truth_mass,
    truth_uncertain_region, uncertain_points, Curvature, FeatureLaw,
};
use flatlab::trainer::{jitter_off_knots, measure_lambda, TrainConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(cases(128))]

    #[test]
    fn uncertain_count_grows_with_gamma(seed in any::<u64>(), n in 2usize..60) {
        let mut r = rng(seed);
        let p = random_net(&mut r, 8, 2.0);
        let data = random_dataset(&mut r, n, 2.0);
        let mut prev = 0;
        for g in [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 50.0] {
            let count = uncertain_points(&p, &data, g).n_gamma();
            prop_assert!(count >= prev);
            prev = count;
        }
    }

    #[test]
    fn truth_region_grows_with_gamma(g in 0.0f64..1.5, dg in 0.0f64..1.0) {
        let hat = PiecewiseLinear::hat();
        let small = truth_uncertain_region(&hat, g);
        let large = truth_uncertain_region(&hat, g + dg);
        prop_assert!(large.includes(&small));
        prop_assert!(large.total_length() >= small.total_length());
    }

    #[test]
    fn empirical_weight_is_bounded(seed in any::<u64>(), n in 1usize..50, x in -2.0f64..2.0) {
        let mut r = rng(seed);
        let p = random_net(&mut r, 6, 2.0);
        let data = random_dataset(&mut r, n, 2.0);
        let pts = uncertain_points(&p, &data, 100.0);
        let h = h_empirical(x, &pts, &data);
        prop_assert!(h.value >= 0.0);
        prop_assert!(h.value <= 5f64.sqrt() * 4.0);
        prop_assert!(h.value <= h.plus && h.value <= h.minus);
    }
}

#[test]
fn empirical_weight_approaches_its_limit() {
    let hat = PiecewiseLinear::hat();
    let law = FeatureLaw::Uniform { x_max: 2.0 };
    let grid: Vec<f64> = (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect();
    let worst = |n: usize| -> f64 {
        let mut acc = 0.0;
        for seed in 0..3 {
            let xs = sample_iid_features(n, 2.0, seed);
            let gap = grid
                .iter()
                .map(|&x| {
                    (hbar_empirical(x, &hat, &xs, 0.5, 0.2, 0.0).value - hbar_asymptotic(x, &hat, &law, 0.5, 0.2).value)
                        .abs()
                })
                .fold(0.0, f64::max);
            acc += gap / 3.0;
        }
        acc
    };
    let errs: Vec<f64> = [200, 2000, 20000].iter().map(|&n| worst(n)).collect();
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    assert!(errs[2] < 0.01, "{errs:?}");
}

#[test]
fn gap_rate_golden() {
    let v = gen_gap_rate(1.0, 1.0, 2.0, 0.1, 80.0);
    assert!((v - 0.38393015413591075).abs() < 1e-12, "{v}");
}

#[test]
fn bias_certificate_holds_on_trained_nets() {
    let spec = SweepSpec {
        etas: vec![0.5],
        ns: vec![30],
        seeds: vec![0, 1],
        k: 20,
        x_max: 2.0,
        f0: PiecewiseLinear::hat(),
        train: TrainConfig {
            iters: 3000,
            record_every: 1000,
            lambda_every: 1000,
            ..TrainConfig::default()
        },
    };
    let mut checked = 0;
    for cell in spec.cells() {
        let run = run_cell(&spec, cell).unwrap();
        let params = jitter_off_knots(&run.params, &run.data);
        let lambda = measure_lambda(&params, &run.data, &mut None).unwrap();
        let budget = lambda + 2.0 * 2.0 * empirical_loss(&params, &run.data);
        for gamma in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let n_gamma = uncertain_points(&params, &run.data, gamma).n_gamma();
            if n_gamma == 0 {
                continue;
            }
            let rep = bias_certificate(&params, &run.data, gamma, Curvature::Measured(lambda)).unwrap();
            assert!(rep.holds, "{cell:?} gamma {gamma}: {rep:?}");
            // lhs >= 1 bounds the number of uncertain points
            assert!(n_gamma as f64 * gamma_fn(gamma) <= 30.0 * budget * (1.0 + 1e-9));
            checked += 1;
        }
    }
    assert!(checked >= 4);
}

#[test]
fn uncertain_fraction_lower_bound_on_trained_cells() {
    let spec = SweepSpec {
        etas: vec![0.05, 0.8],
        ns: vec![40],
        seeds: vec![0, 1, 2],
        k: 20,
        x_max: 2.0,
        f0: PiecewiseLinear::hat(),
        train: TrainConfig {
            iters: 2000,
            record_every: 1000,
            lambda_every: 1000,
            ..TrainConfig::default()
        },
    };
    // with the proof constant in the correction the floor is at or below
    // zero at this sample size, so this only guards against sign slips
    for cell in spec.cells() {
        let run = run_cell(&spec, cell).unwrap();
        let eps = excess_risk(&run.params, &spec.f0, &run.data.xs).max(0.0);
        for (gamma, zeta) in [(0.5, 0.25), (1.0, 0.5), (2.0, 1.0), (4.0, 2.0)] {
            let frac = uncertain_points(&run.params, &run.data, gamma).n_gamma() as f64 / 40.0;
            let floor = truth_mass(&spec.f0, &run.data.xs, gamma - zeta) - p_correction(eps, gamma, zeta);
            assert!(frac >= floor, "{cell:?} gamma {gamma}: {frac} < {floor}");
        }
    }
}
