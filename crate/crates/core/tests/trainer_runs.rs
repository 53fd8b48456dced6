mod common;

use common::*;
use flatlab::datagen::{fixed_design, PiecewiseLinear};
use flatlab::objective::{empirical_loss, Dataset};
use flatlab::relu_net::{differentiability_check, DIFFERENTIABILITY_TOL};
use flatlab::sweep::{make_dataset, run_cell, Cell, SweepSpec};
use flatlab::trainer::{
    gd_run, init_confident, init_random, jitter_off_knots, measure_lambda, Init, TrainConfig, TRACE_HEADER,
};

fn small_config(eta: f64, iters: usize) -> TrainConfig {
    TrainConfig {
        eta,
        iters,
        record_every: 50,
        lambda_every: 50,
        ..TrainConfig::default()
    }
}

fn hat_data(n: usize, seed: u64) -> Dataset {
    make_dataset(n, 2.0, &PiecewiseLinear::hat(), seed).unwrap()
}

#[test]
fn identical_inputs_give_identical_traces() {
    let data = hat_data(40, 3);
    let p0 = init_random(12, 1.0, 4);
    let cfg = small_config(0.5, 400);
    let (pa, ta) = gd_run(&p0, &data, &PiecewiseLinear::hat(), &cfg).unwrap();
    let (pb, tb) = gd_run(&p0, &data, &PiecewiseLinear::hat(), &cfg).unwrap();
    assert_eq!(ta.to_csv(), tb.to_csv());
    assert_eq!(pa.to_flat(), pb.to_flat());
}

#[test]
fn trace_schema_and_recording_schedule() {
    let data = hat_data(20, 1);
    let (_, trace) = gd_run(
        &init_random(5, 1.0, 2),
        &data,
        &PiecewiseLinear::hat(),
        &small_config(0.1, 120),
    )
    .unwrap();
    let csv = trace.to_csv();
    assert_eq!(csv.lines().next().unwrap(), TRACE_HEADER);
    let iters: Vec<usize> = trace.rows.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 50, 100, 120]);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 12));
    assert!(trace.rows.iter().all(|r| r.lambda_max.is_some()));
}

#[test]
fn divergence_flag_means_threshold_was_crossed() {
    let data = hat_data(30, 2);
    let cfg = TrainConfig {
        divergence_threshold: 1e6,
        ..small_config(500.0, 2000)
    };
    let (_, trace) = gd_run(&init_random(10, 2.0, 1), &data, &PiecewiseLinear::hat(), &cfg).unwrap();
    assert!(trace.diverged());
    let last = trace.last().unwrap();
    // NaN counts as crossing
    assert!(last.train_loss.is_nan() || last.theta_l2.is_nan() || last.train_loss > 1e6 || last.theta_l2 > 1e6);
    assert!(trace.rows[..trace.rows.len() - 1].iter().all(|r| !r.diverged));
}

#[test]
fn small_steps_decrease_the_loss() {
    // eta far below 2 / lambda along the whole path
    let data = hat_data(40, 5);
    let (_, trace) = gd_run(
        &init_random(10, 0.5, 6),
        &data,
        &PiecewiseLinear::hat(),
        &small_config(0.01, 2000),
    )
    .unwrap();
    for w in trace.rows.windows(2) {
        assert!(
            w[1].train_loss <= w[0].train_loss,
            "{} -> {}",
            w[0].train_loss,
            w[1].train_loss
        );
    }
}

#[test]
fn confident_start_has_the_target_margins() {
    let data = hat_data(80, 7);
    let p = init_confident(&data, 5.0, 100).unwrap();
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let m = p.forward(*x) * y;
        assert!((0.99 * 5.0..=1.01 * 5.0).contains(&m), "margin {m}");
    }
    assert!(init_confident(&data, 5.0, 79).is_err());
    let cfg = TrainConfig {
        init: Init::Confident { target_margin: 5.0 },
        ..small_config(0.1, 10)
    };
    assert!(gd_run(&p, &data, &PiecewiseLinear::hat(), &cfg).is_ok());
}

#[test]
fn jitter_reaches_a_differentiable_point_near_collapsed_neurons() {
    let data = Dataset::new(fixed_design(16, 2.0), vec![1.0; 16], 2.0).unwrap();
    let mut p = init_random(6, 1.0, 3);
    // a neuron shrunk to nothing sits within the absolute floor everywhere
    p.w1[2] = 3e-11;
    p.b1[2] = -1e-11;
    p.w2[2] = 2e-10;
    // and one whose knot is exactly on a design point
    p.w1[4] = 1.0;
    p.b1[4] = -data.xs[5];
    assert!(!differentiability_check(&p, &data.xs, DIFFERENTIABILITY_TOL).is_empty());
    let q = jitter_off_knots(&p, &data);
    assert!(differentiability_check(&q, &data.xs, DIFFERENTIABILITY_TOL).is_empty());
    assert!(max_abs_diff(&q.to_flat(), &p.to_flat()) < 1e-6);
    assert!((empirical_loss(&q, &data) - empirical_loss(&p, &data)).abs() < 1e-6);
    let mut warm = None;
    assert!(measure_lambda(&p, &data, &mut warm).unwrap().is_finite());
    assert!(warm.is_some());
}

#[test]
fn small_sample_run_interpolates_at_infinity() {
    let spec = SweepSpec {
        etas: vec![1.0],
        ns: vec![10],
        seeds: vec![2],
        k: 20,
        x_max: 2.0,
        f0: PiecewiseLinear::zero(),
        train: TrainConfig {
            eta: 1.0,
            iters: 100_000,
            record_every: 100,
            lambda_every: 100,
            ..TrainConfig::default()
        },
    };
    let run = run_cell(
        &spec,
        Cell {
            eta: 1.0,
            n: 10,
            seed: 2,
        },
    )
    .unwrap();
    let last = run.trace.last().unwrap();
    let close = |got: f64, want: f64| (got - want).abs() <= 1e-6 * want.abs();
    assert!(close(last.train_loss, 2.0253101936014985e-5), "{}", last.train_loss);
    assert!(
        close(last.lambda_max.unwrap(), 3.702028877293158e-3),
        "{:?}",
        last.lambda_max
    );
    assert!(close(last.tv1, 280.4143961858402), "{}", last.tv1);
    assert_eq!(last.excess_error, 0.0);
}
