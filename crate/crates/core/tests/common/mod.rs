#![allow(dead_code)]

use flatlab::objective::Dataset;
use flatlab::relu_net::NetParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_net<R: Rng>(rng: &mut R, k: usize, scale: f64) -> NetParams {
    let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-scale..scale)).collect::<Vec<_>>();
    let (w1, b1, w2) = (draw(k), draw(k), draw(k));
    NetParams::new(w1, b1, w2, rng.random_range(-scale..scale)).unwrap()
}

pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, x_max: f64) -> Dataset {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(-x_max..x_max)).collect();
    xs.sort_by(f64::total_cmp);
    let ys = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Dataset::new(xs, ys, x_max).unwrap()
}

/// Smallest preactivation magnitude over all neurons and points, relative to
/// the size of the terms; finite differences with step `h` stay on one side of
/// every kink when this exceeds a few `h`.
pub fn kink_clearance(params: &NetParams, xs: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for &x in xs {
        for i in 0..params.width() {
            let pre = params.w1[i] * x + params.b1[i];
            m = m.min(pre.abs() / (1.0 + params.w1[i].abs() + params.b1[i].abs()));
        }
    }
    m
}

pub fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `max|a - b| / max|b|`, with the denominator floored at `floor`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    max_abs_diff(a, b) / max_abs(b).max(floor)
}

pub fn nalgebra_sym(dim: usize, entries: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(dim, dim, entries)
}

pub fn eigenvalues_sorted(m: nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Proptest settings without the regression file, which needs a `src` sibling.
pub fn cases(n: u32) -> proptest::prelude::ProptestConfig {
    proptest::prelude::ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..Default::default()
    }
}
