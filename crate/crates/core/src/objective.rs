//! Logistic loss, its parameter derivatives, the population (expected-label)
//! loss and the derived excess risk and excess 0-1 error.

use crate::datagen::PiecewiseLinear;
use crate::error::{Error, Result};
use crate::exec::{chunked_reduce, Execution};
use crate::relu_net::{grad_f_into, NetParams};

/// Stable logistic sigmoid `1 / (1 + e^{-t})`.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{-margin})` without overflow.
#[inline]
pub fn logistic(margin: f64) -> f64 {
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// `e^{-t} / (1 + e^{-t})^2 = sigmoid(t) sigmoid(-t)`, even in `t`.
#[inline]
pub fn logistic_curvature(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Training features and `+-1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub x_max: f64,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, x_max: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::InvalidArgument(format!(
                "{} features but {} labels",
                xs.len(),
                ys.len()
            )));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::InvalidArgument("x_max must be positive".into()));
        }
        if let Some(x) = xs.iter().find(|x| !x.is_finite() || x.abs() > x_max) {
            return Err(Error::InvalidArgument(format!(
                "feature {x} outside [-{x_max}, {x_max}]"
            )));
        }
        if ys.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument("labels must be -1 or +1".into()));
        }
        Ok(Dataset { xs, ys, x_max })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Smallest gap between distinct sorted features, if there are two.
    pub fn min_spacing(&self) -> Option<f64> {
        let mut xs = self.xs.clone();
        xs.sort_by(f64::total_cmp);
        xs.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).reduce(f64::min)
    }
}

/// Sorted, disjoint union of closed intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    /// Sorts the pieces and merges any that overlap or touch.
    pub fn new(mut pieces: Vec<(f64, f64)>) -> Result<Self> {
        if pieces
            .iter()
            .any(|&(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::InvalidArgument("interval needs finite lo <= hi".into()));
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pieces.len());
        for (lo, hi) in pieces {
            match out.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        Ok(IntervalUnion { intervals: out })
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi)])
    }

    pub fn empty() -> Self {
        IntervalUnion::default()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    /// True when every piece of `other` lies inside some piece of `self`.
    pub fn includes(&self, other: &IntervalUnion) -> bool {
        other
            .intervals
            .iter()
            .all(|&(a, b)| self.intervals.iter().any(|&(lo, hi)| lo <= a && b <= hi))
    }

    pub fn hull(&self) -> Option<(f64, f64)> {
        Some((self.intervals.first()?.0, self.intervals.last()?.1))
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }
}

/// Mean logistic loss over the dataset.
pub fn empirical_loss(params: &NetParams, data: &Dataset) -> f64 {
    empirical_loss_with(params, data, Execution::Sequential)
}

pub fn empirical_loss_with(params: &NetParams, data: &Dataset, exec: Execution) -> f64 {
    let total = chunked_reduce(
        data.len(),
        exec,
        || 0.0,
        |acc, i| *acc += logistic(data.ys[i] * params.forward(data.xs[i])),
        |t, p| *t += p,
    );
    total / data.len() as f64
}

/// Parameter gradient of the empirical loss.
pub fn grad_loss(params: &NetParams, data: &Dataset) -> Vec<f64> {
    loss_and_grad(params, data, Execution::Sequential).1
}

/// Empirical loss and its gradient in one pass over the data.
pub fn loss_and_grad(params: &NetParams, data: &Dataset, exec: Execution) -> (f64, Vec<f64>) {
    let dim = params.dim();
    let (loss, mut grad, _) = chunked_reduce(
        data.len(),
        exec,
        || (0.0, vec![0.0; dim], vec![0.0; dim]),
        |(loss, grad, scratch), i| {
            let y = data.ys[i];
            let m = y * params.forward(data.xs[i]);
            *loss += logistic(m);
            let c = -y * sigmoid(-m);
            grad_f_into(params, data.xs[i], scratch);
            for (g, s) in grad.iter_mut().zip(scratch.iter()) {
                *g += c * s;
            }
        },
        |t, p| {
            t.0 += p.0;
            for (a, b) in t.1.iter_mut().zip(&p.1) {
                *a += b;
            }
        },
    );
    let n = data.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    (loss / n, grad)
}

/// Expected loss at one feature under labels drawn with `P(y = 1) = sigmoid(f0x)`,
/// with its first and second derivatives in `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoss {
    pub loss: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn pop_pointwise(f: f64, f0x: f64) -> PointLoss {
    let p = sigmoid(f0x);
    PointLoss {
        loss: p * logistic(f) + (1.0 - p) * logistic(-f),
        d1: sigmoid(-f0x) - sigmoid(-f),
        d2: logistic_curvature(f),
    }
}

/// Mean expected loss of the predictions `fvals` at `xs`.
pub fn population_loss_values(fvals: &[f64], f0: &PiecewiseLinear, xs: &[f64]) -> f64 {
    let total: f64 = fvals
        .iter()
        .zip(xs)
        .map(|(&f, &x)| pop_pointwise(f, f0.eval(x)).loss)
        .sum();
    total / xs.len() as f64
}

pub fn population_loss(params: &NetParams, f0: &PiecewiseLinear, xs: &[f64]) -> f64 {
    let fvals: Vec<f64> = xs.iter().map(|&x| params.forward(x)).collect();
    population_loss_values(&fvals, f0, xs)
}

/// Population loss of `f` minus that of `f0`, averaged over `xs`.
///
/// Summed as pointwise differences so that identical predictions give exactly 0.
pub fn excess_risk_values(fvals: &[f64], f0: &PiecewiseLinear, xs: &[f64]) -> f64 {
    let total: f64 = fvals
        .iter()
        .zip(xs)
        .map(|(&f, &x)| {
            let t = f0.eval(x);
            pop_pointwise(f, t).loss - pop_pointwise(t, t).loss
        })
        .sum();
    total / xs.len() as f64
}

pub fn excess_risk(params: &NetParams, f0: &PiecewiseLinear, xs: &[f64]) -> f64 {
    let fvals: Vec<f64> = xs.iter().map(|&x| params.forward(x)).collect();
    excess_risk_values(&fvals, f0, xs)
}

fn zero_one_risk(f: f64, f0x: f64) -> f64 {
    if f >= 0.0 {
        sigmoid(-f0x)
    } else {
        sigmoid(f0x)
    }
}

/// Expected 0-1 loss of `sign(f)` minus that of `sign(f0)`, averaged over `xs`.
pub fn excess_error_values(fvals: &[f64], f0: &PiecewiseLinear, xs: &[f64]) -> f64 {
    let total: f64 = fvals
        .iter()
        .zip(xs)
        .map(|(&f, &x)| {
            let t = f0.eval(x);
            zero_one_risk(f, t) - zero_one_risk(t, t)
        })
        .sum();
    total / xs.len() as f64
}

pub fn excess_error(params: &NetParams, f0: &PiecewiseLinear, xs: &[f64]) -> f64 {
    let fvals: Vec<f64> = xs.iter().map(|&x| params.forward(x)).collect();
    excess_error_values(&fvals, f0, xs)
}

/// Losses restricted to the design points inside an interval union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedLosses {
    pub n_inside: usize,
    /// Mean empirical loss of `f` over the points inside.
    pub loss: f64,
    /// Mean population loss of `f` over the points inside.
    pub pop_loss: f64,
    /// Mean population loss of `f0` over the points inside.
    pub pop_loss_f0: f64,
    /// Whether `f` fits the realized labels inside at least as well as `f0`.
    pub optimized: bool,
}

pub fn restricted_losses(
    params: &NetParams,
    data: &Dataset,
    f0: &PiecewiseLinear,
    region: &IntervalUnion,
) -> Result<RestrictedLosses> {
    let inside: Vec<usize> = (0..data.len()).filter(|&i| region.contains(data.xs[i])).collect();
    if inside.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let mut emp = 0.0;
    let mut emp_f0 = 0.0;
    let mut pop = 0.0;
    let mut pop_f0 = 0.0;
    for &i in &inside {
        let (x, y) = (data.xs[i], data.ys[i]);
        let f = params.forward(x);
        let t = f0.eval(x);
        emp += logistic(y * f);
        emp_f0 += logistic(y * t);
        pop += pop_pointwise(f, t).loss;
        pop_f0 += pop_pointwise(t, t).loss;
    }
    let m = inside.len() as f64;
    Ok(RestrictedLosses {
        n_inside: inside.len(),
        loss: emp / m,
        pop_loss: pop / m,
        pop_loss_f0: pop_f0 / m,
        optimized: emp <= emp_f0 + 1e-12 * emp_f0.abs().max(1.0),
    })
}
