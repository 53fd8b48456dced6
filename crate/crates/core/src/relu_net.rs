//! Univariate two-layer ReLU networks
//! `f(x) = sum_i w2_i * relu(w1_i * x + b1_i) + b2`.
//!
//! All parameter-space vectors use the flattened layout `[w1; b1; w2; b2]`
//! of dimension `3k + 1`.

use serde::Deserialize;

use crate::error::{Error, Result};

/// Default relative tolerance for detecting a knot sitting on a design point.
pub const DIFFERENTIABILITY_TOL: f64 = 1e-9;
/// Default absolute tolerance for merging coincident knots.
pub const KNOT_TOL: f64 = 1e-9;

#[inline]
pub fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

/// Parameters of a width-`k` network.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "ParamsRecord")]
pub struct NetParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Deserialize)]
struct ParamsRecord {
    k: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl TryFrom<ParamsRecord> for NetParams {
    type Error = Error;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        let p = NetParams::new(r.w1, r.b1, r.w2, r.b2)?;
        if p.width() != r.k {
            return Err(Error::Parse(format!("k = {} but {} neurons given", r.k, p.width())));
        }
        Ok(p)
    }
}

impl NetParams {
    pub fn new(w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: f64) -> Result<Self> {
        let k = w1.len();
        if k == 0 {
            return Err(Error::InvalidArgument("network width must be at least 1".into()));
        }
        if b1.len() != k || w2.len() != k {
            return Err(Error::InvalidArgument(format!(
                "layer lengths differ: w1 {}, b1 {}, w2 {}",
                k,
                b1.len(),
                w2.len()
            )));
        }
        let p = NetParams { w1, b1, w2, b2 };
        if !p.iter_flat().all(f64::is_finite) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        Ok(p)
    }

    /// Width-`k` network with every neuron dead (`w1 = 0, b1 = -1, w2 = 0`)
    /// and `b2 = 0`; represents `f = 0` and is twice differentiable everywhere.
    pub fn inactive(k: usize) -> Self {
        NetParams {
            w1: vec![0.0; k],
            b1: vec![-1.0; k],
            w2: vec![0.0; k],
            b2: 0.0,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w1.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        3 * self.width() + 1
    }

    fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .chain(std::iter::once(self.b2))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter_flat().collect()
    }

    pub fn from_flat(k: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != 3 * k + 1 {
            return Err(Error::InvalidArgument(format!(
                "flat vector has length {}, expected {}",
                theta.len(),
                3 * k + 1
            )));
        }
        NetParams::new(
            theta[..k].to_vec(),
            theta[k..2 * k].to_vec(),
            theta[2 * k..3 * k].to_vec(),
            theta[3 * k],
        )
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter_flat().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.iter_flat().fold(0.0, |m, t| m.max(t.abs()))
    }

    /// Function value at `x`.
    pub fn forward(&self, x: f64) -> f64 {
        let mut f = self.b2;
        for i in 0..self.width() {
            f += self.w2[i] * relu(self.w1[i] * x + self.b1[i]);
        }
        f
    }

    /// Activation threshold of neuron `i`, if it has one.
    pub fn threshold(&self, i: usize) -> Option<f64> {
        (self.w1[i] != 0.0).then(|| -self.b1[i] / self.w1[i])
    }

    /// JSON record `{k, w1, b1, w2, b2}` with every number written to 17
    /// significant digits, which round-trips `f64` exactly.
    pub fn to_json(&self) -> String {
        fn list(v: &[f64]) -> String {
            let items: Vec<String> = v.iter().map(|t| fmt17(*t)).collect();
            format!("[{}]", items.join(", "))
        }
        format!(
            "{{\n  \"k\": {},\n  \"w1\": {},\n  \"b1\": {},\n  \"w2\": {},\n  \"b2\": {}\n}}\n",
            self.width(),
            list(&self.w1),
            list(&self.b1),
            list(&self.w2),
            fmt17(self.b2)
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// 17-significant-digit scientific formatting.
pub fn fmt17(t: f64) -> String {
    format!("{:.16e}", t)
}

/// One activation threshold and the signed jump of `f'` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub tau: f64,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnotList {
    /// One entry per neuron with a threshold inside the interval, sorted by location.
    pub entries: Vec<Knot>,
    /// Entries grouped by location, jumps summed; locations strictly increasing.
    pub merged: Vec<Knot>,
}

/// Knots of `params` whose location lies in the closed interval `[lo, hi]`.
///
/// Knots closer than `knot_tol` to their predecessor are merged; a merged
/// group sits at the location of its leftmost member.
pub fn knots(params: &NetParams, lo: f64, hi: f64, knot_tol: f64) -> KnotList {
    let mut entries: Vec<Knot> = (0..params.width())
        .filter_map(|i| {
            let tau = params.threshold(i)?;
            (tau >= lo && tau <= hi).then(|| Knot {
                tau,
                jump: params.w1[i].abs() * params.w2[i],
            })
        })
        .collect();
    entries.sort_by(|a, b| a.tau.total_cmp(&b.tau));

    let mut merged: Vec<Knot> = Vec::new();
    let mut last_tau = f64::NEG_INFINITY;
    for e in &entries {
        match merged.last_mut() {
            Some(m) if e.tau - last_tau < knot_tol => m.jump += e.jump,
            _ => merged.push(*e),
        }
        last_tau = e.tau;
    }
    KnotList { entries, merged }
}

/// First-order total variation over the open interval `(lo, hi)`: the sum of
/// absolute merged jumps strictly inside it.
pub fn tv1_exact(params: &NetParams, lo: f64, hi: f64) -> f64 {
    knots(params, lo, hi, KNOT_TOL)
        .merged
        .iter()
        .filter(|k| k.tau > lo && k.tau < hi)
        .map(|k| k.jump.abs())
        .sum()
}

/// `sum |w1_i w2_i|` over neurons whose threshold lies in the closed `[lo, hi]`.
pub fn coeff_sum(params: &NetParams, lo: f64, hi: f64) -> f64 {
    (0..params.width())
        .filter(|&i| matches!(params.threshold(i), Some(t) if t >= lo && t <= hi))
        .map(|i| (params.w1[i] * params.w2[i]).abs())
        .sum()
}

/// Parameter gradient of `f(x)`.
pub fn grad_f(params: &NetParams, x: f64) -> Vec<f64> {
    let mut g = vec![0.0; params.dim()];
    grad_f_into(params, x, &mut g);
    g
}

/// Writes the parameter gradient of `f(x)` into `out` (length `3k + 1`).
pub fn grad_f_into(params: &NetParams, x: f64, out: &mut [f64]) {
    let k = params.width();
    debug_assert_eq!(out.len(), 3 * k + 1);
    for i in 0..k {
        let pre = params.w1[i] * x + params.b1[i];
        if pre > 0.0 {
            out[i] = x * params.w2[i];
            out[k + i] = params.w2[i];
            out[2 * k + i] = pre;
        } else {
            out[i] = 0.0;
            out[k + i] = 0.0;
            out[2 * k + i] = 0.0;
        }
    }
    out[3 * k] = 1.0;
}

#[inline]
fn near_knot(w1: f64, b1: f64, x: f64, tol: f64) -> bool {
    (w1 * x + b1).abs() < tol * 1f64.max(w1.abs() * x.abs() + b1.abs())
}

/// Pairs `(neuron, point)` where a neuron's knot coincides with a design point
/// under the relative test `|w1 x + b1| < tol * max(1, |w1||x| + |b1|)`.
pub fn differentiability_check(params: &NetParams, xs: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..params.width() {
        for (j, &x) in xs.iter().enumerate() {
            if near_knot(params.w1[i], params.b1[i], x, tol) {
                out.push((i, j));
            }
        }
    }
    out
}

/// [`differentiability_check`] as a `Result`.
pub fn ensure_differentiable(params: &NetParams, xs: &[f64], tol: f64) -> Result<()> {
    let v = differentiability_check(params, xs, tol);
    match v.first() {
        None => Ok(()),
        Some(&(neuron, point)) => Err(Error::NonDifferentiable {
            count: v.len(),
            neuron,
            point,
        }),
    }
}

/// `(hess_theta f(x)) v` using the sparse cross blocks
/// `d2f/dw1_i dw2_i = x 1(pre > 0)` and `d2f/db1_i dw2_i = 1(pre > 0)`.
pub fn hess_f_apply(params: &NetParams, x: f64, v: &[f64]) -> Result<Vec<f64>> {
    ensure_differentiable(params, &[x], DIFFERENTIABILITY_TOL)?;
    let mut out = vec![0.0; params.dim()];
    hess_f_apply_into(params, x, v, 1.0, &mut out);
    Ok(out)
}

/// Accumulates `scale * (hess f(x)) v` into `out` without checking differentiability.
pub(crate) fn hess_f_apply_into(params: &NetParams, x: f64, v: &[f64], scale: f64, out: &mut [f64]) {
    let k = params.width();
    for i in 0..k {
        if params.w1[i] * x + params.b1[i] > 0.0 {
            let vw2 = v[2 * k + i];
            out[i] += scale * x * vw2;
            out[k + i] += scale * vw2;
            out[2 * k + i] += scale * (x * v[i] + v[k + i]);
        }
    }
}

/// Default relative knot offset used by [`construct_flat_interpolant`].
pub const FLAT_EPS: f64 = 0.01;

/// Builds an interpolant with `f(x_i) = y_i * gamma_max` that is linear
/// between neighbouring design points except for one knot per gap.
///
/// Neuron 0 carries the constant `y_1 * gamma_max` (`w1 = 0`). Neuron `i >= 1`
/// places its knot at `x_{i-1} + eps * (x_i - x_{i-1})` and carries the slope
/// increment solved for by forward substitution. Every active neuron has
/// `|w2| = sqrt(n * gamma_max)`. A neuron whose increment is zero, or so small
/// that its preactivations fall under the differentiability floor, is left dead
/// (`w1 = 0, b1 = -1, w2 = 0`); the interpolation error this leaves at `x_i` is
/// about `2e-9 * sqrt(n * gamma_max) / eps` at most. `b2 = 0`.
pub fn construct_flat_interpolant(xs: &[f64], ys: &[f64], gamma_max: f64, eps: f64) -> Result<NetParams> {
    let n = xs.len();
    if n < 1 {
        return Err(Error::DegenerateDesign("no design points".into()));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateDesign(
            "design points must be strictly increasing".into(),
        ));
    }
    if ys.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} design points",
            ys.len(),
            n
        )));
    }
    if ys.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidArgument("labels must be -1 or +1".into()));
    }
    if !(gamma_max > 0.0 && gamma_max.is_finite()) {
        return Err(Error::InvalidArgument("gamma_max must be positive".into()));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument("eps must lie in (0, 0.5)".into()));
    }

    let scale = (n as f64 * gamma_max).sqrt();
    let mut p = NetParams::inactive(n);
    // constant carrier: w2 * relu(b1) = y_1 * gamma_max
    p.w1[0] = 0.0;
    p.b1[0] = gamma_max / scale;
    p.w2[0] = ys[0] * scale;

    let mut taus = vec![0.0; n];
    let mut slopes = vec![0.0; n];
    for i in 1..n {
        let tau = xs[i - 1] + eps * (xs[i] - xs[i - 1]);
        let mut current = ys[0] * gamma_max;
        for j in 1..i {
            current += slopes[j] * (xs[i] - taus[j]);
        }
        let delta = (ys[i] * gamma_max - current) / (xs[i] - tau);
        let w1 = delta.abs() / scale;
        let b1 = -w1 * tau;
        // corrections after a label switch decay geometrically; once a neuron
        // is too small to clear the differentiability floor it stays dead
        let clears_floor = xs
            .iter()
            .all(|&x| (w1 * x + b1).abs() >= 2.0 * DIFFERENTIABILITY_TOL * (w1 * x.abs() + b1.abs()).max(1.0));
        taus[i] = tau;
        if delta == 0.0 || !clears_floor {
            continue;
        }
        slopes[i] = delta;
        p.w1[i] = w1;
        p.b1[i] = b1;
        p.w2[i] = delta.signum() * scale;
    }
    Ok(p)
}
