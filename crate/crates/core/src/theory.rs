//! Uncertain sets, weight functions and numeric certificates for the
//! flatness-implies-regularity inequalities, plus the generalization rate formulas.

use crate::datagen::PiecewiseLinear;
use crate::error::{Error, Result};
use crate::objective::{empirical_loss, logistic_curvature, Dataset, IntervalUnion};
use crate::relu_net::{ensure_differentiable, knots, NetParams, DIFFERENTIABILITY_TOL, KNOT_TOL};

/// `e^{-gamma} / (1 + e^{-gamma})^2`, the smallest logistic curvature over margins in `[-gamma, gamma]`.
pub fn gamma_fn(gamma: f64) -> f64 {
    logistic_curvature(gamma)
}

/// Design points on which the network is not confident: `|f(x_i)| <= gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainPoints {
    pub indices: Vec<usize>,
    pub gamma: f64,
}

impl UncertainPoints {
    pub fn n_gamma(&self) -> usize {
        self.indices.len()
    }
}

pub fn uncertain_points(params: &NetParams, data: &Dataset, gamma: f64) -> UncertainPoints {
    let indices = (0..data.len())
        .filter(|&i| params.forward(data.xs[i]).abs() <= gamma)
        .collect();
    UncertainPoints { indices, gamma }
}

/// Right-side, left-side and combined (`min`) value of a weight function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSides {
    pub plus: f64,
    pub minus: f64,
    pub value: f64,
}

impl WeightSides {
    fn new(plus: f64, minus: f64) -> Self {
        WeightSides {
            plus,
            minus,
            value: plus.min(minus),
        }
    }
}

/// Weight for the network-dependent bound, under the uniform distribution on
/// the uncertain points. A side with no mass contributes 0.
pub fn h_empirical(x: f64, pts: &UncertainPoints, data: &Dataset) -> WeightSides {
    let set: Vec<f64> = pts.indices.iter().map(|&i| data.xs[i]).collect();
    if set.is_empty() {
        return WeightSides::new(0.0, 0.0);
    }
    let total = set.len() as f64;
    let side = |outside: &dyn Fn(f64) -> bool| {
        let members: Vec<f64> = set.iter().copied().filter(|&t| outside(t)).collect();
        if members.is_empty() {
            return 0.0;
        }
        let m = members.len() as f64;
        let prob = m / total;
        let mean = members.iter().sum::<f64>() / m;
        let mean_gap = members.iter().map(|t| (t - x).abs()).sum::<f64>() / m;
        prob * prob * (1.0 + mean * mean).sqrt() * mean_gap
    };
    WeightSides::new(side(&|t| t > x), side(&|t| t < x))
}

/// Measured `lambda_max` or the stable-set threshold `2 / eta` substituted for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curvature {
    Measured(f64),
    StepSize(f64),
}

impl Curvature {
    pub fn value(self) -> f64 {
        match self {
            Curvature::Measured(l) => l,
            Curvature::StepSize(eta) => 2.0 / eta,
        }
    }
}

/// Outcome of evaluating one inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport {
    pub gamma: f64,
    pub zeta: Option<f64>,
    pub eps: Option<f64>,
    pub n_gamma: usize,
    pub curvature: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    /// Set when a probability factor was clamped at zero, making the bound trivially true.
    pub vacuous: bool,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    gamma: f64,
    zeta: Option<f64>,
    eps: Option<f64>,
    n_gamma: usize,
    curvature: f64,
    lhs: f64,
    rhs: f64,
    vacuous: bool,
) -> CertificateReport {
    let slack = rhs - lhs;
    CertificateReport {
        gamma,
        zeta,
        eps,
        n_gamma,
        curvature,
        lhs,
        rhs,
        slack,
        holds: slack >= -1e-9 * rhs.abs().max(1.0),
        vacuous,
    }
}

/// `lambda + 2 max(x_max, 1) L(f)`.
fn flatness_budget(params: &NetParams, data: &Dataset, curvature: Curvature) -> f64 {
    curvature.value() + 2.0 * data.x_max.max(1.0) * empirical_loss(params, data)
}

/// `sum |jump| * w(tau)` over merged knots strictly inside `(-x_max, x_max)`.
pub fn weighted_tv1<W: Fn(f64) -> f64>(params: &NetParams, x_max: f64, weight: W) -> f64 {
    knots(params, -x_max, x_max, KNOT_TOL)
        .merged
        .iter()
        .filter(|k| k.tau > -x_max && k.tau < x_max)
        .map(|k| k.jump.abs() * weight(k.tau))
        .sum()
}

/// Checks `1 + 2 int |f''| h_gamma <= n / (n_gamma Gamma(gamma)) (lambda + 2 max(x_max,1) L(f))`.
pub fn bias_certificate(
    params: &NetParams,
    data: &Dataset,
    gamma: f64,
    curvature: Curvature,
) -> Result<CertificateReport> {
    ensure_differentiable(params, &data.xs, DIFFERENTIABILITY_TOL)?;
    let pts = uncertain_points(params, data, gamma);
    if pts.n_gamma() == 0 {
        return Err(Error::EmptyUncertainSet { gamma });
    }
    let lhs = 1.0 + 2.0 * weighted_tv1(params, data.x_max, |t| h_empirical(t, &pts, data).value);
    let scale = data.len() as f64 / (pts.n_gamma() as f64 * gamma_fn(gamma));
    let rhs = scale * flatness_budget(params, data, curvature);
    Ok(finish(
        gamma,
        None,
        None,
        pts.n_gamma(),
        curvature.value(),
        lhs,
        rhs,
        false,
    ))
}

/// `{x : |f0(x)| <= gamma}` as a union of closed intervals, solved piece by piece.
pub fn truth_uncertain_region(f0: &PiecewiseLinear, gamma: f64) -> IntervalUnion {
    let mut pieces = Vec::new();
    for j in 0..f0.pieces() {
        let (a, b, fa, fb) = f0.piece(j);
        if fa == fb {
            if fa.abs() <= gamma {
                pieces.push((a, b));
            }
            continue;
        }
        let at = |level: f64| a + (level - fa) * (b - a) / (fb - fa);
        let (t1, t2) = (at(-gamma), at(gamma));
        let lo = t1.min(t2).max(a);
        let hi = t1.max(t2).min(b);
        if lo <= hi {
            pieces.push((lo, hi));
        }
    }
    IntervalUnion::new(pieces).expect("pieces are ordered closed intervals")
}

/// Explicit closeness correction `4 eps (1 + e^s)^2 e^{-s} / zeta^2` with `s = gamma + zeta`.
pub fn p_correction(eps: f64, gamma: f64, zeta: f64) -> f64 {
    let s = gamma + zeta;
    4.0 * eps * (2.0 + 2.0 * s.cosh()) / (zeta * zeta)
}

/// Feature distribution against which the asymptotic weight function is evaluated.
pub enum FeatureLaw<'a> {
    /// Uniform on `[-x_max, x_max]`, integrated in closed form.
    Uniform { x_max: f64 },
    /// Density on `[-x_max, x_max]`, integrated numerically.
    Density { x_max: f64, pdf: &'a dyn Fn(f64) -> f64 },
}

const QUAD_TOL: f64 = 1e-9;

impl FeatureLaw<'_> {
    fn support(&self) -> (f64, f64) {
        match self {
            FeatureLaw::Uniform { x_max } | FeatureLaw::Density { x_max, .. } => (-x_max, *x_max),
        }
    }

    /// Probability of `[lo, hi]` (clipped to the support).
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        let (s0, s1) = self.support();
        let (lo, hi) = (lo.max(s0), hi.min(s1));
        if lo >= hi {
            return 0.0;
        }
        match self {
            FeatureLaw::Uniform { x_max } => (hi - lo) / (2.0 * x_max),
            FeatureLaw::Density { pdf, .. } => quadrature::integrate(pdf, lo, hi, QUAD_TOL).integral,
        }
    }

    /// `E[|X - x| 1(X in [lo, hi])]` for `[lo, hi]` on one side of `x`.
    fn gap_moment(&self, lo: f64, hi: f64, x: f64) -> f64 {
        let (s0, s1) = self.support();
        let (lo, hi) = (lo.max(s0), hi.min(s1));
        if lo >= hi {
            return 0.0;
        }
        match self {
            FeatureLaw::Uniform { x_max } => ((hi - x).powi(2) - (lo - x).powi(2)).abs() / (4.0 * x_max),
            FeatureLaw::Density { pdf, .. } => {
                quadrature::integrate(|t| (t - x).abs() * pdf(t), lo, hi, QUAD_TOL).integral
            }
        }
    }

    fn union_mass(&self, u: &IntervalUnion, lo: f64, hi: f64) -> f64 {
        u.intervals()
            .iter()
            .map(|&(a, b)| self.mass(a.max(lo), b.min(hi)))
            .sum()
    }

    fn union_gap_moment(&self, u: &IntervalUnion, lo: f64, hi: f64, x: f64) -> f64 {
        u.intervals()
            .iter()
            .map(|&(a, b)| self.gap_moment(a.max(lo), b.min(hi), x))
            .sum()
    }
}

/// Assembles one side of the truth-based weight:
/// `(max(0, inner_side - p) / (outer + p))^2 * moment / (outer_side + p)`.
fn hbar_side(inner_side: f64, outer: f64, outer_side: f64, moment: f64, p: f64) -> f64 {
    let num = (inner_side - p).max(0.0);
    let den = outer + p;
    let side_den = outer_side + p;
    if num == 0.0 || den <= 0.0 || side_den <= 0.0 {
        return 0.0;
    }
    (num / den).powi(2) * moment / side_den
}

/// Truth-based weight under the empirical feature distribution with the
/// closeness correction `p = p_correction(eps, gamma, zeta)`.
pub fn hbar_empirical(x: f64, f0: &PiecewiseLinear, xs: &[f64], gamma: f64, zeta: f64, eps: f64) -> WeightSides {
    let n = xs.len() as f64;
    let p = p_correction(eps, gamma, zeta);
    let inner = truth_uncertain_region(f0, gamma - zeta);
    let outer = truth_uncertain_region(f0, gamma + zeta);
    let inner_pts: Vec<f64> = xs.iter().copied().filter(|&t| inner.contains(t)).collect();
    let frac = |pred: &dyn Fn(f64) -> bool, set: &[f64]| set.iter().filter(|&&t| pred(t)).count() as f64 / n;

    // truncated inner set: members with at least mass p of the inner set on each side
    let truncated: Vec<f64> = inner_pts
        .iter()
        .copied()
        .filter(|&t| frac(&|s| s > t, &inner_pts).min(frac(&|s| s < t, &inner_pts)) >= p)
        .collect();
    let outer_pts: Vec<f64> = xs.iter().copied().filter(|&t| outer.contains(t)).collect();
    let outer_mass = outer_pts.len() as f64 / n;

    let plus = hbar_side(
        frac(&|t| t > x, &inner_pts),
        outer_mass,
        frac(&|t| t > x, &outer_pts),
        truncated.iter().filter(|&&t| t > x).map(|t| t - x).sum::<f64>() / n,
        p,
    );
    let minus = hbar_side(
        frac(&|t| t < x, &inner_pts),
        outer_mass,
        frac(&|t| t < x, &outer_pts),
        truncated.iter().filter(|&&t| t < x).map(|t| x - t).sum::<f64>() / n,
        p,
    );
    WeightSides::new(plus, minus)
}

/// Large-sample limit of [`hbar_empirical`]: no correction, population feature law.
pub fn hbar_asymptotic(x: f64, f0: &PiecewiseLinear, law: &FeatureLaw, gamma: f64, zeta: f64) -> WeightSides {
    let inner = truth_uncertain_region(f0, gamma - zeta);
    let outer = truth_uncertain_region(f0, gamma + zeta);
    let all = (f64::NEG_INFINITY, f64::INFINITY);
    let outer_mass = law.union_mass(&outer, all.0, all.1);
    let plus = hbar_side(
        law.union_mass(&inner, x, all.1),
        outer_mass,
        law.union_mass(&outer, x, all.1),
        law.union_gap_moment(&inner, x, all.1, x),
        0.0,
    );
    let minus = hbar_side(
        law.union_mass(&inner, all.0, x),
        outer_mass,
        law.union_mass(&outer, all.0, x),
        law.union_gap_moment(&inner, all.0, x, x),
        0.0,
    );
    WeightSides::new(plus, minus)
}

/// Fraction of design points inside `{|f0| <= gamma}`.
pub fn truth_mass(f0: &PiecewiseLinear, xs: &[f64], gamma: f64) -> f64 {
    let region = truth_uncertain_region(f0, gamma);
    xs.iter().filter(|&&t| region.contains(t)).count() as f64 / xs.len() as f64
}

/// Checks `Gamma(gamma) (P(A_{gamma-zeta}) - p) (1 + 2 int |f''| hbar) <= lambda + 2 max(x_max,1) L(f)`
/// with all probabilities taken over the design points and `eps` the excess-risk budget.
pub fn tvb_certificate(
    params: &NetParams,
    data: &Dataset,
    f0: &PiecewiseLinear,
    gamma: f64,
    zeta: f64,
    eps: f64,
    curvature: Curvature,
) -> Result<CertificateReport> {
    if !(gamma > zeta && zeta > 0.0) {
        return Err(Error::InvalidArgument("need gamma > zeta > 0".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument("eps must be nonnegative".into()));
    }
    ensure_differentiable(params, &data.xs, DIFFERENTIABILITY_TOL)?;
    let p = p_correction(eps, gamma, zeta);
    let inner_mass = truth_mass(f0, &data.xs, gamma - zeta);
    let lead = inner_mass - p;
    let vacuous = lead <= 0.0;
    let lhs = if vacuous {
        0.0
    } else {
        let tv = weighted_tv1(params, data.x_max, |t| {
            hbar_empirical(t, f0, &data.xs, gamma, zeta, eps).value
        });
        gamma_fn(gamma) * lead * (1.0 + 2.0 * tv)
    };
    let rhs = flatness_budget(params, data, curvature);
    let n_gamma = uncertain_points(params, data, gamma).n_gamma();
    Ok(finish(
        gamma,
        Some(zeta),
        Some(eps),
        n_gamma,
        curvature.value(),
        lhs,
        rhs,
        vacuous,
    ))
}

/// Generalization-gap rate with unit constant:
/// `[log(1+e^B)^4 max(c,1) x_max log(2 max(c,1)/delta)^2 / n^2]^{1/5}`.
pub fn gen_gap_rate(bound: f64, complexity: f64, x_max: f64, delta: f64, n: f64) -> f64 {
    let c = complexity.max(1.0);
    let lb = crate::objective::logistic(-bound);
    (lb.powi(4) * c * x_max * (2.0 * c / delta).ln().powi(2) / (n * n)).powf(0.2)
}

/// Excess-risk rate on an interval with `n_inside` points, unit constant:
/// `[(B+1)^4 (x_max/eta + x_max^2 (1+B)) log(1/delta)^2 / n_inside^2]^{1/5}`.
pub fn er_rate(bound: f64, eta: f64, x_max: f64, delta: f64, n_inside: f64) -> f64 {
    let b1 = bound + 1.0;
    (b1.powi(4) * (x_max / eta + x_max * x_max * b1) * (1.0 / delta).ln().powi(2) / (n_inside * n_inside)).powf(0.2)
}

/// Crude excess-risk bound from a parameter-norm budget `t > 1`, unit constant:
/// `(1+B)^{4/5} x_max^{1/5} (t log(t/delta)/n)^{2/5} + (1+B) sqrt(log(1/delta)/n)`.
pub fn crude_er_bound(bound: f64, x_max: f64, norm_budget: f64, delta: f64, n: f64) -> f64 {
    let b1 = 1.0 + bound;
    let t = norm_budget;
    b1.powf(0.8) * x_max.powf(0.2) * (t * (t / delta).ln() / n).powf(0.4) + b1 * ((1.0 / delta).ln() / n).sqrt()
}

/// Convex hull of `region` shrunk by `rho / 2` of its length on each side.
pub fn choose_interval(region: &IntervalUnion, rho: f64) -> Result<IntervalUnion> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument("rho must lie in [0, 1)".into()));
    }
    let (a, b) = region.hull().ok_or(Error::EmptyRegion)?;
    let cut = rho * (b - a) / 2.0;
    IntervalUnion::single(a + cut, b - cut)
}
