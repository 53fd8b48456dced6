//! Full-batch gradient descent with metric logging.

use std::fmt::Write as _;

use crate::datagen::{rng_from_seed, uniform01, PiecewiseLinear};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::objective::{excess_error_values, excess_risk_values, loss_and_grad, population_loss_values, Dataset};
use crate::relu_net::{
    coeff_sum, construct_flat_interpolant, differentiability_check, tv1_exact, NetParams, DIFFERENTIABILITY_TOL,
    FLAT_EPS,
};
use crate::spectral::{lambda_max, HessianOperator, PowerOptions};

/// How the starting parameters are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `w1, b1, w2` i.i.d. uniform on `[-scale, scale]`, `b2 = 0`.
    Random { scale: f64 },
    /// Interpolant with `y_i f(x_i) = target_margin` at every design point.
    Confident { target_margin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub iters: usize,
    pub record_every: usize,
    pub lambda_every: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub init: Init,
    pub divergence_threshold: f64,
    /// Exponent of the `coeff_lp` sparsity metric.
    pub lp_exponent: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.8,
            iters: 200_000,
            record_every: 1000,
            lambda_every: 1000,
            weight_decay: 0.0,
            seed: 0,
            init: Init::Random { scale: 1.0 },
            divergence_threshold: 1e8,
            lp_exponent: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive and finite");
        }
        if self.record_every == 0 || self.lambda_every == 0 {
            return bad("record_every and lambda_every must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence_threshold must be positive");
        }
        if !(self.lp_exponent > 0.0) {
            return bad("lp_exponent must be positive");
        }
        match self.init {
            Init::Random { scale } if !(scale >= 0.0 && scale.is_finite()) => bad("init scale must be nonnegative"),
            Init::Confident { target_margin } if !(target_margin >= 0.0 && target_margin.is_finite()) => {
                bad("target margin must be nonnegative")
            }
            _ => Ok(()),
        }
    }
}

pub fn init_random(k: usize, scale: f64, seed: u64) -> NetParams {
    let mut rng = rng_from_seed(seed);
    let mut draw = || scale * (2.0 * uniform01(&mut rng) - 1.0);
    let w1 = (0..k).map(|_| draw()).collect();
    let b1 = (0..k).map(|_| draw()).collect();
    let w2 = (0..k).map(|_| draw()).collect();
    NetParams { w1, b1, w2, b2: 0.0 }
}

/// Interpolates `y_i * target_margin` with the flat construction and pads
/// to width `k` with inactive neurons. A zero target gives the zero function.
pub fn init_confident(data: &Dataset, target_margin: f64, k: usize) -> Result<NetParams> {
    let n = data.len();
    if k < n {
        return Err(Error::WidthTooSmall { k, n });
    }
    if target_margin == 0.0 {
        return Ok(NetParams::inactive(k));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.xs[a].total_cmp(&data.xs[b]));
    let xs: Vec<f64> = order.iter().map(|&i| data.xs[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| data.ys[i]).collect();
    let core = construct_flat_interpolant(&xs, &ys, target_margin, FLAT_EPS)?;
    let mut p = NetParams::inactive(k);
    p.w1[..n].copy_from_slice(&core.w1);
    p.b1[..n].copy_from_slice(&core.b1);
    p.w2[..n].copy_from_slice(&core.w2);
    p.b2 = core.b2;
    Ok(p)
}

pub fn initialize(cfg: &TrainConfig, data: &Dataset, k: usize) -> Result<NetParams> {
    match cfg.init {
        Init::Random { scale } => Ok(init_random(k, scale, cfg.seed)),
        Init::Confident { target_margin } => init_confident(data, target_margin, k),
    }
}

/// Metrics of one recorded iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub train_loss: f64,
    pub pop_loss: f64,
    pub excess_risk: f64,
    pub excess_error: f64,
    pub lambda_max: Option<f64>,
    pub tv1: f64,
    pub coeff_sum: f64,
    pub theta_l2: f64,
    pub coeff_l1: f64,
    pub coeff_lp: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str =
    "iter,train_loss,pop_loss,excess_risk,excess_error,lambda_max,tv1,coeff_sum,theta_l2,coeff_l1,coeff_lp,diverged";

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn diverged(&self) -> bool {
        self.rows.last().is_some_and(|r| r.diverged)
    }

    /// Most recent recorded `lambda_max`.
    pub fn last_lambda(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.lambda_max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let lambda = r.lambda_max.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.train_loss,
                r.pop_loss,
                r.excess_risk,
                r.excess_error,
                lambda,
                r.tv1,
                r.coeff_sum,
                r.theta_l2,
                r.coeff_l1,
                r.coeff_lp,
                r.diverged
            );
        }
        s
    }
}

/// `sum |w1 w2|` over all neurons and `(sum |w1 w2|^p)^{1/p}`.
pub fn sparsity_norms(params: &NetParams, p: f64) -> (f64, f64) {
    let coeffs = params.w1.iter().zip(&params.w2).map(|(a, b)| (a * b).abs());
    let l1 = coeffs.clone().sum();
    let lp = coeffs.map(|c| c.powf(p)).sum::<f64>().powf(1.0 / p);
    (l1, lp)
}

/// Copy of `params` nudged to a nearby point where the loss is twice
/// differentiable, for curvature measurement.
///
/// Each offending neuron's bias moves by `1e-9 * spacing * max(1, |b1|)`,
/// doubled until the check passes. Near-zero neurons (all preactivations below
/// the absolute floor of the check) need a few doublings; regular neurons
/// almost never more than one.
pub fn jitter_off_knots(params: &NetParams, data: &Dataset) -> NetParams {
    let spacing = data.min_spacing().unwrap_or(1.0);
    let mut q = params.clone();
    for round in 0..48 {
        let bad = differentiability_check(&q, &data.xs, DIFFERENTIABILITY_TOL);
        if bad.is_empty() {
            break;
        }
        let step = 1e-9 * spacing * 2f64.powi(round);
        let mut last = usize::MAX;
        for (neuron, _) in bad {
            if neuron != last {
                q.b1[neuron] += step * q.b1[neuron].abs().max(1.0);
                last = neuron;
            }
        }
    }
    q
}

/// Largest Hessian eigenvalue at `params` (jittered if needed). `warm` holds the
/// previous top eigenvector and is updated in place.
pub fn measure_lambda(params: &NetParams, data: &Dataset, warm: &mut Option<Vec<f64>>) -> Result<f64> {
    let q = jitter_off_knots(params, data);
    let op = HessianOperator::auto(&q, data)?;
    let opts = PowerOptions {
        warm_start: warm.take(),
        ..PowerOptions::default()
    };
    let top = lambda_max(&op, &opts)?;
    *warm = Some(top.vector);
    Ok(top.value)
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[allow(clippy::too_many_arguments)]
fn metrics_row(
    iter: usize,
    params: &NetParams,
    data: &Dataset,
    f0: &PiecewiseLinear,
    train_loss: f64,
    lambda_max: Option<f64>,
    lp: f64,
    diverged: bool,
) -> TraceRow {
    let fvals: Vec<f64> = data.xs.iter().map(|&x| params.forward(x)).collect();
    let (coeff_l1, coeff_lp) = sparsity_norms(params, lp);
    let xm = data.x_max;
    TraceRow {
        iter,
        train_loss: finite_or_inf(train_loss),
        pop_loss: finite_or_inf(population_loss_values(&fvals, f0, &data.xs)),
        excess_risk: finite_or_inf(excess_risk_values(&fvals, f0, &data.xs)),
        excess_error: finite_or_inf(excess_error_values(&fvals, f0, &data.xs)),
        lambda_max,
        tv1: finite_or_inf(tv1_exact(params, -xm, xm)),
        coeff_sum: finite_or_inf(coeff_sum(params, -xm, xm)),
        theta_l2: finite_or_inf(params.l2_norm()),
        coeff_l1: finite_or_inf(coeff_l1),
        coeff_lp: finite_or_inf(coeff_lp),
        diverged,
    }
}

/// Runs `cfg.iters` steps of `theta <- theta - eta (grad L(theta) + weight_decay theta)`.
///
/// Rows are recorded at iteration 0, every `record_every` iterations and at the
/// end; `lambda_max` on rows whose iteration is a multiple of `lambda_every` and
/// on the final row. A loss or parameter norm above the divergence threshold
/// records a flagged row and stops the run.
pub fn gd_run(
    params0: &NetParams,
    data: &Dataset,
    f0: &PiecewiseLinear,
    cfg: &TrainConfig,
) -> Result<(NetParams, TrainTrace)> {
    cfg.validate()?;
    let k = params0.width();
    let mut theta = params0.to_flat();
    let mut params = params0.clone();
    let mut trace = TrainTrace::default();
    let mut warm = None;

    for t in 0..=cfg.iters {
        let (loss, grad) = loss_and_grad(&params, data, Execution::Sequential);
        let norm = params.l2_norm();
        let diverged = !(loss <= cfg.divergence_threshold && norm <= cfg.divergence_threshold);
        let last = t == cfg.iters || diverged;
        if diverged || t % cfg.record_every == 0 || last {
            let lambda = if !diverged && (t % cfg.lambda_every == 0 || last) {
                match measure_lambda(&params, data, &mut warm) {
                    Ok(l) => Some(l),
                    Err(e) => {
                        log::warn!("lambda_max not recorded at iteration {t}: {e}");
                        None
                    }
                }
            } else {
                None
            };
            trace.rows.push(metrics_row(
                t,
                &params,
                data,
                f0,
                loss,
                lambda,
                cfg.lp_exponent,
                diverged,
            ));
        }
        if last {
            break;
        }
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= cfg.eta * (g + cfg.weight_decay * *th);
        }
        // non-finite entries are reported as divergence on the next pass
        params = NetParams {
            w1: theta[..k].to_vec(),
            b1: theta[k..2 * k].to_vec(),
            w2: theta[2 * k..3 * k].to_vec(),
            b2: theta[3 * k],
        };
    }
    Ok((params, trace))
}
