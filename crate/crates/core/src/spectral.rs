//! Loss Hessians (dense and matrix-free), top eigenvalue estimation,
//! finite-difference oracles and the linearized GD stability simulation.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::{chunked_reduce, map_indexed, Execution};
use crate::objective::{logistic_curvature, sigmoid, Dataset};
use crate::relu_net::{ensure_differentiable, grad_f_into, hess_f_apply_into, NetParams, DIFFERENTIABILITY_TOL};

/// Largest parameter dimension handled by the dense path.
pub const DENSE_DIM_LIMIT: usize = 2048;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        DenseMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "{} entries for a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { dim, data })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = DenseMatrix::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest `|H_ij - H_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Lower bound on the smallest eigenvalue from Gershgorin discs.
    pub fn gershgorin_lower(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                let off: f64 = self
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, x)| x.abs())
                    .sum();
                self.get(i, i) - off
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

type Apply<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a>;

/// A symmetric linear operator on parameter space.
pub enum HessianOperator<'a> {
    Dense(DenseMatrix),
    MatrixFree { dim: usize, apply: Apply<'a> },
}

impl<'a> HessianOperator<'a> {
    pub fn matrix_free<F>(dim: usize, apply: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync + 'a,
    {
        HessianOperator::MatrixFree {
            dim,
            apply: Box::new(apply),
        }
    }

    /// Matrix-free loss Hessian; differentiability is checked once here.
    pub fn loss(params: &'a NetParams, data: &'a Dataset) -> Result<Self> {
        ensure_differentiable(params, &data.xs, DIFFERENTIABILITY_TOL)?;
        Ok(Self::matrix_free(params.dim(), move |v| hvp_unchecked(params, data, v)))
    }

    /// Dense operator when the dimension allows it, matrix-free otherwise.
    pub fn auto(params: &'a NetParams, data: &'a Dataset) -> Result<Self> {
        if params.dim() <= DENSE_DIM_LIMIT {
            Ok(HessianOperator::Dense(assemble_hessian(params, data)?))
        } else {
            Self::loss(params, data)
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HessianOperator::Dense(m) => m.dim(),
            HessianOperator::MatrixFree { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            HessianOperator::Dense(m) => m.matvec(v),
            HessianOperator::MatrixFree { apply, .. } => apply(v),
        }
    }
}

/// Per-point scalars of the loss Hessian: curvature weights `sigmoid(m) sigmoid(-m)`
/// on the Gram term and `-y sigmoid(-m)` on the network Hessian term.
fn point_weights(params: &NetParams, data: &Dataset, i: usize) -> (f64, f64) {
    let y = data.ys[i];
    let m = y * params.forward(data.xs[i]);
    (logistic_curvature(m), -y * sigmoid(-m))
}

/// Gram part `(1/n) sum_i d_i grad f(x_i) grad f(x_i)^T` and network-curvature part
/// `(1/n) sum_i c_i hess f(x_i)` of the loss Hessian.
pub fn hessian_parts(params: &NetParams, data: &Dataset, exec: Execution) -> Result<(DenseMatrix, DenseMatrix)> {
    ensure_differentiable(params, &data.xs, DIFFERENTIABILITY_TOL)?;
    let n = data.len();
    let dim = params.dim();
    let k = params.width();
    let inv_n = 1.0 / n as f64;

    let mut grads = vec![0.0; n * dim];
    let mut d = vec![0.0; n];
    let mut c = vec![0.0; n];
    for i in 0..n {
        grad_f_into(params, data.xs[i], &mut grads[i * dim..(i + 1) * dim]);
        (d[i], c[i]) = point_weights(params, data, i);
    }

    // upper triangle row by row, then mirrored so the result is exactly symmetric
    let rows = map_indexed(dim, exec, |r| {
        let mut row = vec![0.0; dim];
        for i in 0..n {
            let g = &grads[i * dim..(i + 1) * dim];
            let a = d[i] * g[r] * inv_n;
            if a != 0.0 {
                for (h, gj) in row[r..].iter_mut().zip(&g[r..]) {
                    *h += a * gj;
                }
            }
        }
        row
    });
    let mut gram = DenseMatrix {
        dim,
        data: rows.concat(),
    };
    for r in 1..dim {
        for j in 0..r {
            gram.data[r * dim + j] = gram.data[j * dim + r];
        }
    }

    let mut curv = DenseMatrix::zeros(dim);
    for i in 0..n {
        let x = data.xs[i];
        let s = c[i] * inv_n;
        for j in 0..k {
            if params.w1[j] * x + params.b1[j] > 0.0 {
                let w2 = 2 * k + j;
                curv.add(j, w2, s * x);
                curv.add(w2, j, s * x);
                curv.add(k + j, w2, s);
                curv.add(w2, k + j, s);
            }
        }
    }
    Ok((gram, curv))
}

/// Dense loss Hessian.
pub fn assemble_hessian(params: &NetParams, data: &Dataset) -> Result<DenseMatrix> {
    assemble_hessian_with(params, data, Execution::default())
}

pub fn assemble_hessian_with(params: &NetParams, data: &Dataset, exec: Execution) -> Result<DenseMatrix> {
    let (mut h, curv) = hessian_parts(params, data, exec)?;
    for (a, b) in h.data.iter_mut().zip(&curv.data) {
        *a += b;
    }
    Ok(h)
}

/// Loss Hessian applied to `v` without forming the matrix.
pub fn hvp_loss(params: &NetParams, data: &Dataset, v: &[f64]) -> Result<Vec<f64>> {
    ensure_differentiable(params, &data.xs, DIFFERENTIABILITY_TOL)?;
    if v.len() != params.dim() {
        return Err(Error::InvalidArgument(format!(
            "vector has length {}, expected {}",
            v.len(),
            params.dim()
        )));
    }
    Ok(hvp_unchecked(params, data, v))
}

fn hvp_unchecked(params: &NetParams, data: &Dataset, v: &[f64]) -> Vec<f64> {
    let dim = params.dim();
    let (mut out, _) = chunked_reduce(
        data.len(),
        Execution::Sequential,
        || (vec![0.0; dim], vec![0.0; dim]),
        |(acc, g), i| {
            let x = data.xs[i];
            let (d, c) = point_weights(params, data, i);
            grad_f_into(params, x, g);
            let a = d * dot(g, v);
            for (o, gj) in acc.iter_mut().zip(g.iter()) {
                *o += a * gj;
            }
            hess_f_apply_into(params, x, v, c, acc);
        },
        |t, p| {
            for (a, b) in t.0.iter_mut().zip(&p.0) {
                *a += b;
            }
        },
    );
    let inv_n = 1.0 / data.len() as f64;
    for o in &mut out {
        *o *= inv_n;
    }
    out
}

/// Settings for [`lambda_max`].
#[derive(Debug, Clone)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Starting vector; a seeded Gaussian vector is used when absent or zero.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-10,
            max_iter: 10_000,
            seed: 0,
            warm_start: None,
        }
    }
}

/// Result of [`lambda_max`]; `vector` is the final unit iterate.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub value: f64,
    pub iters: usize,
    pub vector: Vec<f64>,
}

fn gaussian_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// Bound on the spectral radius used to shift the spectrum to be nonnegative.
fn spectral_shift(op: &HessianOperator, seed: u64) -> f64 {
    match op {
        HessianOperator::Dense(m) => (-m.gershgorin_lower()).max(0.0),
        HessianOperator::MatrixFree { dim, apply } => {
            let probes = (0..10).map(|j| {
                let v = gaussian_unit(*dim, seed.wrapping_add(1 + j));
                norm2(&apply(&v))
            });
            1.1 * probes.fold(0.0, f64::max)
        }
    }
}

/// Largest signed eigenvalue by power iteration on `H + s I`.
///
/// Stops when successive Rayleigh quotients differ by less than
/// `tol * max(|value|, min(1, s))` and the geometric extrapolation of the
/// remaining change is below the same bound.
pub fn lambda_max(op: &HessianOperator, opts: &PowerOptions) -> Result<TopEigen> {
    let dim = op.dim();
    if dim == 0 {
        return Err(Error::InvalidArgument("operator has dimension 0".into()));
    }
    let shift = spectral_shift(op, opts.seed);
    let mut v = match &opts.warm_start {
        Some(w) if w.len() == dim && norm2(w) > 0.0 && w.iter().all(|x| x.is_finite()) => {
            let nw = norm2(w);
            w.iter().map(|x| x / nw).collect()
        }
        _ => gaussian_unit(dim, opts.seed),
    };

    let mut prev_rq = f64::NAN;
    let mut prev_diff = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let mut w = op.apply(&v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += shift * vi;
        }
        let rq = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            // v lies in the null space of H + sI, so it is a top eigenvector when s = 0
            return Ok(TopEigen {
                value: rq - shift,
                iters: iter,
                vector: v,
            });
        }
        let value = rq - shift;
        let diff = (rq - prev_rq).abs();
        let scale = value.abs().max(shift.min(1.0));
        let ratio = diff / prev_diff;
        let remaining = if ratio < 1.0 {
            diff * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if diff <= opts.tol * scale && (remaining <= opts.tol * scale || diff == 0.0) {
            return Ok(TopEigen {
                value,
                iters: iter,
                vector: v,
            });
        }
        prev_diff = diff;
        prev_rq = rq;
        v = w.iter().map(|x| x / nw).collect();
    }
    Err(Error::NotConverged {
        estimate: prev_rq - shift,
        iters: opts.max_iter,
    })
}

/// Default finite-difference step `1e-5 * max(1, |theta|_inf)`.
pub fn default_fd_step(theta: &[f64]) -> f64 {
    1e-5 * theta.iter().fold(1.0f64, |m, t| m.max(t.abs()))
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            t[j] = theta[j] + h;
            let fp = f(&t);
            t[j] = theta[j] - h;
            let fm = f(&t);
            t[j] = theta[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function; column `j` holds the
/// derivative in direction `e_j`.
pub fn central_jacobian<F: Fn(&[f64]) -> Vec<f64>>(g: F, theta: &[f64], h: f64) -> DenseMatrix {
    let dim = theta.len();
    let mut out = DenseMatrix::zeros(dim);
    let mut t = theta.to_vec();
    for j in 0..dim {
        t[j] = theta[j] + h;
        let gp = g(&t);
        t[j] = theta[j] - h;
        let gm = g(&t);
        t[j] = theta[j];
        for i in 0..dim {
            out.set(i, j, (gp[i] - gm[i]) / (2.0 * h));
        }
    }
    out
}

fn check_stencil(params: &NetParams, data: &Dataset, h: f64) -> Result<()> {
    let theta = params.to_flat();
    let k = params.width();
    ensure_differentiable(params, &data.xs, DIFFERENTIABILITY_TOL)?;
    let mut t = theta.clone();
    for j in 0..theta.len() {
        for step in [h, -h] {
            t[j] = theta[j] + step;
            ensure_differentiable(&NetParams::from_flat(k, &t)?, &data.xs, DIFFERENTIABILITY_TOL)?;
        }
        t[j] = theta[j];
    }
    Ok(())
}

/// Central differences of the empirical loss.
pub fn fd_gradient_oracle(params: &NetParams, data: &Dataset, h: f64) -> Result<Vec<f64>> {
    check_stencil(params, data, h)?;
    let k = params.width();
    Ok(central_gradient(
        |t| crate::objective::empirical_loss(&NetParams::from_flat(k, t).expect("finite stencil"), data),
        &params.to_flat(),
        h,
    ))
}

/// Central differences of the loss gradient.
pub fn fd_hessian_oracle(params: &NetParams, data: &Dataset, h: f64) -> Result<DenseMatrix> {
    check_stencil(params, data, h)?;
    let k = params.width();
    Ok(central_jacobian(
        |t| crate::objective::grad_loss(&NetParams::from_flat(k, t).expect("finite stencil"), data),
        &params.to_flat(),
        h,
    ))
}

/// Whether `params` lies in the stable set `lambda_max <= 2 / eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub lambda: f64,
    /// `2 / eta - lambda`.
    pub margin: f64,
}

pub fn stability_membership(params: &NetParams, data: &Dataset, eta: f64) -> Result<Membership> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let op = HessianOperator::auto(params, data)?;
    let lambda = lambda_max(&op, &PowerOptions::default())?.value;
    let threshold = 2.0 / eta;
    Ok(Membership {
        member: lambda <= threshold,
        lambda,
        margin: threshold - lambda,
    })
}

/// Norm above which the linearized iteration counts as diverged.
pub const SIM_DIVERGENCE: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    /// Largest Euclidean norm of the offset seen, including the start.
    pub sup_norm: f64,
    pub diverged: bool,
}

/// Iterates `e <- (I - eta H) e` from `offset` for `steps` steps.
pub fn linear_stability_sim(op: &HessianOperator, eta: f64, offset: &[f64], steps: usize) -> SimOutcome {
    let mut e = offset.to_vec();
    let mut sup = norm2(&e);
    for _ in 0..steps {
        let he = op.apply(&e);
        for (ei, hi) in e.iter_mut().zip(&he) {
            *ei -= eta * hi;
        }
        let ne = norm2(&e);
        if !(ne <= SIM_DIVERGENCE) {
            return SimOutcome {
                sup_norm: if ne.is_nan() { f64::INFINITY } else { ne.max(sup) },
                diverged: true,
            };
        }
        sup = sup.max(ne);
    }
    SimOutcome {
        sup_norm: sup,
        diverged: false,
    }
}

const DUMP_MAGIC: u64 = u64::from_le_bytes(*b"FLATHESS");

/// Writes `{dim: u64, magic: u64}` followed by the row-major entries, all little endian.
pub fn dump_dense(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * m.data.len());
    buf.extend_from_slice(&(m.dim as u64).to_le_bytes());
    buf.extend_from_slice(&DUMP_MAGIC.to_le_bytes());
    for x in &m.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_dense(path: &Path) -> Result<DenseMatrix> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let word = |i: usize| u64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
    if buf.len() < 16 {
        return Err(Error::Parse("Hessian dump is truncated".into()));
    }
    if word(1) != DUMP_MAGIC {
        return Err(Error::Parse("not a Hessian dump".into()));
    }
    let dim = word(0) as usize;
    if buf.len() != 16 + 8 * dim * dim {
        return Err(Error::Parse("Hessian dump has the wrong length".into()));
    }
    let data = (0..dim * dim).map(|i| f64::from_bits(word(2 + i))).collect();
    DenseMatrix::from_row_major(dim, data)
}
