//! The four subcommands and the artifacts they write.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use flatlab::datagen::{read_dataset, write_atomic, write_dataset, PiecewiseLinear, RNG_ID};
use flatlab::exec::map_indexed;
use flatlab::objective::{excess_risk, restricted_losses, Dataset};
use flatlab::relu_net::{construct_flat_interpolant, ensure_differentiable, NetParams, DIFFERENTIABILITY_TOL};
use flatlab::spectral::{lambda_max, HessianOperator, PowerOptions};
use flatlab::sweep::{make_dataset, run_cell, run_sweep, Cell, CellRun, SweepSpec};
use flatlab::theory::{
    bias_certificate, choose_interval, gamma_fn, h_empirical, hbar_asymptotic, hbar_empirical, truth_uncertain_region,
    tvb_certificate, uncertain_points, CertificateReport, Curvature, FeatureLaw,
};
use flatlab::trainer::{gd_run, initialize, jitter_off_knots, TRACE_HEADER};
use flatlab::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "-", env!("FLATLAB_GIT_DESCRIBE"));

/// Points in `function.csv`, endpoints included.
pub const FUNCTION_GRID: usize = 1001;

pub const CERTIFICATE_HEADER: &str = "gamma,zeta,eps,n_gamma,lhs,rhs,slack,holds,vacuous";
pub const WEIGHT_HEADER: &str = "x,h_emp,hbar_emp,hbar_asym,weighted";
pub const RESTRICTED_HEADER: &str = "gamma,rho,lo,hi,n_inside,loss,pop_loss,pop_loss_f0,optimized";
pub const FLAT_HEADER: &str = "gamma_max,lambda_max,raw_bound,constant,bound";

/// A failed command, classified for the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numeric(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Other(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Numeric(e) | Failure::Other(e) => e,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonDifferentiable { .. } | Error::NotConverged { .. } | Error::DegenerateDesign(_) => {
                Failure::Numeric(e.into())
            }
            Error::InvalidArgument(_) | Error::WidthTooSmall { .. } => Failure::Config(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    rng: &'static str,
    config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Value::is_null")]
    results: Value,
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, results: Value) -> anyhow::Result<()> {
    let m = Manifest {
        command,
        version: VERSION,
        rng: RNG_ID,
        config: cfg,
        results,
    };
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&m)?)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    write_atomic(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `m` equally spaced points on `[-x_max, x_max]`, both ends exact.
pub fn grid(x_max: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            if i + 1 == m {
                x_max
            } else {
                -x_max + 2.0 * x_max * i as f64 / (m - 1) as f64
            }
        })
        .collect()
}

fn function_csv(params: &NetParams, f0: &PiecewiseLinear, x_max: f64) -> String {
    let mut s = String::from("x,f,f0\n");
    for x in grid(x_max, FUNCTION_GRID) {
        let _ = writeln!(s, "{},{},{}", x, params.forward(x), f0.eval(x));
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|t| t.to_string()).unwrap_or_default()
}

/// Config whose `train` run reproduces `cell` of a sweep built from `cfg`.
fn cell_config(cfg: &ExperimentConfig, cell: Cell, out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        eta: cell.eta,
        n: cell.n,
        data_seed: cell.data_seed(),
        seed: cell.init_seed(),
        out,
        ..cfg.clone()
    }
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, f0: &PiecewiseLinear, run: &CellRun) -> anyhow::Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("trace.csv"), &run.trace.to_csv())?;
    write_file(
        &dir.join("function.csv"),
        &function_csv(&run.params, f0, run.data.x_max),
    )?;
    write_file(&dir.join("params.json"), &run.params.to_json())?;
    write_file(&dir.join("params0.json"), &run.params0.to_json())?;
    write_file(&dir.join("f0.json"), &f0.to_json())?;
    write_dataset(dir, "data", &run.data, cfg.data_seed, &cfg.f0)?;
    let last = run.trace.last();
    write_manifest(
        dir,
        "train",
        cfg,
        json!({
            "diverged": run.trace.diverged(),
            "final_iter": last.map(|r| r.iter),
            "final_train_loss": last.map(|r| r.train_loss),
            "final_lambda_max": run.trace.last_lambda(),
        }),
    )
}

pub fn train(cfg: &ExperimentConfig) -> Outcome {
    let f0 = cfg.f0_function().map_err(Failure::Config)?;
    let data = make_dataset(cfg.n, cfg.x_max, &f0, cfg.data_seed)?;
    let tc = cfg.train_config(cfg.eta, cfg.seed);
    let params0 = initialize(&tc, &data, cfg.k)?;
    let (params, trace) = gd_run(&params0, &data, &f0, &tc)?;
    let run = CellRun {
        data,
        params0,
        params,
        trace,
    };
    write_run(&cfg.out, cfg, &f0, &run)?;
    log::info!("train: {} rows written to {}", run.trace.rows.len(), cfg.out.display());
    if run.trace.diverged() {
        log::warn!("run diverged at iteration {}", run.trace.last().map_or(0, |r| r.iter));
        return Ok(());
    }
    certify(&cfg.out, cfg, &run.params, &run.data, &f0)
}

pub fn sweep(cfg: &ExperimentConfig) -> Outcome {
    if cfg.etas.is_empty() || cfg.ns.is_empty() || cfg.seeds.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!("sweep grids must be nonempty")));
    }
    let f0 = cfg.f0_function().map_err(Failure::Config)?;
    let spec = SweepSpec {
        etas: cfg.etas.clone(),
        ns: cfg.ns.clone(),
        seeds: cfg.seeds.clone(),
        k: cfg.k,
        x_max: cfg.x_max,
        f0: f0.clone(),
        train: cfg.train_config(cfg.eta, cfg.seed),
    };
    let results = run_sweep(&spec, cfg.execution())?;
    create_dir(&cfg.out)?;
    let mut summary = format!("eta,n,seed,ok,{TRACE_HEADER},error\n");
    let mut failures = 0;
    for res in &results {
        let cell = res.cell;
        let dir = cfg.out.join("cells").join(cell.id());
        let _ = write!(summary, "{},{},{},", cell.eta, cell.n, cell.seed);
        match &res.outcome {
            Ok(run) => {
                write_run(&dir, &cell_config(cfg, cell, dir.clone()), &f0, run)?;
                let last = run.trace.to_csv();
                let row = last.lines().last().unwrap_or_default();
                let _ = writeln!(summary, "true,{row},");
            }
            Err(e) => {
                failures += 1;
                log::warn!("cell {} failed: {e}", cell.id());
                let blanks = ",".repeat(TRACE_HEADER.split(',').count() - 1);
                let _ = writeln!(summary, "false,{blanks},\"{}\"", e.to_string().replace('"', "'"));
            }
        }
    }
    write_file(&cfg.out.join("summary.csv"), &summary)?;
    write_manifest(
        &cfg.out,
        "sweep",
        cfg,
        json!({ "cells": results.len(), "failed": failures }),
    )?;
    log::info!("sweep: {} cells, {} failed", results.len(), failures);
    if failures == results.len() {
        return Err(Failure::Other(anyhow::anyhow!("every sweep cell failed")));
    }
    Ok(())
}

pub fn verify(cfg: &ExperimentConfig, run_dir: &Path) -> Outcome {
    let read = |name: &str| {
        let path = run_dir.join(name);
        std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Config)
    };
    let params = NetParams::from_json(&read("params.json")?).map_err(|e| Failure::Config(e.into()))?;
    let f0 = PiecewiseLinear::from_json(&read("f0.json")?).map_err(|e| Failure::Config(e.into()))?;
    let (data, _) = read_dataset(run_dir, "data").map_err(|e| Failure::Config(e.into()))?;
    certify(&cfg.out, cfg, &params, &data, &f0)
}

fn certificate_row(
    s: &mut String,
    gamma: f64,
    zeta: Option<f64>,
    eps: Option<f64>,
    rep: Result<CertificateReport, Error>,
) -> Outcome {
    match rep {
        Ok(r) => {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                gamma,
                opt(zeta),
                opt(eps),
                r.n_gamma,
                r.lhs,
                r.rhs,
                r.slack,
                r.holds,
                r.vacuous
            );
            Ok(())
        }
        Err(Error::EmptyUncertainSet { .. }) => {
            let _ = writeln!(s, "{},{},{},0,,,,,", gamma, opt(zeta), opt(eps));
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

/// Certificates, weight functions and interval-restricted losses for a
/// trained network, evaluated at the nearest point where the loss is twice
/// differentiable.
fn certify(out: &Path, cfg: &ExperimentConfig, params: &NetParams, data: &Dataset, f0: &PiecewiseLinear) -> Outcome {
    create_dir(out)?;
    let q = jitter_off_knots(params, data);
    let shift = params
        .to_flat()
        .iter()
        .zip(q.to_flat())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure_differentiable(&q, &data.xs, DIFFERENTIABILITY_TOL)?;
    let lambda = lambda_max(&HessianOperator::auto(&q, data)?, &PowerOptions::default())?.value;
    let eps = excess_risk(&q, f0, &data.xs).max(0.0);
    let curvature = Curvature::Measured(lambda);

    let mut certs = format!("{CERTIFICATE_HEADER}\n");
    let mut restricted = format!("{RESTRICTED_HEADER}\n");
    let xs = grid(data.x_max, cfg.grid_points);
    for &gamma in &cfg.gammas {
        certificate_row(
            &mut certs,
            gamma,
            None,
            None,
            bias_certificate(&q, data, gamma, curvature),
        )?;
        let pts = uncertain_points(&q, data, gamma);
        for &zeta in cfg.zetas.iter().filter(|&&z| z < gamma) {
            certificate_row(
                &mut certs,
                gamma,
                Some(zeta),
                Some(eps),
                tvb_certificate(&q, data, f0, gamma, zeta, eps, curvature),
            )?;
            let inner = truth_uncertain_region(f0, gamma - zeta).total_length() / (2.0 * data.x_max);
            let rows = map_indexed(xs.len(), cfg.execution(), |i| {
                let x = xs[i];
                let law = FeatureLaw::Uniform { x_max: data.x_max };
                let asym = hbar_asymptotic(x, f0, &law, gamma, zeta).value;
                format!(
                    "{},{},{},{},{}\n",
                    x,
                    h_empirical(x, &pts, data).value,
                    hbar_empirical(x, f0, &data.xs, gamma, zeta, eps).value,
                    asym,
                    gamma_fn(gamma) * inner.min(1.0) * asym
                )
            });
            write_file(
                &out.join(format!("weights_gamma{gamma}_zeta{zeta}.csv")),
                &format!("{WEIGHT_HEADER}\n{}", rows.concat()),
            )?;
        }
        let region = truth_uncertain_region(f0, gamma);
        let interval = if region.is_empty() {
            None
        } else {
            choose_interval(&region, cfg.rho).ok()
        };
        let report = interval
            .as_ref()
            .map(|i| (i.hull(), restricted_losses(&q, data, f0, i)));
        match report {
            Some((Some((lo, hi)), Ok(r))) => {
                let _ = writeln!(
                    restricted,
                    "{},{},{},{},{},{},{},{},{}",
                    gamma, cfg.rho, lo, hi, r.n_inside, r.loss, r.pop_loss, r.pop_loss_f0, r.optimized
                );
            }
            Some((Some((lo, hi)), Err(_))) => {
                let _ = writeln!(restricted, "{},{},{},{},0,,,,", gamma, cfg.rho, lo, hi);
            }
            _ => {
                let _ = writeln!(restricted, "{},{},,,0,,,,", gamma, cfg.rho);
            }
        }
    }
    write_file(&out.join("certificates.csv"), &certs)?;
    write_file(&out.join("restricted.csv"), &restricted)?;
    let results = json!({ "lambda_max": lambda, "eps": eps, "jitter": shift });
    if out.join("trace.csv").exists() {
        let text = serde_json::to_string_pretty(&results).map_err(anyhow::Error::from)?;
        write_file(&out.join("certify.json"), &text)?;
    } else {
        write_manifest(out, "verify", cfg, results)?;
    }
    Ok(())
}

/// Flatness bound of the interpolant up to its constant: `(n^2 gamma + 1) e^{-gamma}`.
pub fn flat_raw_bound(n: usize, gamma_max: f64) -> f64 {
    ((n * n) as f64 * gamma_max + 1.0) * (-gamma_max).exp()
}

pub fn flat(cfg: &ExperimentConfig) -> Outcome {
    create_dir(&cfg.out)?;
    let data = make_dataset(cfg.flat_n, cfg.flat_x_max, &PiecewiseLinear::zero(), cfg.data_seed)?;
    let mut rows = Vec::new();
    for &g in &cfg.gamma_maxes {
        let p = construct_flat_interpolant(&data.xs, &data.ys, g, cfg.flat_eps)?;
        let lam = lambda_max(&HessianOperator::auto(&p, &data)?, &PowerOptions::default())?.value;
        write_file(&cfg.out.join(format!("interpolant_gamma{g}.json")), &p.to_json())?;
        rows.push((g, lam, flat_raw_bound(data.len(), g)));
    }
    let constant = rows.iter().fold(0.0f64, |m, &(_, lam, raw)| m.max(lam / raw));
    let mut csv = format!("{FLAT_HEADER}\n");
    for (g, lam, raw) in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", g, lam, raw, constant, constant * raw);
    }
    write_file(&cfg.out.join("flat.csv"), &csv)?;
    write_dataset(&cfg.out, "data", &data, cfg.data_seed, "zero")?;
    write_manifest(&cfg.out, "flat", cfg, json!({ "constant": constant }))?;

    if cfg.flat_train {
        let cell = Cell {
            eta: 1.0,
            n: 10,
            seed: cfg.flat_train_seed,
        };
        let dir = cfg.out.join("train");
        let echo = ExperimentConfig {
            k: 20,
            f0: "zero".into(),
            init: "random".into(),
            init_scale: 1.0,
            iters: cfg.flat_iters,
            record_every: 100,
            lambda_every: 100,
            weight_decay: 0.0,
            ..cell_config(cfg, cell, dir.clone())
        };
        let spec = SweepSpec {
            etas: vec![cell.eta],
            ns: vec![cell.n],
            seeds: vec![cell.seed],
            k: echo.k,
            x_max: echo.x_max,
            f0: PiecewiseLinear::zero(),
            train: echo.train_config(cell.eta, echo.seed),
        };
        let run = run_cell(&spec, cell)?;
        write_run(&dir, &echo, &PiecewiseLinear::zero(), &run)?;
    }
    Ok(())
}
