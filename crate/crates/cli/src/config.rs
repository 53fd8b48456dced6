//! Experiment configuration: typed defaults, overlaid by a config file and
//! then by command-line `key=value` pairs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use flatlab::datagen::PiecewiseLinear;
use flatlab::trainer::{Init, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub x_max: f64,
    /// Builtin name (`hat`, `zero`) or path to a piecewise-linear JSON file.
    pub f0: String,
    pub data_seed: u64,

    pub k: usize,
    /// `random` or `confident`.
    pub init: String,
    pub init_scale: f64,
    pub target_margin: f64,
    pub seed: u64,

    pub eta: f64,
    pub iters: usize,
    pub record_every: usize,
    pub lambda_every: usize,
    pub weight_decay: f64,
    pub divergence_threshold: f64,
    pub lp_exponent: f64,

    pub etas: Vec<f64>,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,

    pub gammas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub rho: f64,
    pub grid_points: usize,

    pub gamma_maxes: Vec<f64>,
    pub flat_n: usize,
    pub flat_x_max: f64,
    pub flat_eps: f64,
    pub flat_train: bool,
    pub flat_train_seed: u64,
    pub flat_iters: usize,

    /// Worker threads; 0 uses every logical core.
    pub threads: usize,
    pub parallel: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            n: 80,
            x_max: 2.0,
            f0: "hat".into(),
            data_seed: 0,
            k: 400,
            init: "random".into(),
            init_scale: 1.0,
            target_margin: 5.0,
            seed: 0,
            eta: train.eta,
            iters: train.iters,
            record_every: train.record_every,
            lambda_every: train.lambda_every,
            weight_decay: train.weight_decay,
            divergence_threshold: train.divergence_threshold,
            lp_exponent: train.lp_exponent,
            etas: vec![0.01, 0.05, 0.2, 0.8],
            ns: vec![80, 160, 400],
            seeds: vec![0, 1, 2],
            gammas: vec![0.5, 1.0, 2.0, 4.0],
            zetas: vec![0.1, 0.25],
            rho: 0.1,
            grid_points: 1001,
            gamma_maxes: vec![10.0, 20.0, 40.0],
            flat_n: 10,
            flat_x_max: 1.0,
            flat_eps: flatlab::relu_net::FLAT_EPS,
            flat_train: false,
            flat_train_seed: 2,
            flat_iters: 100_000,
            threads: 0,
            parallel: true,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<Self> {
        let mut map = match serde_json::to_value(ExperimentConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (key, value) in parse_file(&text).with_context(|| format!("parsing {}", path.display()))? {
                set(&mut map, &key, value)?;
            }
        }
        for (key, raw) in overrides {
            set(&mut map, key, Value::String(raw.clone()))?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(Value::Object(map))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(anyhow!("{name} must be positive and finite, got {v}"))
            }
        };
        if self.n == 0 || self.k == 0 || self.flat_n == 0 {
            bail!("n, k and flat_n must be positive");
        }
        positive("x_max", self.x_max)?;
        positive("flat_x_max", self.flat_x_max)?;
        self.f0_function()?;
        self.train_config(self.eta, self.seed).validate()?;
        if !matches!(self.init.as_str(), "random" | "confident") {
            bail!("init must be `random` or `confident`, got `{}`", self.init);
        }
        for &g in self.gammas.iter().chain(&self.zetas).chain(&self.gamma_maxes) {
            positive("gammas, zetas and gamma_maxes entries", g)?;
        }
        for &eta in &self.etas {
            positive("etas entries", eta)?;
        }
        if self.ns.contains(&0) {
            bail!("ns entries must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) {
            bail!("rho must lie in [0, 1)");
        }
        if self.grid_points < 2 {
            bail!("grid_points must be at least 2");
        }
        if !(self.flat_eps > 0.0 && self.flat_eps < 0.5) {
            bail!("flat_eps must lie in (0, 0.5)");
        }
        Ok(())
    }

    pub fn f0_function(&self) -> anyhow::Result<PiecewiseLinear> {
        if let Ok(f) = PiecewiseLinear::builtin(&self.f0) {
            return Ok(f);
        }
        let text = std::fs::read_to_string(&self.f0)
            .with_context(|| format!("f0 `{}` is neither a builtin nor a readable file", self.f0))?;
        Ok(PiecewiseLinear::from_json(&text)?)
    }

    pub fn train_config(&self, eta: f64, seed: u64) -> TrainConfig {
        let init = if self.init == "confident" {
            Init::Confident {
                target_margin: self.target_margin,
            }
        } else {
            Init::Random { scale: self.init_scale }
        };
        TrainConfig {
            eta,
            iters: self.iters,
            record_every: self.record_every,
            lambda_every: self.lambda_every,
            weight_decay: self.weight_decay,
            seed,
            init,
            divergence_threshold: self.divergence_threshold,
            lp_exponent: self.lp_exponent,
        }
    }

    pub fn execution(&self) -> flatlab::Execution {
        if self.parallel {
            flatlab::Execution::Parallel
        } else {
            flatlab::Execution::Sequential
        }
    }
}

/// Splits `key=value` into its parts.
pub fn parse_assignment(s: &str) -> anyhow::Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Reads a JSON object, a manifest written by this tool (its `config` member
/// is used), or `key=value` lines with `#` comments.
fn parse_file(text: &str) -> anyhow::Result<Vec<(String, Value)>> {
    if text.trim_start().starts_with('{') {
        let mut obj: Map<String, Value> = serde_json::from_str(text)?;
        if obj.contains_key("rng") {
            if let Some(Value::Object(inner)) = obj.remove("config") {
                obj = inner;
            }
        }
        return Ok(obj.into_iter().collect());
    }
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line)?;
        out.push((k, Value::String(v)));
    }
    Ok(out)
}

/// Stores `value` under `key`, converting strings to the type of the default.
fn set(map: &mut Map<String, Value>, key: &str, value: Value) -> anyhow::Result<()> {
    let slot = map.get_mut(key).ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
    *slot = match value {
        Value::String(raw) => coerce(slot, &raw).with_context(|| format!("bad value for `{key}`: `{raw}`"))?,
        other => other,
    };
    Ok(())
}

fn coerce(template: &Value, raw: &str) -> anyhow::Result<Value> {
    Ok(match template {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => {
            let items: anyhow::Result<Vec<Value>> = raw
                .trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Ok(serde_json::from_str::<Value>(s)?))
                .collect();
            Value::Array(items?)
        }
        _ => serde_json::from_str(raw)?,
    })
}
