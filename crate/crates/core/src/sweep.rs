//! Grids of independent training runs over step size, sample size and seed.

use crate::datagen::{derive_seed, fixed_design, LabelSampler, PiecewiseLinear};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::objective::Dataset;
use crate::relu_net::NetParams;
use crate::trainer::{gd_run, initialize, TrainConfig, TrainTrace};

/// Shared settings of a sweep; `train.eta` and `train.seed` are overridden per cell.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub etas: Vec<f64>,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub x_max: f64,
    pub f0: PiecewiseLinear,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub eta: f64,
    pub n: usize,
    pub seed: u64,
}

impl Cell {
    /// Directory-friendly identifier, e.g. `eta0.05_n80_seed2`.
    pub fn id(&self) -> String {
        format!("eta{}_n{}_seed{}", self.eta, self.n, self.seed)
    }

    /// Seed of the label draw; depends on `(seed, n)` only, so every step size
    /// in a sweep sees the same dataset.
    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, &[self.n as u64, 0])
    }

    /// Seed of the random initialization, shared across step sizes like [`Cell::data_seed`].
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, &[self.n as u64, 1])
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.ns.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("sweep grids must be nonempty".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if self.ns.contains(&0) {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        self.train.validate()
    }

    /// Cells in `eta`-major, then `n`, then seed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.etas.len() * self.ns.len() * self.seeds.len());
        for &eta in &self.etas {
            for &n in &self.ns {
                for &seed in &self.seeds {
                    out.push(Cell { eta, n, seed });
                }
            }
        }
        out
    }
}

/// Fixed design of size `n` with labels drawn from `f0`.
pub fn make_dataset(n: usize, x_max: f64, f0: &PiecewiseLinear, seed: u64) -> Result<Dataset> {
    let xs = fixed_design(n, x_max);
    let ys = LabelSampler::new(f0.clone(), seed).sample(&xs);
    Dataset::new(xs, ys, x_max)
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub data: Dataset,
    pub params0: NetParams,
    pub params: NetParams,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<CellRun>,
}

pub fn run_cell(spec: &SweepSpec, cell: Cell) -> Result<CellRun> {
    let data = make_dataset(cell.n, spec.x_max, &spec.f0, cell.data_seed())?;
    let cfg = TrainConfig {
        eta: cell.eta,
        seed: cell.init_seed(),
        ..spec.train.clone()
    };
    let params0 = initialize(&cfg, &data, spec.k)?;
    let (params, trace) = gd_run(&params0, &data, &spec.f0, &cfg)?;
    Ok(CellRun {
        data,
        params0,
        params,
        trace,
    })
}

/// Runs every cell, in parallel across cells when `exec` allows it.
pub fn run_sweep(spec: &SweepSpec, exec: Execution) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let cells = spec.cells();
    Ok(map_indexed(cells.len(), exec, |i| CellResult {
        cell: cells[i],
        outcome: run_cell(spec, cells[i]),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            etas: vec![0.01, 0.8],
            ns: vec![12],
            seeds: vec![0],
            k: 6,
            x_max: 2.0,
            f0: PiecewiseLinear::hat(),
            train: TrainConfig {
                iters: 50,
                record_every: 25,
                lambda_every: 25,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn cell_count_and_order() {
        let mut spec = tiny_spec();
        assert_eq!(spec.cells().len(), 2);
        spec.ns = vec![80, 160, 400];
        spec.seeds = vec![0, 1, 2];
        let cells = spec.cells();
        assert_eq!(cells.len(), 18);
        assert_eq!(
            cells[0],
            Cell {
                eta: 0.01,
                n: 80,
                seed: 0
            }
        );
        assert_eq!(
            cells[1],
            Cell {
                eta: 0.01,
                n: 80,
                seed: 1
            }
        );
    }

    #[test]
    fn datasets_shared_across_step_sizes() {
        let a = Cell {
            eta: 0.01,
            n: 80,
            seed: 3,
        };
        let b = Cell { eta: 0.8, ..a };
        assert_eq!(a.data_seed(), b.data_seed());
        assert_eq!(a.init_seed(), b.init_seed());
        assert_ne!(a.data_seed(), a.init_seed());
        assert_eq!(a.id(), "eta0.01_n80_seed3");
    }

    #[test]
    fn sweep_modes_agree() {
        let spec = tiny_spec();
        let seq = run_sweep(&spec, Execution::Sequential).unwrap();
        let par = run_sweep(&spec, Execution::Parallel).unwrap();
        for (a, b) in seq.iter().zip(&par) {
            let (ra, rb) = (a.outcome.as_ref().unwrap(), b.outcome.as_ref().unwrap());
            assert_eq!(ra.trace.to_csv(), rb.trace.to_csv());
        }
        assert_eq!(
            seq[0].outcome.as_ref().unwrap().data,
            seq[1].outcome.as_ref().unwrap().data
        );
    }

    #[test]
    fn empty_grid_rejected() {
        let mut spec = tiny_spec();
        spec.etas.clear();
        assert!(run_sweep(&spec, Execution::Sequential).is_err());
    }
}
