//! Ground-truth functions, feature designs, label sampling and dataset files.

use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{sigmoid, Dataset};

/// Identifier of the random number generator behind every seeded draw.
pub const RNG_ID: &str = "chacha8";

/// Continuous piecewise-linear function given by its values at breakpoints.
/// Outside the domain it is extended by its end values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwlRecord")]
pub struct PiecewiseLinear {
    domain: [f64; 2],
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct PwlRecord {
    domain: [f64; 2],
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<PwlRecord> for PiecewiseLinear {
    type Error = Error;

    fn try_from(r: PwlRecord) -> Result<Self> {
        let f = PiecewiseLinear::new(r.breakpoints, r.values)?;
        if f.domain != r.domain {
            return Err(Error::Parse("domain does not match the outer breakpoints".into()));
        }
        Ok(f)
    }
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidArgument("need at least two breakpoints".into()));
        }
        if breakpoints.len() != values.len() {
            return Err(Error::InvalidArgument("breakpoints and values differ in length".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || !breakpoints.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidArgument(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("values must be finite".into()));
        }
        let domain = [breakpoints[0], *breakpoints.last().unwrap()];
        Ok(PiecewiseLinear {
            domain,
            breakpoints,
            values,
        })
    }

    /// `-1` at the ends, `1` at the origin: `(x + 1) 1(x <= 0) + (1 - x) 1(x > 0)` on `[-2, 2]`.
    pub fn hat() -> Self {
        PiecewiseLinear::new(vec![-2.0, 0.0, 2.0], vec![-1.0, 1.0, -1.0]).unwrap()
    }

    pub fn zero() -> Self {
        PiecewiseLinear::new(vec![-2.0, 2.0], vec![0.0, 0.0]).unwrap()
    }

    /// Looks up a builtin by name (`hat` or `zero`).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "hat" => Ok(Self::hat()),
            "zero" => Ok(Self::zero()),
            other => Err(Error::InvalidArgument(format!("unknown ground truth `{other}`"))),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain[0], self.domain[1])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of linear pieces.
    pub fn pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Endpoints and end values of piece `j`.
    pub fn piece(&self, j: usize) -> (f64, f64, f64, f64) {
        (
            self.breakpoints[j],
            self.breakpoints[j + 1],
            self.values[j],
            self.values[j + 1],
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if x <= bp[0] {
            return self.values[0];
        }
        if x >= bp[bp.len() - 1] {
            return self.values[bp.len() - 1];
        }
        // first breakpoint strictly greater than x
        let j = bp.partition_point(|&b| b <= x);
        let (a, b, fa, fb) = self.piece(j - 1);
        fa + (fb - fa) * (x - a) / (b - a)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum of absolute slope changes at interior breakpoints.
    pub fn tv1(&self) -> f64 {
        let slopes: Vec<f64> = (0..self.pieces())
            .map(|j| {
                let (a, b, fa, fb) = self.piece(j);
                (fb - fa) / (b - a)
            })
            .collect();
        slopes.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `n` equally spaced points on `[-x_max, x_max]` including both endpoints.
pub fn fixed_design(n: usize, x_max: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let step = 2.0 * x_max / (n - 1) as f64;
            let mut xs: Vec<f64> = (0..n).map(|i| -x_max + step * i as f64).collect();
            xs[n - 1] = x_max;
            xs
        }
    }
}

/// Seeded generator used for every random draw.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on `[0, 1)` from the top 53 bits of one `u64`.
pub fn uniform01<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of stream tags into an independent seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |h, &t| splitmix64(h ^ splitmix64(t)))
}

/// `n` i.i.d. uniform features on `[-x_max, x_max]`.
pub fn sample_iid_features(n: usize, x_max: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| -x_max + 2.0 * x_max * uniform01(&mut rng)).collect()
}

/// Draws labels `y = +1` with probability `sigmoid(f0(x))`, else `-1`.
#[derive(Debug, Clone)]
pub struct LabelSampler {
    pub f0: PiecewiseLinear,
    pub seed: u64,
}

impl LabelSampler {
    pub fn new(f0: PiecewiseLinear, seed: u64) -> Self {
        LabelSampler { f0, seed }
    }

    pub fn rng_id(&self) -> &'static str {
        RNG_ID
    }

    pub fn sample(&self, xs: &[f64]) -> Vec<f64> {
        let mut rng = rng_from_seed(self.seed);
        xs.iter()
            .map(|&x| {
                if uniform01(&mut rng) < sigmoid(self.f0.eval(x)) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }
}

/// Sidecar metadata stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub x_max: f64,
    pub seed: u64,
    pub f0_name: String,
}

/// CSV text with header `x,y`; features use shortest round-trip formatting.
pub fn dataset_csv(data: &Dataset) -> String {
    let mut s = String::from("x,y\n");
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let _ = writeln!(s, "{},{}", x, if *y > 0.0 { 1 } else { -1 });
    }
    s
}

pub fn parse_dataset_csv(text: &str, x_max: f64) -> Result<Dataset> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "x,y" => {}
        _ => return Err(Error::Parse("dataset CSV must start with header x,y".into())),
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("dataset CSV line {}: `{}`", lineno + 2, line));
        let (x, y) = line.split_once(',').ok_or_else(bad)?;
        xs.push(x.trim().parse::<f64>().map_err(|_| bad())?);
        ys.push(match y.trim() {
            "1" | "+1" => 1.0,
            "-1" => -1.0,
            _ => return Err(bad()),
        });
    }
    Dataset::new(xs, ys, x_max)
}

/// Writes `<stem>.csv` and `<stem>.json` (manifest) into `dir`.
pub fn write_dataset(dir: &Path, stem: &str, data: &Dataset, seed: u64, f0_name: &str) -> Result<()> {
    let manifest = DatasetManifest {
        n: data.len(),
        x_max: data.x_max,
        seed,
        f0_name: f0_name.to_string(),
    };
    write_atomic(&dir.join(format!("{stem}.csv")), &dataset_csv(data))?;
    write_atomic(
        &dir.join(format!("{stem}.json")),
        &serde_json::to_string_pretty(&manifest)?,
    )
}

pub fn read_dataset(dir: &Path, stem: &str) -> Result<(Dataset, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let data = parse_dataset_csv(
        &std::fs::read_to_string(dir.join(format!("{stem}.csv")))?,
        manifest.x_max,
    )?;
    if data.len() != manifest.n {
        return Err(Error::Parse(format!(
            "manifest says n = {}, file has {}",
            manifest.n,
            data.len()
        )));
    }
    Ok((data, manifest))
}

/// Writes `contents` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
