//! Datasets: CSV ingestion, synthetic generators, splitting and standardization.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// `N` examples of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Data("no data rows".into()))?;
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Data(format!(
                "row {i} has {} features, expected {dim}",
                r.len()
            )));
        }
        Self::from_flat(dim, rows.concat(), targets)
    }

    pub fn from_flat(dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("datasets need at least one feature".into()));
        }
        if inputs.len() != dim * targets.len() {
            return Err(Error::Data(format!(
                "{} input values do not form {} rows of dimension {dim}",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite input at row {} column {}",
                i / dim,
                i % dim
            )));
        }
        if let Some(n) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite target at row {n}")));
        }
        Ok(Self {
            dim,
            inputs,
            targets,
        })
    }

    /// Dataset with no rows; only produced by splits.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.inputs[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.inputs.chunks_exact(self.dim)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_mean(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(self.targets.iter().sum::<f64>() / self.len() as f64)
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Self {
            dim: self.dim,
            inputs,
            targets,
        }
    }

    /// Per-feature `(min, max)`; `None` for an empty dataset.
    pub fn feature_ranges(&self) -> Option<Vec<(f64, f64)>> {
        if self.is_empty() {
            return None;
        }
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for x in self.rows() {
            for (i, v) in x.iter().enumerate() {
                r[i].0 = r[i].0.min(*v);
                r[i].1 = r[i].1.max(*v);
            }
        }
        Some(r)
    }
}

/// Reads a headed CSV whose last column is the target.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let width = rdr
        .headers()
        .map_err(|e| Error::Data(format!("bad header: {e}")))?
        .len();
    if width < 2 {
        return Err(Error::Data(format!(
            "need at least 2 columns (features + target), found {width}"
        )));
    }
    let dim = width - 1;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => Error::Data(format!(
                "row {row}: ragged row with {len} fields, expected {expected_len}"
            )),
            _ => Error::Data(format!("row {row}: {e}")),
        })?;
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!("row {row} column {col}: not a number: {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {row} column {col}: non-finite value"
                )));
            }
            if col < dim {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Dataset::from_flat(dim, inputs, targets)
}

/// Writes `x0,...,x{d-1},y` with shortest round-trip float formatting.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(data, file)
}

pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    let csv_err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (x, y) in data.rows().zip(data.targets()) {
        let rec: Vec<String> = x
            .iter()
            .chain(std::iter::once(y))
            .map(f64::to_string)
            .collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Sinc2d,
    Friedman1,
    PiecewiseLinear,
    Step,
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinc2d" => Ok(Self::Sinc2d),
            "friedman1" => Ok(Self::Friedman1),
            "piecewise_linear" | "piecewise-linear" => Ok(Self::PiecewiseLinear),
            "step" => Ok(Self::Step),
            _ => Err(Error::InvalidArgument(format!("unknown generator {s:?}"))),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sinc2d => "sinc2d",
            Self::Friedman1 => "friedman1",
            Self::PiecewiseLinear => "piecewise_linear",
            Self::Step => "step",
        })
    }
}

/// Regime for `x0 < 0.5` in the piecewise-linear generator: `(slope on x0, intercept)`.
pub const PIECEWISE_LEFT: (f64, f64) = (2.0, 1.0);
/// Regime for `x0 >= 0.5`.
pub const PIECEWISE_RIGHT: (f64, f64) = (-3.0, 4.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Independent uniform draws inside the ranges.
    #[default]
    Uniform,
    /// Regular grid; `n` must be a perfect `d`-th power.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub generator: Generator,
    pub n: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Per-feature sampling ranges; generator defaults when `None`.
    pub ranges: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub layout: Layout,
}

impl DataSpec {
    pub fn new(generator: Generator, n: usize, seed: u64) -> Self {
        Self {
            generator,
            n,
            noise_sd: 0.0,
            seed,
            ranges: None,
            layout: Layout::Uniform,
        }
    }

    /// Parses `key=value` lines (`generator`, `n`, `noise_sd`, `seed`,
    /// `layout`, `ranges` as `lo:hi,lo:hi`). Blank lines and `#` comments are
    /// ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = Self::new(Generator::Sinc2d, 100, 0);
        let mut saw_generator = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key=value", lineno + 1))
            })?;
            spec.set(k.trim(), v.trim())?;
            saw_generator |= k.trim() == "generator";
        }
        if !saw_generator {
            return Err(Error::InvalidArgument("generator not specified".into()));
        }
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidArgument(format!("bad {what}: {value:?}"));
        match key {
            "generator" => self.generator = value.parse()?,
            "n" => self.n = value.parse().map_err(|_| bad("n"))?,
            "noise_sd" => self.noise_sd = value.parse().map_err(|_| bad("noise_sd"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "layout" => {
                self.layout = match value {
                    "uniform" => Layout::Uniform,
                    "grid" => Layout::Grid,
                    _ => return Err(bad("layout")),
                }
            }
            "ranges" => self.ranges = Some(parse_ranges(value)?),
            _ => return Err(Error::InvalidArgument(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn default_ranges(&self) -> Vec<(f64, f64)> {
        match self.generator {
            Generator::Sinc2d => vec![(-10.0, 10.0); 2],
            Generator::Friedman1 => vec![(0.0, 1.0); 5],
            Generator::PiecewiseLinear | Generator::Step => vec![(0.0, 1.0)],
        }
    }

    pub fn resolved_ranges(&self) -> Vec<(f64, f64)> {
        self.ranges.clone().unwrap_or_else(|| self.default_ranges())
    }
}

/// Parses `lo:hi,lo:hi,...`.
pub fn parse_ranges(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("range {part:?} is not lo:hi")))?;
            let lo: f64 = lo
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad range bound {lo:?}")))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad range bound {hi:?}")))?;
            Ok((lo, hi))
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Noise-free target of a generator.
pub fn generator_target(g: Generator, x: &[f64]) -> f64 {
    match g {
        Generator::Sinc2d => sinc(x[0]) * sinc(x[1]),
        Generator::Friedman1 => {
            10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                + 20.0 * (x[2] - 0.5).powi(2)
                + 10.0 * x[3]
                + 5.0 * x[4]
        }
        Generator::PiecewiseLinear => {
            let (a, b) = if x[0] < 0.5 {
                PIECEWISE_LEFT
            } else {
                PIECEWISE_RIGHT
            };
            a * x[0] + b
        }
        Generator::Step => {
            if x[0] >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Draws a dataset. Inputs are consumed from the stream row by row, and for
/// `noise_sd > 0` each row's noise draw follows its inputs.
pub fn generate(spec: &DataSpec) -> Result<Dataset> {
    let ranges = spec.resolved_ranges();
    let d = ranges.len();
    let need = match spec.generator {
        Generator::Sinc2d => Some(2),
        Generator::Friedman1 => Some(5),
        _ => None,
    };
    if let Some(need) = need {
        if d != need {
            return Err(Error::InvalidArgument(format!(
                "{} needs {need} ranges, got {d}",
                spec.generator
            )));
        }
    }
    if d == 0 {
        return Err(Error::InvalidArgument("at least one range required".into()));
    }
    if let Some((lo, hi)) = ranges
        .iter()
        .find(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
    {
        return Err(Error::InvalidArgument(format!("invalid range {lo}:{hi}")));
    }
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(spec.noise_sd >= 0.0) || !spec.noise_sd.is_finite() {
        return Err(Error::InvalidArgument(
            "noise_sd must be finite and >= 0".into(),
        ));
    }

    let mut rng = SeededRng::new(spec.seed);
    let mut inputs = Vec::with_capacity(spec.n * d);
    match spec.layout {
        Layout::Uniform => {
            for _ in 0..spec.n {
                for &(lo, hi) in &ranges {
                    inputs.push(rng.uniform_in(lo, hi));
                }
            }
        }
        Layout::Grid => {
            let m = (spec.n as f64).powf(1.0 / d as f64).round() as usize;
            if m.checked_pow(d as u32) != Some(spec.n) {
                return Err(Error::InvalidArgument(format!(
                    "grid layout needs n to be a perfect {d}-th power, got {}",
                    spec.n
                )));
            }
            let axis = |lo: f64, hi: f64, j: usize| {
                if m == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * j as f64 / (m - 1) as f64
                }
            };
            for flat in 0..spec.n {
                let mut rem = flat;
                let mut point = vec![0.0; d];
                for i in (0..d).rev() {
                    point[i] = axis(ranges[i].0, ranges[i].1, rem % m);
                    rem /= m;
                }
                inputs.extend(point);
            }
        }
    }
    let targets = inputs
        .chunks_exact(d)
        .map(|x| {
            let y = generator_target(spec.generator, x);
            if spec.noise_sd > 0.0 {
                y + spec.noise_sd * rng.normal()
            } else {
                y
            }
        })
        .collect();
    Dataset::from_flat(d, inputs, targets)
}

/// Seeded disjoint split. Returns `(train_indices, test_indices)`, both ascending.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.len(), test_fraction, seed)?;
    let test = if test.is_empty() {
        Dataset::empty(data.dim())
    } else {
        data.subset(&test)
    };
    Ok((data.subset(&train), test))
}

/// Affine feature and target scaling estimated on a training set.
///
/// Standard deviations are population (divide by `N`); a zero spread is
/// replaced by 1 so the transform stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data(
                "cannot standardize an empty training set".into(),
            ));
        }
        let (feature_mean, feature_sd) = (0..train.dim())
            .map(|i| mean_sd(train.rows().map(move |x| x[i])))
            .unzip();
        let (target_mean, target_sd) = mean_sd(train.targets().iter().copied());
        Ok(Self {
            feature_mean,
            feature_sd,
            target_mean,
            target_sd,
        })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.map(data, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        self.map(data, |v, m, s| v * s + m)
    }

    pub fn invert_target(&self, y: f64) -> f64 {
        y * self.target_sd + self.target_mean
    }

    fn map(&self, data: &Dataset, f: impl Fn(f64, f64, f64) -> f64) -> Result<Dataset> {
        if data.dim() != self.feature_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_mean.len(),
                found: data.dim(),
            });
        }
        let inputs = data
            .rows()
            .flat_map(|x| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| f(*v, self.feature_mean[i], self.feature_sd[i]))
                    .collect::<Vec<_>>()
            })
            .collect();
        let targets = data
            .targets()
            .iter()
            .map(|y| f(*y, self.target_mean, self.target_sd))
            .collect();
        Dataset::from_flat(data.dim(), inputs, targets)
    }
}

/// Standardizes both sets with statistics from `train` only.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train)?;
    Ok((s.apply(train)?, s.apply(test)?, s))
}
