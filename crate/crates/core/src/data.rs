//! Tabular loading, synthetic generators, deterministic splits and
//! train-only standardization.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::gather_rows;

/// Fractions must sum to one within this tolerance.
pub const FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// Comma if the first non-empty line contains one, whitespace otherwise.
    #[default]
    Auto,
    Comma,
    Whitespace,
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Delimiter::Auto),
            "comma" | "," => Ok(Delimiter::Comma),
            "whitespace" | "space" | "tab" => Ok(Delimiter::Whitespace),
            other => Err(Error::Config(format!(
                "unknown delimiter {other:?} (expected auto, comma or whitespace)"
            ))),
        }
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Delimiter::Auto => "auto",
            Delimiter::Comma => "comma",
            Delimiter::Whitespace => "whitespace",
        })
    }
}

/// Which column holds the target. Parsed from `last`, a zero-based index, or
/// a header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetColumn {
    Last,
    Index(usize),
    Name(String),
}

impl FromStr for TargetColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Config("empty target column".into()));
        }
        if s.eq_ignore_ascii_case("last") {
            return Ok(TargetColumn::Last);
        }
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        })
    }
}

impl fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetColumn::Last => f.write_str("last"),
            TargetColumn::Index(i) => write!(f, "{i}"),
            TargetColumn::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Linear,
    Cubic,
    HeteroscedasticBimodal,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Linear => "linear",
            SyntheticKind::Cubic => "cubic",
            SyntheticKind::HeteroscedasticBimodal => "heteroscedastic_bimodal",
        }
    }

    fn mean(self, x: f64) -> f64 {
        match self {
            SyntheticKind::Linear => 2.0 * x,
            SyntheticKind::Cubic | SyntheticKind::HeteroscedasticBimodal => x * x * x,
        }
    }

    /// Default noise and input range for each generator.
    pub fn defaults(self) -> (NoiseParams, (f64, f64)) {
        match self {
            SyntheticKind::Linear => (NoiseParams::gaussian(0.1), (-1.0, 1.0)),
            SyntheticKind::Cubic => (NoiseParams::gaussian(3.0), (-4.0, 4.0)),
            SyntheticKind::HeteroscedasticBimodal => {
                (NoiseParams::bimodal(0.05, 0.5, 0.5), (-1.0, 1.0))
            }
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SyntheticKind::Linear),
            "cubic" => Ok(SyntheticKind::Cubic),
            "heteroscedastic_bimodal" | "bimodal" => Ok(SyntheticKind::HeteroscedasticBimodal),
            other => Err(Error::Config(format!(
                "unknown synthetic kind {other:?} (expected linear, cubic or heteroscedastic_bimodal)"
            ))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-point noise standard deviation is `sigmas[j]` with probability `mix[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigmas: Vec<f64>,
    pub mix: Vec<f64>,
}

impl NoiseParams {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            sigmas: vec![sigma],
            mix: vec![1.0],
        }
    }

    pub fn bimodal(sigma_a: f64, sigma_b: f64, weight_a: f64) -> Self {
        Self {
            sigmas: vec![sigma_a, sigma_b],
            mix: vec![weight_a, 1.0 - weight_a],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.len() != self.mix.len() {
            return Err(Error::domain("noise needs one mixing weight per sigma"));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::domain("noise sigmas must be finite and >= 0"));
        }
        if self.mix.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || (self.mix.iter().sum::<f64>() - 1.0).abs() > FRACTION_TOLERANCE
        {
            return Err(Error::domain("noise mixing weights must be >= 0 and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub noise: NoiseParams,
    pub x_range: (f64, f64),
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn with_defaults(kind: SyntheticKind, n: usize, seed: u64) -> Self {
        let (noise, x_range) = kind.defaults();
        Self {
            kind,
            n,
            noise,
            x_range,
            seed,
        }
    }
}

/// Where a dataset came from, recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    File {
        path: PathBuf,
        target_column: String,
        delimiter: Delimiter,
        has_header: bool,
    },
    Synthetic {
        spec: SyntheticSpec,
        formula: String,
    },
    Memory,
}

/// Affine maps fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardization {
    pub fn identity(d: usize) -> Self {
        Self {
            feature_means: vec![0.0; d],
            feature_stds: vec![1.0; d],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    /// Population mean and standard deviation per column; a column with zero
    /// spread gets std 1 so it maps to a constant 0.
    pub fn fit(x: &Array2<f64>, y: ArrayView1<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 || y.is_empty() {
            return Err(Error::domain("cannot standardize an empty split"));
        }
        let (feature_means, feature_stds) = x
            .axis_iter(Axis(1))
            .map(|col| mean_std(col))
            .unzip();
        let (target_mean, target_std) = mean_std(y);
        Ok(Self {
            feature_means,
            feature_stds,
            target_mean,
            target_std,
        })
    }

    pub fn features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.feature_means.len() {
            return Err(Error::Dimension {
                context: "standardized features",
                expected: self.feature_means.len(),
                got: x.ncols(),
            });
        }
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.feature_means[j], self.feature_stds[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn targets(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        y.mapv(|v| self.target(v))
    }

    pub fn destandardize_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    /// Variances scale with the square of the target std.
    pub fn destandardize_variance(&self, v: f64) -> f64 {
        v * self.target_std * self.target_std
    }
}

fn mean_std(col: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Relative threshold so that round-off on a constant column still counts as constant.
    let constant = std <= 1e-12 * mean.abs().max(1.0);
    (mean, if constant { 1.0 } else { std })
}

/// Features and targets in original units, with an optional split and the
/// standardization fitted on its training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    features: Array2<f64>,
    targets: Array1<f64>,
    feature_names: Vec<String>,
    target_name: String,
    split: Option<SplitAssignment>,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub assignment: Vec<Split>,
    pub standardization: Standardization,
}

impl RegressionDataset {
    pub fn new(features: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(features, targets, names, "y".into(), Provenance::Memory)
    }

    pub fn with_names(
        features: Array2<f64>,
        targets: Array1<f64>,
        feature_names: Vec<String>,
        target_name: String,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::Dimension {
                context: "dataset rows",
                expected: features.nrows(),
                got: targets.len(),
            });
        }
        if targets.is_empty() {
            return Err(Error::Schema("empty dataset".into()));
        }
        if features.ncols() == 0 {
            return Err(Error::Schema("dataset has no feature columns".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Dimension {
                context: "feature names",
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Schema("dataset contains non-finite values".into()));
        }
        Ok(Self {
            features,
            targets,
            feature_names,
            target_name,
            split: None,
            provenance,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array1<f64> {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn split_assignment(&self) -> Option<&SplitAssignment> {
        self.split.as_ref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.split.as_ref().map(|s| &s.standardization)
    }

    /// Row indices of one split, in original row order.
    pub fn indices(&self, which: Split) -> Result<Vec<usize>> {
        let split = self.require_split()?;
        Ok(split
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect())
    }

    /// Rows of one split in original units.
    pub fn raw(&self, which: Split) -> Result<(Array2<f64>, Array1<f64>)> {
        let idx = self.indices(which)?;
        Ok(gather_rows(self.features.view(), self.targets.view(), &idx))
    }

    /// Rows of one split after the training-set standardization.
    pub fn standardized(&self, which: Split) -> Result<(Array2<f64>, Array1<f64>)> {
        let st = &self.require_split()?.standardization;
        let (x, y) = self.raw(which)?;
        Ok((st.features(&x)?, st.targets(y.view())))
    }

    fn require_split(&self) -> Result<&SplitAssignment> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::Schema("dataset has not been split".into()))
    }

    /// Assigns every row to train, validation or test and fits the
    /// standardization on the training rows. Counts use largest remainders,
    /// so `N = 10` with `(0.8, 0.1, 0.1)` gives 8/1/1.
    pub fn split(self, fractions: [f64; 3], seed: u64) -> Result<Self> {
        if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > FRACTION_TOLERANCE
        {
            return Err(Error::Config(format!(
                "split fractions {fractions:?} must be >= 0 and sum to 1"
            )));
        }
        if fractions[0] <= 0.0 {
            return Err(Error::Config("the training fraction must be positive".into()));
        }
        let n = self.n_samples();
        let counts = largest_remainder(n, &fractions);
        if counts[0] == 0 {
            return Err(Error::Config(format!("no training rows out of {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![Split::Train; n];
        for (pos, &row) in order.iter().enumerate() {
            assignment[row] = if pos < counts[0] {
                Split::Train
            } else if pos < counts[0] + counts[1] {
                Split::Val
            } else {
                Split::Test
            };
        }
        self.apply_assignment(fractions, seed, assignment)
    }

    /// Uses an explicit assignment, e.g. when reproducing a stored split.
    pub fn with_assignment(self, assignment: Vec<Split>) -> Result<Self> {
        let n = assignment.len() as f64;
        let fractions = Split::ALL.map(|s| assignment.iter().filter(|a| **a == s).count() as f64 / n);
        self.apply_assignment(fractions, 0, assignment)
    }

    fn apply_assignment(
        mut self,
        fractions: [f64; 3],
        seed: u64,
        assignment: Vec<Split>,
    ) -> Result<Self> {
        if assignment.len() != self.n_samples() {
            return Err(Error::Dimension {
                context: "split assignment",
                expected: self.n_samples(),
                got: assignment.len(),
            });
        }
        let train: Vec<usize> = (0..assignment.len())
            .filter(|&i| assignment[i] == Split::Train)
            .collect();
        let (x, y) = gather_rows(self.features.view(), self.targets.view(), &train);
        let standardization = Standardization::fit(&x, y.view())?;
        self.split = Some(SplitAssignment {
            fractions,
            seed,
            assignment,
            standardization,
        });
        Ok(self)
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            provenance: self.provenance.clone(),
            n_samples: self.n_samples(),
            n_features: self.n_features(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            split_seed: self.split.as_ref().map(|s| s.seed),
            split_fractions: self.split.as_ref().map(|s| s.fractions),
            split_counts: self.split.as_ref().map(|s| {
                Split::ALL.map(|w| s.assignment.iter().filter(|a| **a == w).count())
            }),
            standardization: self.standardization().cloned(),
        }
    }
}

/// Summary of a dataset for run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub provenance: Provenance,
    pub n_samples: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub split_seed: Option<u64>,
    pub split_fractions: Option<[f64; 3]>,
    pub split_counts: Option<[usize; 3]>,
    pub standardization: Option<Standardization>,
}

fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps earlier splits first on ties.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[j] += 1;
        left -= 1;
    }
    counts
}

struct Table {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    delimiter: Delimiter,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn resolve_delimiter(delimiter: Delimiter, first: Option<&str>) -> Delimiter {
    match delimiter {
        Delimiter::Auto => match first {
            Some(l) if l.contains(',') => Delimiter::Comma,
            _ => Delimiter::Whitespace,
        },
        d => d,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path, delimiter: Delimiter, has_header: bool) -> Result<Table> {
    let text = read_text(path)?;
    let mut lines = data_lines(&text).peekable();
    let delimiter = resolve_delimiter(delimiter, lines.peek().map(|(_, l)| *l));
    let header: Option<Vec<String>> = if has_header {
        lines
            .next()
            .map(|(_, l)| split_line(l, delimiter).iter().map(|c| c.to_string()).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for (line_no, line) in lines {
        let parts = split_line(line, delimiter);
        match width {
            None => width = Some(parts.len()),
            Some(w) if w != parts.len() => {
                return Err(Error::Schema(format!(
                    "{}: line {line_no} has {} fields, expected {w}",
                    path.display(),
                    parts.len()
                )));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(parts.len());
        for (col, cell) in parts.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row: line_no,
                        column: col + 1,
                        cell: cell.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    let width = width.unwrap_or(0);
    let names = header.unwrap_or_else(|| (0..width).map(|j| format!("col{j}")).collect());
    Ok(Table {
        names,
        rows,
        delimiter,
    })
}

/// True when the first data line has a cell that does not parse as a number.
pub fn sniff_header(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<bool> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let first = data_lines(&text).next().map(|(_, l)| l);
    let delimiter = resolve_delimiter(delimiter, first);
    Ok(first.is_some_and(|l| {
        split_line(l, delimiter)
            .iter()
            .any(|c| c.parse::<f64>().is_err())
    }))
}

/// Reads a delimited numeric table. Blank lines are skipped; `#` starts a
/// comment line.
pub fn load_delimited(
    path: impl AsRef<Path>,
    target_column: &TargetColumn,
    delimiter: Delimiter,
    has_header: bool,
) -> Result<RegressionDataset> {
    let path = path.as_ref();
    let Table {
        names,
        rows,
        delimiter,
    } = read_table(path, delimiter, has_header)?;
    let width = names.len();
    if width < 2 {
        return Err(Error::Schema(format!(
            "{}: need at least one feature and one target column, found {width}",
            path.display()
        )));
    }
    let target = resolve_target(target_column, &names)?;

    let n = rows.len();
    let mut features = Array2::zeros((n, width - 1));
    let mut targets = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut j_out = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == target {
                targets[i] = v;
            } else {
                features[[i, j_out]] = v;
                j_out += 1;
            }
        }
    }
    let feature_names = names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, n)| n.clone())
        .collect();
    RegressionDataset::with_names(
        features,
        targets,
        feature_names,
        names[target].clone(),
        Provenance::File {
            path: path.to_path_buf(),
            target_column: target_column.to_string(),
            delimiter,
            has_header,
        },
    )
}

/// Reads a feature matrix, optionally dropping one column (e.g. a target
/// that is present in the file).
pub fn load_features(
    path: impl AsRef<Path>,
    delimiter: Delimiter,
    has_header: bool,
    drop: Option<&TargetColumn>,
) -> Result<(Array2<f64>, Vec<String>)> {
    let path = path.as_ref();
    let Table { names, rows, .. } = read_table(path, delimiter, has_header)?;
    let skip = drop.map(|t| resolve_target(t, &names)).transpose()?;
    let keep: Vec<usize> = (0..names.len()).filter(|j| Some(*j) != skip).collect();
    if keep.is_empty() {
        return Err(Error::Schema(format!("{}: no feature columns", path.display())));
    }
    let x = Array2::from_shape_fn((rows.len(), keep.len()), |(i, j)| rows[i][keep[j]]);
    Ok((x, keep.iter().map(|&j| names[j].clone()).collect()))
}

fn split_line(line: &str, delimiter: Delimiter) -> Vec<&str> {
    match delimiter {
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
        _ => line.split_whitespace().collect(),
    }
}

fn resolve_target(target: &TargetColumn, names: &[String]) -> Result<usize> {
    let available = || names.join(", ");
    match target {
        TargetColumn::Last => Ok(names.len() - 1),
        TargetColumn::Index(i) if *i < names.len() => Ok(*i),
        TargetColumn::Index(i) => Err(Error::Schema(format!(
            "target column index {i} out of range; {} columns available: {}",
            names.len(),
            available()
        ))),
        TargetColumn::Name(name) => names.iter().position(|n| n == name).ok_or_else(|| {
            Error::Schema(format!(
                "no column named {name:?}; available columns: {}",
                available()
            ))
        }),
    }
}

/// Draws `n` points with `x ~ U(x_range)` and `y = f(x) + sigma * eps`, where
/// `sigma` is picked per point from the noise mixture.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<RegressionDataset> {
    let SyntheticSpec {
        kind,
        n,
        ref noise,
        x_range: (lo, hi),
        seed,
    } = *spec;
    if n < 10 {
        return Err(Error::domain(format!("synthetic datasets need n >= 10, got {n}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!("invalid x range ({lo}, {hi})")));
    }
    noise.validate()?;
    if kind != SyntheticKind::HeteroscedasticBimodal && noise.sigmas.len() != 1 {
        return Err(Error::domain(format!(
            "{kind} data takes a single noise sigma, got {}",
            noise.sigmas.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Array2::zeros((n, 1));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let xi = rng.random_range(lo..hi);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut sigma = *noise.sigmas.last().expect("validated");
        for (s, w) in noise.sigmas.iter().zip(&noise.mix) {
            acc += w;
            if u < acc {
                sigma = *s;
                break;
            }
        }
        let eps: f64 = std_normal.sample(&mut rng);
        x[[i, 0]] = xi;
        y[i] = kind.mean(xi) + sigma * eps;
    }
    let formula = match kind {
        SyntheticKind::Linear => "y = 2x + N(0, sigma^2)",
        SyntheticKind::Cubic => "y = x^3 + N(0, sigma^2)",
        SyntheticKind::HeteroscedasticBimodal => {
            "y = x^3 + N(0, s^2), s drawn per point from sigmas with probabilities mix"
        }
    };
    RegressionDataset::with_names(
        x,
        y,
        vec!["x".into()],
        "y".into(),
        Provenance::Synthetic {
            spec: spec.clone(),
            formula: format!("{formula}; x ~ U({lo}, {hi})"),
        },
    )
}

/// Evenly spaced inputs on `[lo, hi]` as an `n x 1` matrix.
pub fn grid(lo: f64, hi: f64, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 1), |(i, _)| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(largest_remainder(10, &[0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(largest_remainder(7, &[0.5, 0.25, 0.25]), [3, 2, 2]);
        assert_eq!(largest_remainder(3, &[1.0 / 3.0; 3]), [1, 1, 1]);
        assert_eq!(largest_remainder(1000, &[0.81, 0.09, 0.10]), [810, 90, 100]);
    }

    #[test]
    fn target_column_parsing() {
        assert_eq!("last".parse::<TargetColumn>().unwrap(), TargetColumn::Last);
        assert_eq!("3".parse::<TargetColumn>().unwrap(), TargetColumn::Index(3));
        assert_eq!(
            "medv".parse::<TargetColumn>().unwrap(),
            TargetColumn::Name("medv".into())
        );
    }

    #[test]
    fn constant_column_gets_unit_std() {
        let x = ndarray::array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let y = ndarray::array![1.0, 2.0, 3.0];
        let st = Standardization::fit(&x, y.view()).unwrap();
        assert_eq!(st.feature_stds[1], 1.0);
        let z = st.features(&x).unwrap();
        assert!(z.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cubic_without_noise_is_exact() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Cubic,
            n: 50,
            noise: NoiseParams::gaussian(0.0),
            x_range: (-4.0, 4.0),
            seed: 1,
        };
        let d = make_synthetic(&spec).unwrap();
        for (x, y) in d.features().column(0).iter().zip(d.targets()) {
            assert_eq!(*y, x * x * x);
        }
    }

    #[test]
    fn synthetic_rejects_bad_input() {
        let mut spec = SyntheticSpec::with_defaults(SyntheticKind::Linear, 5, 0);
        assert!(make_synthetic(&spec).is_err());
        spec.n = 20;
        spec.x_range = (1.0, 1.0);
        assert!(make_synthetic(&spec).is_err());
        spec.x_range = (0.0, 1.0);
        spec.noise = NoiseParams::bimodal(0.1, 0.2, 0.5);
        assert!(make_synthetic(&spec).is_err());
    }
}
