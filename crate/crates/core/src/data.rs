//! Datasets, file loaders, synthetic generators and train/test splits.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean offset of the twonorm/ringnorm generators, `2 / sqrt(20)`.
pub const NORM_OFFSET: f64 = 0.447_213_595_499_957_9;

/// A binary class label, serialized as `-1` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    /// Sign of a decision value; zero maps to `Positive`.
    pub fn from_decision(f: f64) -> Label {
        if f >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(v: i64) -> Result<Label> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::InvalidParameter(format!("label must be -1 or 1, got {other}"))),
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> i64 {
        match l {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }
}

/// Label parsing for data files: accepts `{-1, +1}` and `{0, 1}`.
fn parse_file_label(token: &str) -> Option<Label> {
    let v: f64 = token.trim().parse().ok()?;
    if v == 1.0 {
        Some(Label::Positive)
    } else if v == -1.0 || v == 0.0 {
        Some(Label::Negative)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
    /// Source identifiers. Rows are addressed by index everywhere else.
    pub ids: Vec<usize>,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<Label>, name: impl Into<String>) -> Result<Dataset> {
        let ids = (0..labels.len()).collect();
        Dataset::with_ids(features, labels, ids, name)
    }

    pub fn with_ids(features: Array2<f64>, labels: Vec<Label>, ids: Vec<usize>, name: impl Into<String>) -> Result<Dataset> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if ids.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: ids.len() });
        }
        let mut seen = ids.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("dataset ids must be unique".into()));
        }
        for ((i, j), &v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
        Ok(Dataset { features, labels, ids, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        (pos, self.len() - pos)
    }

    /// Rows `rows` as a new dataset, keeping their source ids.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::UnknownId(bad));
        }
        Dataset::with_ids(
            self.features.select(Axis(0), rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
            rows.iter().map(|&r| self.ids[r]).collect(),
            self.name.clone(),
        )
    }
}

/// The simulated labeling oracle: returns the stored label of row `id`.
pub fn oracle_label(dataset: &Dataset, id: usize) -> Result<Label> {
    dataset.labels.get(id).copied().ok_or(Error::UnknownId(id))
}

pub fn oracle_label_batch(dataset: &Dataset, ids: &[usize]) -> Result<Vec<Label>> {
    ids.iter().map(|&id| oracle_label(dataset, id)).collect()
}

// ---------------------------------------------------------------------------
// LIBSVM / CSV

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_libsvm(BufReader::new(File::open(path)?), &name)
}

/// Parses `<label> <index>:<value> ...` lines with 1-based indices.
pub fn parse_libsvm(reader: impl BufRead, name: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label = parse_file_label(label_tok)
            .ok_or_else(|| Error::Parse { line: line_no, msg: format!("bad label `{label_tok}`") })?;
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("expected index:value, got `{tok}`") })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad index `{idx}`") })?;
            if idx == 0 {
                return Err(Error::Parse { line: line_no, msg: "indices are 1-based".into() });
            }
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad value `{val}`") })?;
            if !val.is_finite() {
                return Err(Error::Parse { line: line_no, msg: format!("non-finite value `{val}`") });
            }
            width = width.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Empty("libsvm file has no examples"));
    }
    let mut features = Array2::zeros((rows.len(), width));
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row {
            features[[r, c]] = v;
        }
    }
    Dataset::new(features, labels, name)
}

/// Writes sparse LIBSVM lines, skipping zero entries.
pub fn write_libsvm(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    for (row, label) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        write!(out, "{}", i64::from(*label))?;
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                // `{:?}` prints the shortest representation that round-trips.
                write!(out, " {}:{:?}", c + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_csv(File::open(path)?, label_column, &name)
}

/// Parses a headed CSV; every column except `label_column` is a feature.
pub fn parse_csv(reader: impl Read, label_column: &str, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("no column named `{label_column}`") })?;
    let width = headers.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, got {}", headers.len(), record.len()) });
        }
        for (c, field) in record.iter().enumerate() {
            if c == label_idx {
                labels.push(
                    parse_file_label(field)
                        .ok_or_else(|| Error::Parse { line, msg: format!("bad label `{field}`") })?,
                );
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse { line, msg: format!("bad number `{field}`") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line, msg: format!("non-finite value `{field}`") });
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("csv file has no examples"));
    }
    let features = Array2::from_shape_vec((labels.len(), width), values)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Dataset::new(features, labels, name)
}

/// Writes a headed CSV with feature columns `x1..xd` followed by `label`.
pub fn write_csv(dataset: &Dataset, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=dataset.dim()).map(|c| format!("x{c}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(i64::from(*label).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data

fn normal_row(rng: &mut ChaCha8Rng, d: usize, mean: f64, std: f64) -> impl Iterator<Item = f64> + '_ {
    (0..d).map(move |_| {
        let z: f64 = StandardNormal.sample(rng);
        mean + std * z
    })
}

fn draw_label(rng: &mut ChaCha8Rng) -> Label {
    use rand::Rng;
    if rng.random_bool(0.5) {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Breiman's twonorm: unit-covariance Gaussians at `±a·1`.
pub fn gen_twonorm(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return Err(Error::InvalidParameter(format!("twonorm needs n >= 2 and d >= 1, got n={n} d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = draw_label(&mut rng);
        let mean = label.sign() * NORM_OFFSET;
        values.extend(normal_row(&mut rng, d, mean, 1.0));
        labels.push(label);
    }
    Dataset::new(Array2::from_shape_vec((n, d), values).expect("shape"), labels, "twonorm")
}

/// Breiman's ringnorm: positives from N(0, 4I), negatives from N(a·1, I).
pub fn gen_ringnorm(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return Err(Error::InvalidParameter(format!("ringnorm needs n >= 2 and d >= 1, got n={n} d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = draw_label(&mut rng);
        match label {
            Label::Positive => values.extend(normal_row(&mut rng, d, 0.0, 2.0)),
            Label::Negative => values.extend(normal_row(&mut rng, d, NORM_OFFSET, 1.0)),
        }
        labels.push(label);
    }
    Dataset::new(Array2::from_shape_vec((n, d), values).expect("shape"), labels, "ringnorm")
}

/// Isotropic Gaussian clusters per class, with the first cluster of each
/// class oversampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub clusters_per_class: usize,
    pub points_per_cluster: usize,
    /// Size multiplier of the first cluster of each class.
    pub oversample: usize,
    pub dim: usize,
    /// Centers are drawn uniformly from `[-center_range, center_range]^dim`.
    pub center_range: f64,
    pub cluster_std: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            clusters_per_class: 4,
            points_per_cluster: 40,
            oversample: 10,
            dim: 2,
            center_range: 4.0,
            cluster_std: 0.6,
        }
    }
}

pub fn gen_clusters(spec: &ClusterSpec, seed: u64) -> Result<Dataset> {
    use rand::Rng;
    if spec.clusters_per_class == 0 || spec.points_per_cluster == 0 || spec.dim == 0 || spec.oversample == 0 {
        return Err(Error::InvalidParameter("cluster spec sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for label in [Label::Positive, Label::Negative] {
        for c in 0..spec.clusters_per_class {
            let center: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-spec.center_range..spec.center_range)).collect();
            let count = if c == 0 { spec.points_per_cluster * spec.oversample } else { spec.points_per_cluster };
            for _ in 0..count {
                for &mu in &center {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values.push(mu + spec.cluster_std * z);
                }
                labels.push(label);
            }
        }
    }
    // Interleave so row order carries no class information.
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let features = Array2::from_shape_vec((n, spec.dim), values).expect("shape");
    let ds = Dataset::new(features, labels, "clusters")?;
    let mut shuffled = ds.subset(&order)?;
    shuffled.ids = (0..n).collect();
    Ok(shuffled)
}

// ---------------------------------------------------------------------------
// Splits and resampling

/// Train/test partition plus the initial labeled set, all as row indices
/// in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub initial_labeled_ids: Vec<usize>,
    pub seed: u64,
}

pub fn make_split(dataset: &Dataset, test_fraction: f64, initial_per_class: usize, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut test_ids = order[..n_test].to_vec();
    let mut train_ids = order[n_test..].to_vec();
    test_ids.sort_unstable();
    train_ids.sort_unstable();

    let mut initial = Vec::with_capacity(2 * initial_per_class);
    for class in [Label::Positive, Label::Negative] {
        let members: Vec<usize> = train_ids.iter().copied().filter(|&i| dataset.labels[i] == class).collect();
        if members.len() < initial_per_class {
            return Err(Error::InvalidParameter(format!(
                "class {} has {} training examples, need {initial_per_class}",
                i64::from(class),
                members.len()
            )));
        }
        let picked = rand::seq::index::sample(&mut rng, members.len(), initial_per_class);
        initial.extend(picked.into_iter().map(|p| members[p]));
    }
    initial.sort_unstable();
    Ok(SplitPlan { train_ids, test_ids, initial_labeled_ids: initial, seed })
}

/// Downsamples one class so that `#positive / #negative ≈ ratio`
/// (within one example), keeping every example of the other class.
pub fn subsample_ratio(dataset: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("ratio must be positive, got {ratio}")));
    }
    let pos: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i].is_positive()).collect();
    let neg: Vec<usize> = (0..dataset.len()).filter(|&i| !dataset.labels[i].is_positive()).collect();
    let want_neg = (pos.len() as f64 / ratio).round() as usize;
    let want_pos = (neg.len() as f64 * ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (keep_pos, keep_neg) = if want_neg >= 1 && want_neg <= neg.len() {
        (pos, pick(&mut rng, &neg, want_neg))
    } else if want_pos >= 1 && want_pos <= pos.len() {
        (pick(&mut rng, &pos, want_pos), neg)
    } else {
        return Err(Error::InvalidParameter(format!(
            "ratio {ratio} is infeasible with {} positives and {} negatives",
            pos.len(),
            neg.len()
        )));
    };
    let mut rows: Vec<usize> = keep_pos.into_iter().chain(keep_neg).collect();
    rows.sort_unstable();
    dataset.subset(&rows)
}

fn pick(rng: &mut ChaCha8Rng, from: &[usize], count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, from.len(), count).into_iter().map(|i| from[i]).collect()
}
