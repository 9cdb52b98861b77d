//! Seeded active-learning trials, paired comparisons and result files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{platt_fit, PlattCalibration, Predictor};
use crate::data::{self, ClusterSpec, Dataset, Label, SplitPlan};
use crate::error::{Error, Result};
use crate::kernels::{gamma_heuristic, KernelKind, KernelSpec};
use crate::stats::{accuracy, f1, mean_std, paired_t_test_one_sided, TTestOutcome, Verdict};
use crate::strategies::{PoolState, Selection, Selector, StrategyConfig, StrategyKind};

/// Metrics of the model trained at one iteration, plus the query it made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub iteration: usize,
    pub n_labeled: usize,
    pub accuracy: f64,
    pub f1: f64,
    /// Wall time of query selection only.
    pub query_ms: f64,
    pub queried_ids: Vec<usize>,
    pub queried_labels: Vec<Label>,
    /// The labeled set had one class, so a constant predictor stood in.
    #[serde(default)]
    pub constant_model: bool,
    /// The query came back smaller than asked, or one class filled in for
    /// the other.
    #[serde(default)]
    pub short_batch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub strategy: String,
    pub trial: usize,
    pub seed: u64,
    pub rows: Vec<TrialRow>,
}

impl TrialRecord {
    pub fn queried_ids(&self) -> Vec<usize> {
        self.rows.iter().flat_map(|r| r.queried_ids.iter().copied()).collect()
    }

    pub fn queried_labels(&self) -> Vec<Label> {
        self.rows.iter().flat_map(|r| r.queried_labels.iter().copied()).collect()
    }

    /// Copy with all timings zeroed, for comparing runs.
    pub fn without_timing(&self) -> TrialRecord {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.query_ms = 0.0);
        r
    }

    pub fn final_row(&self) -> Option<&TrialRow> {
        self.rows.last()
    }
}

/// Positive-to-negative ratio among queried examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "RatioRepr", try_from = "RatioRepr")]
pub enum ClassRatio {
    Finite(f64),
    /// Positives were queried but no negatives.
    Infinite,
    /// Nothing was queried.
    Undefined,
}

impl ClassRatio {
    pub fn from_counts(pos: usize, neg: usize) -> ClassRatio {
        match (pos, neg) {
            (0, 0) => ClassRatio::Undefined,
            (_, 0) => ClassRatio::Infinite,
            (p, n) => ClassRatio::Finite(p as f64 / n as f64),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            ClassRatio::Finite(v) => v,
            ClassRatio::Infinite => f64::INFINITY,
            ClassRatio::Undefined => f64::NAN,
        }
    }
}

impl fmt::Display for ClassRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassRatio::Finite(v) => write!(f, "{v:.2}"),
            ClassRatio::Infinite => f.write_str("inf"),
            ClassRatio::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RatioRepr {
    Number(f64),
    Text(String),
}

impl From<ClassRatio> for RatioRepr {
    fn from(r: ClassRatio) -> Self {
        match r {
            ClassRatio::Finite(v) => RatioRepr::Number(v),
            other => RatioRepr::Text(other.to_string()),
        }
    }
}

impl TryFrom<RatioRepr> for ClassRatio {
    type Error = String;

    fn try_from(r: RatioRepr) -> std::result::Result<Self, String> {
        match r {
            RatioRepr::Number(v) => Ok(ClassRatio::Finite(v)),
            RatioRepr::Text(t) if t == "inf" => Ok(ClassRatio::Infinite),
            RatioRepr::Text(t) if t == "undefined" => Ok(ClassRatio::Undefined),
            RatioRepr::Text(t) => Err(format!("bad class ratio `{t}`")),
        }
    }
}

pub fn queried_class_ratio(record: &TrialRecord) -> ClassRatio {
    let labels = record.queried_labels();
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    ClassRatio::from_counts(pos, labels.len() - pos)
}

/// Held-out examples the learner is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
}

impl TestSet {
    pub fn from_ids(dataset: &Dataset, ids: &[usize]) -> Result<TestSet> {
        if ids.is_empty() {
            return Err(Error::Empty("test set"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::UnknownId(bad));
        }
        Ok(TestSet { features: dataset.features.select(Axis(0), ids), labels: ids.iter().map(|&i| dataset.labels[i]).collect() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub strategy: StrategyConfig,
    pub classifier_kernel: KernelSpec,
    pub c_penalty: f64,
}

impl LearnerConfig {
    /// Classifier shares the strategy's kernel.
    pub fn shared(strategy: StrategyConfig, c_penalty: f64) -> Self {
        LearnerConfig { strategy, classifier_kernel: strategy.kernel, c_penalty }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    selection: Selection,
    query_ms: f64,
}

/// The train, predict, select, label loop, advanced one query at a time.
/// Labels come from the caller, so the same engine serves simulated and
/// human oracles.
#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    pool: PoolState,
    selector: Selector,
    test: TestSet,
    model: Predictor,
    rows: Vec<TrialRow>,
    pending: Option<Pending>,
}

impl Learner {
    pub fn new(
        features: Arc<Array2<f64>>,
        pool_ids: &[usize],
        initial: &[(usize, Label)],
        test: TestSet,
        config: LearnerConfig,
        seed: u64,
    ) -> Result<Learner> {
        if test.labels.is_empty() {
            return Err(Error::Empty("test set"));
        }
        if !(config.c_penalty > 0.0 && config.c_penalty.is_finite()) {
            return Err(Error::InvalidParameter(format!("C must be positive, got {}", config.c_penalty)));
        }
        config.classifier_kernel.validate()?;
        let pool = PoolState::new(features, pool_ids, initial)?;
        let selector = Selector::new(config.strategy, seed)?;
        let mut learner = Learner {
            config,
            pool,
            selector,
            test,
            model: Predictor::Constant(Label::Positive),
            rows: Vec::new(),
            pending: None,
        };
        learner.retrain()?;
        Ok(learner)
    }

    fn retrain(&mut self) -> Result<()> {
        let (x, y) = self.pool.labeled_data();
        self.model = Predictor::fit(x.view(), &y, &self.config.classifier_kernel, self.config.c_penalty)?;
        let pred = self.model.predict(self.test.features.view())?;
        self.rows.push(TrialRow {
            iteration: self.pool.iteration,
            n_labeled: self.pool.labeled_count(),
            accuracy: accuracy(&pred, &self.test.labels)?,
            f1: f1(&pred, &self.test.labels)?,
            query_ms: 0.0,
            queried_ids: Vec::new(),
            queried_labels: Vec::new(),
            constant_model: self.model.is_constant(),
            short_batch: false,
        });
        Ok(())
    }

    fn calibration(&self) -> Result<PlattCalibration> {
        if let Predictor::Svm(_) = self.model {
            let (x, y) = self.pool.labeled_data();
            let f = self.model.decision_values(x.view())?;
            if let Ok(cal) = platt_fit(&f, &y) {
                return Ok(cal);
            }
        }
        // A constant model gives every example the same posterior.
        Ok(PlattCalibration { slope: -1.0, intercept: 0.0 })
    }

    /// Computes the next query of at most `limit` ids, or returns the one
    /// already pending. Empty when nothing is left to ask.
    pub fn propose(&mut self, limit: usize) -> Result<Vec<usize>> {
        if let Some(p) = &self.pending {
            return Ok(p.selection.ids.clone());
        }
        if limit == 0 || self.pool.unlabeled_ids().is_empty() {
            return Ok(Vec::new());
        }
        let pred = self.model.predict(self.pool.unlabeled_features().view())?;
        self.pool.set_predictions(pred)?;
        let calibration = match self.config.strategy.kind {
            StrategyKind::Uncertainty => Some(self.calibration()?),
            _ => None,
        };
        let start = Instant::now();
        let selection = self.selector.select(&self.pool, &self.model, calibration.as_ref(), limit)?;
        let query_ms = start.elapsed().as_secs_f64() * 1e3;
        let ids = selection.ids.clone();
        if !ids.is_empty() {
            self.pending = Some(Pending { selection, query_ms });
        }
        Ok(ids)
    }

    pub fn pending(&self) -> Option<&[usize]> {
        self.pending.as_ref().map(|p| p.selection.ids.as_slice())
    }

    /// Applies labels for exactly the pending ids, retrains and records
    /// a new row. Nothing changes if the labels are rejected.
    pub fn submit(&mut self, labels: &[(usize, Label)]) -> Result<()> {
        let pending = self.pending.as_ref().ok_or(Error::NoPendingQuery)?;
        let ids = &pending.selection.ids;
        let mut given = BTreeMap::new();
        for &(id, label) in labels {
            if !ids.contains(&id) {
                return Err(Error::NotPending(id));
            }
            if given.insert(id, label).is_some() {
                return Err(Error::AlreadyInSet(id));
            }
        }
        if given.len() != ids.len() {
            return Err(Error::IncompleteBatch { expected: ids.len(), got: given.len() });
        }
        let ordered: Vec<(usize, Label)> = ids.iter().map(|id| (*id, given[id])).collect();
        self.pool.apply_labels(&ordered)?;
        let pending = self.pending.take().expect("checked above");
        let row = self.rows.last_mut().expect("a row exists from construction");
        row.query_ms = pending.query_ms;
        row.queried_ids = ordered.iter().map(|p| p.0).collect();
        row.queried_labels = ordered.iter().map(|p| p.1).collect();
        row.short_batch = pending.selection.short || pending.selection.refilled;
        self.retrain()
    }

    pub fn rows(&self) -> &[TrialRow] {
        &self.rows
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn model(&self) -> &Predictor {
        &self.model
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn into_record(self, trial: usize, seed: u64) -> TrialRecord {
        TrialRecord { strategy: self.config.strategy.kind.name().to_string(), trial, seed, rows: self.rows }
    }
}

/// Runs one trial against the simulated oracle until `budget` labels are
/// bought (or the pool runs dry).
pub fn run_trial(dataset: &Dataset, split: &SplitPlan, config: &LearnerConfig, budget: usize, trial: usize, seed: u64) -> Result<TrialRecord> {
    let available = split.train_ids.len() - split.initial_labeled_ids.len();
    if budget > available {
        return Err(Error::InvalidParameter(format!("budget {budget} exceeds the {available} unlabeled training examples")));
    }
    let features = Arc::new(dataset.features.clone());
    let initial: Vec<(usize, Label)> = split.initial_labeled_ids.iter().map(|&i| (i, dataset.labels[i])).collect();
    let test = TestSet::from_ids(dataset, &split.test_ids)?;
    let mut learner = Learner::new(features, &split.train_ids, &initial, test, *config, seed)?;
    let mut spent = 0;
    while spent < budget {
        let ids = learner.propose(budget - spent)?;
        if ids.is_empty() {
            break;
        }
        let labels = data::oracle_label_batch(dataset, &ids)?;
        let answered: Vec<(usize, Label)> = ids.iter().copied().zip(labels).collect();
        learner.submit(&answered)?;
        spent += ids.len();
    }
    Ok(learner.into_record(trial, seed))
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointVerdict {
    pub iteration: usize,
    pub outcome: TTestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub strategy_a: String,
    pub strategy_b: String,
    pub alpha: f64,
    pub checkpoints: Vec<CheckpointVerdict>,
}

impl ComparisonTable {
    fn count(&self, v: Verdict) -> usize {
        self.checkpoints.iter().filter(|c| c.outcome.verdict == v).count()
    }

    pub fn wins(&self) -> usize {
        self.count(Verdict::Win)
    }

    pub fn ties(&self) -> usize {
        self.count(Verdict::Tie)
    }

    pub fn losses(&self) -> usize {
        self.count(Verdict::Loss)
    }

    /// Verdict counts restricted to iterations in `lo..=hi`.
    pub fn counts_in(&self, lo: usize, hi: usize) -> (usize, usize, usize) {
        let sel = self.checkpoints.iter().filter(|c| (lo..=hi).contains(&c.iteration));
        sel.fold((0, 0, 0), |(w, t, l), c| match c.outcome.verdict {
            Verdict::Win => (w + 1, t, l),
            Verdict::Tie => (w, t + 1, l),
            Verdict::Loss => (w, t, l + 1),
        })
    }
}

/// Paired per-checkpoint t-tests of A's accuracy against B's. Records are
/// paired by seed; `checkpoints` defaults to every iteration present in
/// all records.
pub fn compare(a: &[TrialRecord], b: &[TrialRecord], checkpoints: Option<&[usize]>, alpha: f64) -> Result<ComparisonTable> {
    let mut a: Vec<&TrialRecord> = a.iter().collect();
    let mut b: Vec<&TrialRecord> = b.iter().collect();
    a.sort_by_key(|r| r.seed);
    b.sort_by_key(|r| r.seed);
    if a.len() != b.len() {
        return Err(Error::Unpaired(format!("{} trials against {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("no trial records to compare"));
    }
    if let Some((x, y)) = a.iter().zip(&b).find(|(x, y)| x.seed != y.seed) {
        return Err(Error::Unpaired(format!("seed {} paired with seed {}", x.seed, y.seed)));
    }
    let common = a.iter().chain(&b).map(|r| r.rows.len()).min().unwrap_or(0);
    let default: Vec<usize> = (0..common).collect();
    let checkpoints = checkpoints.unwrap_or(&default);
    let acc_at = |recs: &[&TrialRecord], it: usize| -> Result<Vec<f64>> {
        recs.iter()
            .map(|r| {
                r.rows
                    .iter()
                    .find(|row| row.iteration == it)
                    .map(|row| row.accuracy)
                    .ok_or_else(|| Error::InvalidParameter(format!("trial with seed {} has no iteration {it}", r.seed)))
            })
            .collect()
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    for &it in checkpoints {
        let outcome = paired_t_test_one_sided(&acc_at(&a, it)?, &acc_at(&b, it)?, alpha)?;
        out.push(CheckpointVerdict { iteration: it, outcome });
    }
    Ok(ComparisonTable { strategy_a: a[0].strategy.clone(), strategy_b: b[0].strategy.clone(), alpha, checkpoints: out })
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSetting {
    Auto,
    Fixed(f64),
}

impl FromStr for GammaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(GammaSetting::Auto);
        }
        s.parse::<f64>()
            .map(GammaSetting::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("gamma must be `auto` or a number, got `{s}`")))
    }
}

impl fmt::Display for GammaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSetting::Auto => f.write_str("auto"),
            GammaSetting::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for GammaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GammaSetting::Auto => s.serialize_str("auto"),
            GammaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(GammaSetting::Fixed(v)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Flat experiment description; every key has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `twonorm`, `ringnorm`, `clusters`, `libsvm` or `csv`.
    pub dataset: String,
    pub path: Option<PathBuf>,
    pub label_column: String,
    /// Size of generated datasets.
    pub n: usize,
    pub dim: usize,
    /// Subsample to this positive-to-negative ratio before splitting.
    pub imbalance_ratio: Option<f64>,
    /// Comma-separated strategy names; the first is compared to the rest.
    pub strategy: String,
    pub kernel: KernelKind,
    pub gamma: GammaSetting,
    pub degree: u32,
    pub coeff: f64,
    /// Classifier gamma when it should differ from the strategy kernel's.
    pub classifier_gamma: Option<GammaSetting>,
    /// SVM penalty.
    pub c: f64,
    pub tau: f64,
    /// Defaults to 0.5, or 0.1 on ringnorm.
    pub alpha: Option<f64>,
    pub batch_size: usize,
    pub budget: usize,
    pub trials: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub initial_per_class: usize,
    pub significance: f64,
    pub checkpoints: Option<Vec<usize>>,
    /// Worker threads for trials; 0 picks one per core.
    pub workers: usize,
    pub cache_profiles: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "twonorm".into(),
            path: None,
            label_column: "label".into(),
            n: 2000,
            dim: 20,
            imbalance_ratio: None,
            strategy: "alevs,random".into(),
            kernel: KernelKind::Rbf,
            gamma: GammaSetting::Auto,
            degree: 2,
            coeff: 1.0,
            classifier_gamma: None,
            c: 10.0,
            tau: 0.75,
            alpha: None,
            batch_size: 10,
            budget: 50,
            trials: 50,
            seed: 0,
            test_fraction: 0.3,
            initial_per_class: 2,
            significance: 0.05,
            checkpoints: None,
            workers: 0,
            cache_profiles: false,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn strategies(&self) -> Result<Vec<StrategyKind>> {
        let kinds: Vec<StrategyKind> =
            self.strategy.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?;
        if kinds.is_empty() {
            return Err(Error::InvalidParameter("no strategy given".into()));
        }
        let unique: BTreeSet<_> = kinds.iter().collect();
        if unique.len() != kinds.len() {
            return Err(Error::InvalidParameter("strategies must be distinct".into()));
        }
        Ok(kinds)
    }

    pub fn alpha_value(&self) -> f64 {
        self.alpha.unwrap_or(if self.dataset == "ringnorm" { 0.1 } else { 0.5 })
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = match self.dataset.as_str() {
            "twonorm" => data::gen_twonorm(self.n, self.dim, self.seed)?,
            "ringnorm" => data::gen_ringnorm(self.n, self.dim, self.seed)?,
            "clusters" => {
                let base = ClusterSpec::default();
                let per_class = base.oversample + base.clusters_per_class - 1;
                let spec = ClusterSpec { dim: self.dim, points_per_cluster: (self.n / (2 * per_class)).max(1), ..base };
                data::gen_clusters(&spec, self.seed)?
            }
            "libsvm" => data::load_libsvm(self.require_path()?)?,
            "csv" => data::load_csv(self.require_path()?, &self.label_column)?,
            other => return Err(Error::InvalidParameter(format!("unknown dataset `{other}`"))),
        };
        match self.imbalance_ratio {
            Some(r) => data::subsample_ratio(&ds, r, self.seed),
            None => Ok(ds),
        }
    }

    fn require_path(&self) -> Result<&Path> {
        self.path.as_deref().ok_or_else(|| Error::InvalidParameter(format!("dataset `{}` needs a path", self.dataset)))
    }

    fn resolve_gamma(&self, g: GammaSetting, ds: &Dataset) -> Result<f64> {
        match g {
            GammaSetting::Auto => gamma_heuristic(ds.features.view(), self.seed),
            GammaSetting::Fixed(v) => Ok(v),
        }
    }

    /// Learner configuration for one strategy on a loaded dataset.
    pub fn learner_config(&self, kind: StrategyKind, ds: &Dataset) -> Result<LearnerConfig> {
        let kernel = self.kernel_spec(self.resolve_gamma(self.gamma, ds)?);
        let classifier_kernel = match self.classifier_gamma {
            Some(g) => self.kernel_spec(self.resolve_gamma(g, ds)?),
            None => kernel,
        };
        let strategy = StrategyConfig {
            kind,
            kernel,
            tau: self.tau,
            alpha: self.alpha_value(),
            batch_size: self.batch_size,
            cache_profiles: self.cache_profiles,
        };
        strategy.validate()?;
        Ok(LearnerConfig { strategy, classifier_kernel, c_penalty: self.c })
    }

    fn kernel_spec(&self, gamma: f64) -> KernelSpec {
        match self.kernel {
            KernelKind::Rbf => KernelSpec::rbf(gamma),
            KernelKind::Linear => KernelSpec::linear(),
            KernelKind::Polynomial => KernelSpec::polynomial(self.degree, self.coeff),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n: usize,
    pub dim: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub gamma: f64,
    pub records: Vec<TrialRecord>,
    pub tables: Vec<ComparisonTable>,
}

/// Runs every strategy on every trial. Trial `i` uses seed `seed + i` for
/// its split and strategy, so all strategies see the same splits.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let kinds = config.strategies()?;
    if config.trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let ds = config.load_dataset()?;
    let learners: Vec<LearnerConfig> = kinds.iter().map(|&k| config.learner_config(k, &ds)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..config.trials).flat_map(|t| (0..kinds.len()).map(move |s| (s, t))).collect();
    let run = || {
        jobs.par_iter()
            .map(|&(s, t)| {
                let seed = config.seed.wrapping_add(t as u64);
                let split = data::make_split(&ds, config.test_fraction, config.initial_per_class, seed)?;
                run_trial(&ds, &split, &learners[s], config.budget, t, seed)
            })
            .collect::<Result<Vec<TrialRecord>>>()
    };
    let mut records = if config.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(run)?
    };
    let order = |name: &str| kinds.iter().position(|k| k.name() == name).unwrap_or(usize::MAX);
    records.sort_by(|a, b| order(&a.strategy).cmp(&order(&b.strategy)).then(a.seed.cmp(&b.seed)));

    let mut tables = Vec::new();
    if config.trials >= 2 {
        let group = |k: StrategyKind| records.iter().filter(|r| r.strategy == k.name()).cloned().collect::<Vec<_>>();
        let first = group(kinds[0]);
        for &other in &kinds[1..] {
            tables.push(compare(&first, &group(other), config.checkpoints.as_deref(), config.significance)?);
        }
    }
    let (positives, negatives) = ds.class_counts();
    Ok(ExperimentResult {
        config: config.clone(),
        dataset: DatasetInfo { name: ds.name.clone(), n: ds.len(), dim: ds.dim(), positives, negatives },
        gamma: learners[0].strategy.kernel.gamma,
        records,
        tables,
    })
}

// ---------------------------------------------------------------------------
// Result files

pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const QUERIES_FILE: &str = "queries.csv";
pub const WTL_FILE: &str = "wtl.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveLine {
    strategy: String,
    trial: usize,
    seed: u64,
    iteration: usize,
    n_labeled: usize,
    accuracy: f64,
    f1: f64,
    query_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueryLine {
    strategy: String,
    trial: usize,
    seed: u64,
    iteration: usize,
    position: usize,
    id: usize,
    label: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WtlLine {
    strategy_a: String,
    strategy_b: String,
    iteration: usize,
    verdict: String,
    mean_diff: f64,
    t: f64,
    p_value: f64,
    df: usize,
    alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub n_labeled: usize,
    pub trials: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub query_ms_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub trials: usize,
    pub curve: Vec<CurvePoint>,
    /// Per trial, in seed order.
    pub queried_ratio: Vec<ClassRatio>,
    /// Mean over trials with a finite ratio.
    pub queried_ratio_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub strategy_a: String,
    pub strategy_b: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

/// Rows whose flags are set, so records survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFlag {
    pub strategy: String,
    pub seed: u64,
    pub iteration: usize,
    pub constant_model: bool,
    pub short_batch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: Option<serde_json::Value>,
    pub strategies: Vec<StrategySummary>,
    pub comparisons: Vec<ComparisonSummary>,
    pub flags: Vec<RowFlag>,
}

fn group_by_strategy(records: &[TrialRecord]) -> Vec<(String, Vec<&TrialRecord>)> {
    let mut groups: Vec<(String, Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|g| g.0 == r.strategy) {
            Some(g) => g.1.push(r),
            None => groups.push((r.strategy.clone(), vec![r])),
        }
    }
    for g in &mut groups {
        g.1.sort_by_key(|r| r.seed);
    }
    groups
}

pub fn summarize(records: &[TrialRecord], tables: &[ComparisonTable], config: Option<serde_json::Value>) -> Summary {
    let strategies = group_by_strategy(records)
        .into_iter()
        .map(|(strategy, recs)| {
            let len = recs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
            let curve = (0..len)
                .map(|i| {
                    let col = |f: fn(&TrialRow) -> f64| recs.iter().map(|r| f(&r.rows[i])).collect::<Vec<f64>>();
                    let (am, asd) = mean_std(&col(|r| r.accuracy));
                    let (fm, fsd) = mean_std(&col(|r| r.f1));
                    CurvePoint {
                        iteration: recs[0].rows[i].iteration,
                        n_labeled: recs[0].rows[i].n_labeled,
                        trials: recs.len(),
                        accuracy_mean: am,
                        accuracy_std: asd,
                        f1_mean: fm,
                        f1_std: fsd,
                        query_ms_mean: mean_std(&col(|r| r.query_ms)).0,
                    }
                })
                .collect();
            let queried_ratio: Vec<ClassRatio> = recs.iter().map(|r| queried_class_ratio(r)).collect();
            let finite: Vec<f64> = queried_ratio.iter().filter_map(|r| if let ClassRatio::Finite(v) = r { Some(*v) } else { None }).collect();
            StrategySummary {
                strategy,
                trials: recs.len(),
                curve,
                queried_ratio_mean: (!finite.is_empty()).then(|| mean_std(&finite).0),
                queried_ratio,
            }
        })
        .collect();
    let comparisons = tables
        .iter()
        .map(|t| ComparisonSummary {
            strategy_a: t.strategy_a.clone(),
            strategy_b: t.strategy_b.clone(),
            wins: t.wins(),
            ties: t.ties(),
            losses: t.losses(),
        })
        .collect();
    let flags = records
        .iter()
        .flat_map(|r| {
            r.rows.iter().filter(|row| row.constant_model || row.short_batch).map(move |row| RowFlag {
                strategy: r.strategy.clone(),
                seed: r.seed,
                iteration: row.iteration,
                constant_model: row.constant_model,
                short_batch: row.short_batch,
            })
        })
        .collect();
    Summary { config, strategies, comparisons, flags }
}

/// Writes the learning curve, queries, win/tie/loss table and summary.
/// Rows are ordered by strategy (first appearance), seed and iteration.
pub fn write_outputs(records: &[TrialRecord], tables: &[ComparisonTable], config: Option<serde_json::Value>, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut curve = csv::Writer::from_path(out_dir.join(LEARNING_CURVE_FILE))?;
    let mut queries = csv::Writer::from_path(out_dir.join(QUERIES_FILE))?;
    if records.is_empty() {
        curve.write_record(["strategy", "trial", "seed", "iteration", "n_labeled", "accuracy", "f1", "query_ms"])?;
        queries.write_record(["strategy", "trial", "seed", "iteration", "position", "id", "label"])?;
    }
    for (_, recs) in group_by_strategy(records) {
        for r in recs {
            for row in &r.rows {
                curve.serialize(CurveLine {
                    strategy: r.strategy.clone(),
                    trial: r.trial,
                    seed: r.seed,
                    iteration: row.iteration,
                    n_labeled: row.n_labeled,
                    accuracy: row.accuracy,
                    f1: row.f1,
                    query_ms: row.query_ms,
                })?;
                for (position, (&id, &label)) in row.queried_ids.iter().zip(&row.queried_labels).enumerate() {
                    queries.serialize(QueryLine {
                        strategy: r.strategy.clone(),
                        trial: r.trial,
                        seed: r.seed,
                        iteration: row.iteration,
                        position,
                        id,
                        label: label.into(),
                    })?;
                }
            }
        }
    }
    curve.flush()?;
    queries.flush()?;

    let mut wtl = csv::Writer::from_path(out_dir.join(WTL_FILE))?;
    if tables.is_empty() {
        wtl.write_record(["strategy_a", "strategy_b", "iteration", "verdict", "mean_diff", "t", "p_value", "df", "alpha"])?;
    }
    for t in tables {
        for c in &t.checkpoints {
            wtl.serialize(WtlLine {
                strategy_a: t.strategy_a.clone(),
                strategy_b: t.strategy_b.clone(),
                iteration: c.iteration,
                verdict: c.outcome.verdict.as_str().into(),
                mean_diff: c.outcome.mean_diff,
                t: c.outcome.t,
                p_value: c.outcome.p_value,
                df: c.outcome.df,
                alpha: t.alpha,
            })?;
        }
    }
    wtl.flush()?;

    let summary = summarize(records, tables, config);
    fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn write_experiment(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    let config = serde_json::json!({
        "experiment": result.config,
        "dataset": result.dataset,
        "gamma": result.gamma,
    });
    write_outputs(&result.records, &result.tables, Some(config), out_dir)
}

/// Reads records back from a directory written by [`write_outputs`].
pub fn read_records(dir: &Path) -> Result<Vec<TrialRecord>> {
    let mut records: Vec<TrialRecord> = Vec::new();
    for line in csv::Reader::from_path(dir.join(LEARNING_CURVE_FILE))?.deserialize() {
        let l: CurveLine = line?;
        let row = TrialRow {
            iteration: l.iteration,
            n_labeled: l.n_labeled,
            accuracy: l.accuracy,
            f1: l.f1,
            query_ms: l.query_ms,
            queried_ids: Vec::new(),
            queried_labels: Vec::new(),
            constant_model: false,
            short_batch: false,
        };
        match records.iter_mut().find(|r| r.strategy == l.strategy && r.seed == l.seed) {
            Some(r) => r.rows.push(row),
            None => records.push(TrialRecord { strategy: l.strategy, trial: l.trial, seed: l.seed, rows: vec![row] }),
        }
    }
    let find_row = |records: &[TrialRecord], strategy: &str, seed: u64, it: usize| -> Result<(usize, usize)> {
        records
            .iter()
            .enumerate()
            .find(|(_, r)| r.strategy == strategy && r.seed == seed)
            .and_then(|(i, r)| r.rows.iter().position(|row| row.iteration == it).map(|j| (i, j)))
            .ok_or_else(|| Error::InvalidParameter(format!("no curve row for {strategy} seed {seed} iteration {it}")))
    };
    for line in csv::Reader::from_path(dir.join(QUERIES_FILE))?.deserialize() {
        let q: QueryLine = line?;
        let (i, j) = find_row(&records, &q.strategy, q.seed, q.iteration)?;
        let row = &mut records[i].rows[j];
        row.queried_ids.push(q.id);
        row.queried_labels.push(Label::try_from(q.label)?);
    }
    let summary_path = dir.join(SUMMARY_FILE);
    if summary_path.exists() {
        let summary: Summary = serde_json::from_str(&fs::read_to_string(summary_path)?)?;
        for f in summary.flags {
            let (i, j) = find_row(&records, &f.strategy, f.seed, f.iteration)?;
            let row = &mut records[i].rows[j];
            row.constant_model = f.constant_model;
            row.short_batch = f.short_batch;
        }
    }
    Ok(records)
}

/// Compares every strategy found in `a_dir` with every one in `b_dir`.
pub fn compare_dirs(a_dir: &Path, b_dir: &Path, checkpoints: Option<&[usize]>, alpha: f64) -> Result<Vec<ComparisonTable>> {
    let a = read_records(a_dir)?;
    let b = read_records(b_dir)?;
    let mut out = Vec::new();
    for (_, ga) in group_by_strategy(&a) {
        for (_, gb) in group_by_strategy(&b) {
            let ga: Vec<TrialRecord> = ga.iter().map(|r| (*r).clone()).collect();
            let gb: Vec<TrialRecord> = gb.iter().map(|r| (*r).clone()).collect();
            out.push(compare(&ga, &gb, checkpoints, alpha)?);
        }
    }
    Ok(out)
}
