//! Query selection: ALEVS, DBALEVS and the baseline strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{posterior, uncertainty, PlattCalibration, Predictor};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix_for, KernelKind, KernelSpec};
use crate::linalg::{leverage_scores, LeverageProfile};
use crate::setfunc::{greedy_maximize, SetScoreContext};

/// Relative slack under which two ALEVS scores count as tied.
pub const ALEVS_TIE_RTOL: f64 = 1e-12;

/// Labeled and unlabeled pool examples, addressed by row index into
/// `features`. Rows outside the pool (e.g. test rows) are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub features: Arc<Array2<f64>>,
    labeled: BTreeMap<usize, Label>,
    unlabeled: Vec<usize>,
    /// Aligned with `unlabeled`; empty until the first prediction.
    predicted: Vec<Label>,
    pub iteration: usize,
}

impl PoolState {
    pub fn new(features: Arc<Array2<f64>>, pool_ids: &[usize], initial: &[(usize, Label)]) -> Result<PoolState> {
        let n = features.nrows();
        let mut ids = pool_ids.to_vec();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::AlreadyInSet(w[0]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfRange { index: bad, len: n });
        }
        let mut labeled = BTreeMap::new();
        for &(id, label) in initial {
            if ids.binary_search(&id).is_err() {
                return Err(Error::UnknownId(id));
            }
            if labeled.insert(id, label).is_some() {
                return Err(Error::AlreadyInSet(id));
            }
        }
        let unlabeled = ids.into_iter().filter(|i| !labeled.contains_key(i)).collect();
        Ok(PoolState { features, labeled, unlabeled, predicted: Vec::new(), iteration: 0 })
    }

    /// Labeled ids, ascending.
    pub fn labeled_ids(&self) -> Vec<usize> {
        self.labeled.keys().copied().collect()
    }

    pub fn labeled(&self) -> &BTreeMap<usize, Label> {
        &self.labeled
    }

    /// Unlabeled ids, ascending.
    pub fn unlabeled_ids(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn predicted_labels(&self) -> &[Label] {
        &self.predicted
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_unlabeled(&self, id: usize) -> bool {
        self.unlabeled.binary_search(&id).is_ok()
    }

    pub fn set_predictions(&mut self, predicted: Vec<Label>) -> Result<()> {
        if predicted.len() != self.unlabeled.len() {
            return Err(Error::DimensionMismatch { expected: self.unlabeled.len(), got: predicted.len() });
        }
        self.predicted = predicted;
        Ok(())
    }

    /// Moves the given ids to the labeled set and advances the iteration.
    /// Either every id is applied or none is.
    pub fn apply_labels(&mut self, labels: &[(usize, Label)]) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &(id, _) in labels {
            if !self.is_unlabeled(id) {
                return Err(Error::UnknownId(id));
            }
            if !seen.insert(id) {
                return Err(Error::AlreadyInSet(id));
            }
        }
        let keep: Vec<bool> = self.unlabeled.iter().map(|i| !seen.contains(i)).collect();
        if self.predicted.len() == self.unlabeled.len() {
            self.predicted = self.predicted.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
        }
        self.unlabeled = self.unlabeled.iter().zip(&keep).filter(|(_, &k)| k).map(|(i, _)| *i).collect();
        self.labeled.extend(labels.iter().copied());
        self.iteration += 1;
        Ok(())
    }

    /// Features of the labeled set (ascending id) and their labels.
    pub fn labeled_data(&self) -> (Array2<f64>, Vec<Label>) {
        let ids = self.labeled_ids();
        (self.features.select(ndarray::Axis(0), &ids), self.labeled.values().copied().collect())
    }

    pub fn unlabeled_features(&self) -> Array2<f64> {
        self.features.select(ndarray::Axis(0), &self.unlabeled)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub positive_ids: Vec<usize>,
    pub negative_ids: Vec<usize>,
    pub positive_labeled_ids: Vec<usize>,
    pub negative_labeled_ids: Vec<usize>,
}

impl ClassPartition {
    fn class(&self, label: Label) -> (&[usize], &[usize]) {
        match label {
            Label::Positive => (&self.positive_ids, &self.positive_labeled_ids),
            Label::Negative => (&self.negative_ids, &self.negative_labeled_ids),
        }
    }
}

/// Labeled examples go by their label, unlabeled ones by prediction.
pub fn partition_by_class(pool: &PoolState) -> Result<ClassPartition> {
    if pool.predicted.len() != pool.unlabeled.len() {
        return Err(Error::InvalidParameter("predictions are missing for the unlabeled pool".into()));
    }
    let mut part = ClassPartition::default();
    let labeled = pool.labeled.iter().map(|(&i, &l)| (i, l, true));
    let unlabeled = pool.unlabeled.iter().zip(&pool.predicted).map(|(&i, &l)| (i, l, false));
    let mut all: Vec<(usize, Label, bool)> = labeled.chain(unlabeled).collect();
    all.sort_unstable_by_key(|t| t.0);
    for (id, label, is_labeled) in all {
        let (ids, lab) = match label {
            Label::Positive => (&mut part.positive_ids, &mut part.positive_labeled_ids),
            Label::Negative => (&mut part.negative_ids, &mut part.negative_labeled_ids),
        };
        ids.push(id);
        if is_labeled {
            lab.push(id);
        }
    }
    Ok(part)
}

/// The kernel used for leverage: never min-max rescaled, since rescaling
/// can break positive semidefiniteness.
fn leverage_spec(spec: &KernelSpec) -> KernelSpec {
    spec.with_normalize(false)
}

fn class_leverage(pool: &PoolState, ids: &[usize], spec: &KernelSpec, tau: f64) -> Result<LeverageProfile> {
    let km = kernel_matrix_for(&pool.features, ids, &leverage_spec(spec))?;
    leverage_scores(&km.entries, tau)
}

/// Per-class scaled leverage of every unlabeled id, pooled over both classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledScores {
    pub partition: ClassPartition,
    /// `(id, scaled score)` for unlabeled ids, ascending id.
    pub scores: Vec<(usize, f64)>,
}

pub fn alevs_scores(pool: &PoolState, spec: &KernelSpec, tau: f64) -> Result<PooledScores> {
    let partition = partition_by_class(pool)?;
    let scores = pooled_scores(pool, &partition, spec, tau)?;
    Ok(PooledScores { partition, scores })
}

fn pooled_scores(pool: &PoolState, partition: &ClassPartition, spec: &KernelSpec, tau: f64) -> Result<Vec<(usize, f64)>> {
    let mut scores = Vec::with_capacity(pool.unlabeled.len());
    let mut last_err = None;
    for label in [Label::Positive, Label::Negative] {
        let (ids, _) = partition.class(label);
        if ids.is_empty() || ids.iter().all(|&i| pool.labeled.contains_key(&i)) {
            continue;
        }
        match class_leverage(pool, ids, spec, tau) {
            Ok(profile) => {
                for (&id, &s) in ids.iter().zip(&profile.scaled) {
                    if !pool.labeled.contains_key(&id) {
                        scores.push((id, s));
                    }
                }
            }
            // A class whose kernel has no spectrum offers no ranking; the
            // other class still can.
            Err(e @ Error::DegenerateSpectrum) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    if scores.is_empty() {
        return Err(last_err.unwrap_or(Error::Empty("no unlabeled examples")));
    }
    scores.sort_unstable_by_key(|s| s.0);
    Ok(scores)
}

/// Highest score with a relative tie tolerance; ties go to the lowest id.
fn argmax_with_ties(scores: &[(usize, f64)]) -> usize {
    let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let floor = max - ALEVS_TIE_RTOL * max.abs().max(1.0);
    scores.iter().filter(|s| s.1 >= floor).map(|s| s.0).min().expect("scores are non-empty")
}

/// The unlabeled id with the largest scaled leverage in its class matrix.
pub fn alevs_select(pool: &PoolState, spec: &KernelSpec, tau: f64) -> Result<usize> {
    Ok(argmax_with_ties(&alevs_scores(pool, spec, tau)?.scores))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<usize>,
    /// Fewer ids than requested were available.
    pub short: bool,
    /// One class ran out of candidates and the other filled in.
    pub refilled: bool,
}

/// Diversity-aware batch: `⌊b/2⌋` from the positive class and the rest
/// from the negative class, each chosen by greedy maximization of the set
/// function seeded with that class's labeled examples.
pub fn dbalevs_select(pool: &PoolState, spec: &KernelSpec, tau: f64, alpha: f64, b: usize) -> Result<Selection> {
    if b == 0 {
        return Ok(Selection::default());
    }
    let partition = partition_by_class(pool)?;
    let candidates = |label| {
        let (ids, labeled) = partition.class(label);
        ids.len() - labeled.len()
    };
    let (avail_pos, avail_neg) = (candidates(Label::Positive), candidates(Label::Negative));
    let (half_pos, half_neg) = (b / 2, b - b / 2);
    let mut take_pos = half_pos.min(avail_pos);
    let mut take_neg = half_neg.min(avail_neg);
    let (spare_pos, spare_neg) = (half_pos - take_pos, half_neg - take_neg);
    take_neg = (take_neg + spare_pos).min(avail_neg);
    take_pos = (take_pos + spare_neg).min(avail_pos);
    let refilled = take_pos > half_pos || take_neg > half_neg;

    let mut ids = Vec::with_capacity(b);
    for (label, take) in [(Label::Positive, take_pos), (Label::Negative, take_neg)] {
        if take == 0 {
            continue;
        }
        let (class_ids, labeled) = partition.class(label);
        ids.extend(class_batch(pool, class_ids, labeled, spec, tau, alpha, take)?);
    }
    Ok(Selection { short: ids.len() < b, ids, refilled })
}

fn class_batch(
    pool: &PoolState,
    class_ids: &[usize],
    labeled: &[usize],
    spec: &KernelSpec,
    tau: f64,
    alpha: f64,
    take: usize,
) -> Result<Vec<usize>> {
    let km = kernel_matrix_for(&pool.features, class_ids, &leverage_spec(spec))?;
    let profile = leverage_scores(&km.entries, tau)?;
    let similarity = match spec.kind {
        KernelKind::Rbf => km.entries,
        _ => km.scaled_to_unit().entries,
    };
    let leverage = profile.unscaled.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    // Positions of ids within the class list.
    let local = |id: &usize| class_ids.binary_search(id).expect("labeled ids belong to their class");
    let initial: Vec<usize> = labeled.iter().map(local).collect();
    let ctx = SetScoreContext::new(leverage, similarity, alpha, initial.len() + take)?;
    let out = greedy_maximize(&ctx, &initial, take, None)?;
    Ok(out.selected.into_iter().map(|p| class_ids[p]).collect())
}

/// `count` unlabeled ids drawn uniformly without replacement, ascending.
pub fn random_select(pool: &PoolState, rng: &mut ChaCha8Rng, count: usize) -> Result<Selection> {
    let n = pool.unlabeled.len();
    if n == 0 {
        return Err(Error::Empty("no unlabeled examples"));
    }
    let take = count.min(n);
    let mut ids: Vec<usize> = rand::seq::index::sample(rng, n, take).into_iter().map(|p| pool.unlabeled[p]).collect();
    ids.sort_unstable();
    Ok(Selection { ids, short: take < count, refilled: false })
}

/// Top `count` ids by descending score; exact ties go to the lowest id.
fn top_by_score(mut scored: Vec<(usize, f64)>, count: usize) -> Selection {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let take = count.min(scored.len());
    Selection { ids: scored[..take].iter().map(|s| s.0).collect(), short: take < count, refilled: false }
}

/// The `count` unlabeled ids with the largest `1 - max(p, 1 - p)`.
pub fn uncertainty_select(
    pool: &PoolState,
    model: &Predictor,
    calibration: Option<&PlattCalibration>,
    count: usize,
) -> Result<Selection> {
    let cal = calibration.ok_or_else(|| Error::InvalidParameter("uncertainty sampling needs a calibration".into()))?;
    let p = posterior(model, cal, pool.unlabeled_features().view())?;
    Ok(top_by_score(pool.unlabeled.iter().copied().zip(p.into_iter().map(uncertainty)).collect(), count))
}

/// Class-agnostic leverage over the whole pool, computed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolLeverage {
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn pool_leverage(pool: &PoolState, spec: &KernelSpec, tau: f64) -> Result<PoolLeverage> {
    let mut ids = pool.labeled_ids();
    ids.extend_from_slice(&pool.unlabeled);
    ids.sort_unstable();
    let profile = class_leverage(pool, &ids, spec, tau)?;
    Ok(PoolLeverage { ids, scores: profile.scaled })
}

/// Top `count` unlabeled ids by the cached pool leverage.
pub fn lev_on_all_select(pool: &PoolState, profile: &PoolLeverage, count: usize) -> Selection {
    let scored = profile.ids.iter().zip(&profile.scores).filter(|(i, _)| pool.is_unlabeled(**i)).map(|(&i, &s)| (i, s)).collect();
    top_by_score(scored, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Alevs,
    Dbalevs,
    Random,
    Uncertainty,
    LevOnAll,
    TopLev,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Alevs,
        StrategyKind::Dbalevs,
        StrategyKind::Random,
        StrategyKind::Uncertainty,
        StrategyKind::LevOnAll,
        StrategyKind::TopLev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Alevs => "alevs",
            StrategyKind::Dbalevs => "dbalevs",
            StrategyKind::Random => "random",
            StrategyKind::Uncertainty => "uncertainty",
            StrategyKind::LevOnAll => "lev-on-all",
            StrategyKind::TopLev => "top-lev",
        }
    }

    /// Ids requested per iteration for a configured batch size.
    pub fn query_count(self, batch_size: usize) -> usize {
        match self {
            StrategyKind::Alevs | StrategyKind::LevOnAll => 1,
            _ => batch_size.max(1),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub kernel: KernelSpec,
    pub tau: f64,
    pub alpha: f64,
    pub batch_size: usize,
    /// Reuse ALEVS class profiles while the class partition is unchanged.
    pub cache_profiles: bool,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, kernel: KernelSpec) -> Self {
        StrategyConfig { kind, kernel, tau: 0.75, alpha: 0.5, batch_size: 10, cache_profiles: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn query_count(&self) -> usize {
        self.kind.query_count(self.batch_size)
    }
}

/// A strategy together with the state it carries across iterations.
#[derive(Debug, Clone)]
pub struct Selector {
    pub config: StrategyConfig,
    rng: ChaCha8Rng,
    pool_profile: Option<PoolLeverage>,
    class_cache: Option<(ClassPartitionKey, Vec<(usize, f64)>)>,
}

type ClassPartitionKey = (Vec<usize>, Vec<usize>);

impl Selector {
    pub fn new(config: StrategyConfig, seed: u64) -> Result<Selector> {
        config.validate()?;
        Ok(Selector { config, rng: ChaCha8Rng::seed_from_u64(seed), pool_profile: None, class_cache: None })
    }

    /// Picks up to `limit` ids (capped by the strategy's per-iteration count).
    pub fn select(
        &mut self,
        pool: &PoolState,
        model: &Predictor,
        calibration: Option<&PlattCalibration>,
        limit: usize,
    ) -> Result<Selection> {
        let c = self.config;
        let count = c.query_count().min(limit);
        if count == 0 {
            return Ok(Selection::default());
        }
        match c.kind {
            StrategyKind::Alevs => {
                let scores = if c.cache_profiles { self.cached_alevs_scores(pool)? } else { alevs_scores(pool, &c.kernel, c.tau)?.scores };
                Ok(Selection { ids: vec![argmax_with_ties(&scores)], short: false, refilled: false })
            }
            StrategyKind::Dbalevs => dbalevs_select(pool, &c.kernel, c.tau, c.alpha, count),
            StrategyKind::Random => random_select(pool, &mut self.rng, count),
            StrategyKind::Uncertainty => uncertainty_select(pool, model, calibration, count),
            StrategyKind::LevOnAll | StrategyKind::TopLev => {
                if self.pool_profile.is_none() {
                    self.pool_profile = Some(pool_leverage(pool, &c.kernel, c.tau)?);
                }
                Ok(lev_on_all_select(pool, self.pool_profile.as_ref().expect("just set"), count))
            }
        }
    }

    fn cached_alevs_scores(&mut self, pool: &PoolState) -> Result<Vec<(usize, f64)>> {
        let partition = partition_by_class(pool)?;
        let key = (partition.positive_ids.clone(), partition.negative_ids.clone());
        if let Some((cached_key, scores)) = &self.class_cache {
            if *cached_key == key {
                return Ok(scores.iter().copied().filter(|s| pool.is_unlabeled(s.0)).collect());
            }
        }
        let scores = pooled_scores(pool, &partition, &self.config.kernel, self.config.tau)?;
        self.class_cache = Some((key, scores.clone()));
        Ok(scores)
    }
}
