//! One human-driven labeling session on top of the core learner.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use alevs_core::data::{self, Dataset, Label, SplitPlan};
use alevs_core::harness::{queried_class_ratio, Learner, LearnerConfig, TestSet, TrialRecord};
use alevs_core::linalg::top_eigenpairs;
use alevs_core::{Error, Result};
use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::api::{
    CreateSession, InitialLabels, InitialMode, LabelEntry, MetricsResponse, Phase, PoolPoint, PoolResponse, QueryItem,
    QueryResponse, Raster,
};

#[derive(Debug)]
enum State {
    Bootstrap { pending: Vec<usize>, collected: BTreeMap<usize, Label>, rng: ChaCha8Rng },
    Active(Box<Learner>),
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    dataset: Arc<Dataset>,
    features: Arc<Array2<f64>>,
    config: LearnerConfig,
    seed: u64,
    budget: Option<usize>,
    initial_count: usize,
    split: SplitPlan,
    initial_per_class: usize,
    image_like: bool,
    projection: Option<Array2<f64>>,
    state: State,
    created_at: f64,
    updated_at: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Coordinates on the two leading principal components. Low-dimensional
/// data is passed through (padded with zeros).
pub fn pca_2d(x: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, 2));
    if d <= 2 {
        out.slice_mut(ndarray::s![.., ..d]).assign(x);
        return Ok(out);
    }
    let mean = x.mean_axis(Axis(0)).ok_or(Error::Empty("no rows to project"))?;
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
    // symmetrize away rounding so the eigensolver accepts it
    let cov = (&cov + &cov.t()) / 2.0;
    let eig = top_eigenpairs(&cov, 2)?;
    Ok(centered.dot(&eig.eigenvectors))
}

pub fn raster(features: &[f64]) -> Option<Raster> {
    let side = (features.len() as f64).sqrt().round() as usize;
    if side == 0 || side * side != features.len() {
        return None;
    }
    let lo = features.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = features.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = features.iter().map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect();
    Some(Raster { width: side, height: side, pixels })
}

impl Session {
    pub fn create(id: String, req: &CreateSession) -> Result<Session> {
        let experiment = req.experiment();
        let kinds = experiment.strategies()?;
        if kinds.len() != 1 {
            return Err(Error::InvalidParameter("a session runs exactly one strategy".into()));
        }
        let dataset = experiment.load_dataset()?;
        let config = experiment.learner_config(kinds[0], &dataset)?;
        let split = data::make_split(&dataset, req.test_fraction, req.initial_per_class, req.seed)?;
        let projection = if req.projection { Some(pca_2d(&dataset.features)?) } else { None };
        let features = Arc::new(dataset.features.clone());
        let mut session = Session {
            id,
            dataset: Arc::new(dataset),
            features,
            config,
            seed: req.seed,
            budget: req.budget,
            initial_count: 0,
            split,
            initial_per_class: req.initial_per_class,
            image_like: req.image_like,
            projection,
            state: State::Bootstrap { pending: Vec::new(), collected: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(req.seed) },
            created_at: now(),
            updated_at: now(),
        };
        match &req.initial_labels {
            InitialLabels::Mode(InitialMode::Dataset) => {
                let initial: Vec<(usize, Label)> =
                    session.split.initial_labeled_ids.iter().map(|&i| (i, session.dataset.labels[i])).collect();
                session.start(&initial)?;
            }
            InitialLabels::Explicit(entries) => {
                let initial: Vec<(usize, Label)> = entries.iter().map(|e| (e.id, e.label)).collect();
                session.start(&initial)?;
            }
            InitialLabels::Mode(InitialMode::Ask) => session.ask_more()?,
        }
        Ok(session)
    }

    fn start(&mut self, initial: &[(usize, Label)]) -> Result<()> {
        let test = TestSet::from_ids(&self.dataset, &self.split.test_ids)?;
        let learner = Learner::new(self.features.clone(), &self.split.train_ids, initial, test, self.config, self.seed)?;
        self.initial_count = initial.len();
        self.state = State::Active(Box::new(learner));
        self.advance()
    }

    /// Bootstrap: draws the next random batch of ids for the human to label.
    fn ask_more(&mut self) -> Result<()> {
        let want = 2 * self.initial_per_class.max(1);
        let State::Bootstrap { pending, collected, rng } = &mut self.state else {
            return Ok(());
        };
        let left: Vec<usize> = self.split.train_ids.iter().copied().filter(|i| !collected.contains_key(i)).collect();
        if left.is_empty() {
            return Err(Error::Empty("no unlabeled pool examples left for the initial set"));
        }
        let mut picked: Vec<usize> = sample(rng, left.len(), want.min(left.len())).into_iter().map(|j| left[j]).collect();
        picked.sort_unstable();
        *pending = picked;
        Ok(())
    }

    /// Computes the next query for an active session.
    fn advance(&mut self) -> Result<()> {
        let remaining = self.remaining_budget();
        if let State::Active(learner) = &mut self.state {
            learner.propose(remaining.unwrap_or(usize::MAX))?;
        }
        Ok(())
    }

    pub fn remaining_budget(&self) -> Option<usize> {
        let spent = match &self.state {
            State::Active(l) => l.pool().labeled_count() - self.initial_count,
            State::Bootstrap { .. } => 0,
        };
        self.budget.map(|b| b.saturating_sub(spent))
    }

    pub fn phase(&self) -> Phase {
        match &self.state {
            State::Bootstrap { .. } => Phase::Bootstrap,
            State::Active(l) if l.pending().is_none() => Phase::Done,
            State::Active(_) => Phase::Active,
        }
    }

    pub fn pending(&self) -> &[usize] {
        match &self.state {
            State::Bootstrap { pending, .. } => pending,
            State::Active(l) => l.pending().unwrap_or(&[]),
        }
    }

    pub fn learner(&self) -> Option<&Learner> {
        match &self.state {
            State::Active(l) => Some(l),
            State::Bootstrap { .. } => None,
        }
    }

    /// All-or-nothing: labels must cover exactly the pending ids.
    pub fn submit(&mut self, labels: &[LabelEntry]) -> Result<()> {
        let pairs: Vec<(usize, Label)> = labels.iter().map(|e| (e.id, e.label)).collect();
        match &mut self.state {
            State::Active(learner) => learner.submit(&pairs)?,
            State::Bootstrap { pending, collected, .. } => {
                check_exact(pending, &pairs)?;
                collected.extend(pairs.iter().copied());
                pending.clear();
                let pos = collected.values().filter(|l| l.is_positive()).count();
                let neg = collected.len() - pos;
                let exhausted = collected.len() == self.split.train_ids.len();
                let k = self.initial_per_class.max(1);
                if (pos >= k && neg >= k) || exhausted {
                    let initial: Vec<(usize, Label)> = collected.iter().map(|(&i, &l)| (i, l)).collect();
                    self.updated_at = now();
                    return self.start(&initial);
                }
                self.ask_more()?;
            }
        }
        self.updated_at = now();
        self.advance()
    }

    fn item(&self, id: usize) -> QueryItem {
        let features: Vec<f64> = self.features.row(id).to_vec();
        QueryItem {
            id,
            projection: self.projection.as_ref().map(|p| [p[[id, 0]], p[[id, 1]]]),
            raster: if self.image_like { raster(&features) } else { None },
            features,
        }
    }

    pub fn query(&self) -> QueryResponse {
        let ids = self.pending().to_vec();
        let (iteration, n_labeled) = match &self.state {
            State::Active(l) => (l.pool().iteration, l.pool().labeled_count()),
            State::Bootstrap { collected, .. } => (0, collected.len()),
        };
        QueryResponse {
            session: self.id.clone(),
            phase: self.phase(),
            iteration,
            n_labeled,
            remaining_budget: self.remaining_budget(),
            items: ids.iter().map(|&i| self.item(i)).collect(),
            ids,
        }
    }

    pub fn record(&self) -> TrialRecord {
        TrialRecord {
            strategy: self.config.strategy.kind.name().to_string(),
            trial: 0,
            seed: self.seed,
            rows: self.learner().map(|l| l.rows().to_vec()).unwrap_or_default(),
        }
    }

    pub fn metrics(&self) -> MetricsResponse {
        let record = self.record();
        let (n_labeled, n_unlabeled) = match &self.state {
            State::Active(l) => (l.pool().labeled_count(), l.pool().unlabeled_ids().len()),
            State::Bootstrap { collected, .. } => (collected.len(), self.split.train_ids.len() - collected.len()),
        };
        MetricsResponse {
            session: self.id.clone(),
            strategy: record.strategy.clone(),
            seed: self.seed,
            phase: self.phase(),
            queried_ratio: queried_class_ratio(&record),
            rows: record.rows,
            n_labeled,
            n_unlabeled,
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }

    pub fn pool(&self) -> PoolResponse {
        let known: BTreeMap<usize, Label> = match &self.state {
            State::Active(l) => l.pool().labeled().clone(),
            State::Bootstrap { collected, .. } => collected.clone(),
        };
        let points = self
            .split
            .train_ids
            .iter()
            .map(|&id| PoolPoint {
                id,
                projection: self.projection.as_ref().map(|p| [p[[id, 0]], p[[id, 1]]]),
                label: known.get(&id).copied(),
            })
            .collect();
        PoolResponse { session: self.id.clone(), points }
    }
}

fn check_exact(pending: &[usize], pairs: &[(usize, Label)]) -> Result<()> {
    if pending.is_empty() {
        return Err(Error::NoPendingQuery);
    }
    let mut seen = Vec::with_capacity(pairs.len());
    for &(id, _) in pairs {
        if !pending.contains(&id) {
            return Err(Error::NotPending(id));
        }
        if seen.contains(&id) {
            return Err(Error::AlreadyInSet(id));
        }
        seen.push(id);
    }
    if seen.len() != pending.len() {
        return Err(Error::IncompleteBatch { expected: pending.len(), got: seen.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn request() -> CreateSession {
        CreateSession { n: 80, dim: 4, gamma: alevs_core::harness::GammaSetting::Fixed(0.2), ..Default::default() }
    }

    #[test]
    fn raster_only_for_square_dims() {
        let r = raster(&[0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!((r.width, r.height), (2, 2));
        assert_eq!(r.pixels, vec![0.0, 0.25, 0.5, 1.0]);
        assert!(raster(&[0.0; 20]).is_none());
        assert_eq!(raster(&[3.0; 9]).unwrap().pixels, vec![0.0; 9]);
        assert_eq!(raster(&vec![0.5; 784]).unwrap().width, 28);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        // spread along (1, 1, 0), tiny elsewhere
        let x = array![[-2.0, -2.0, 0.01], [-1.0, -1.0, -0.01], [1.0, 1.0, 0.0], [2.0, 2.0, 0.0]];
        let p = pca_2d(&x).unwrap();
        let first: Vec<f64> = p.column(0).to_vec();
        let want = [-2.0, -1.0, 1.0, 2.0].map(|v: f64| v * 2f64.sqrt());
        for (a, b) in first.iter().zip(want) {
            assert!((a.abs() - b.abs()).abs() < 1e-3);
        }
        assert!(p.column(1).iter().all(|v| v.abs() < 0.02));
        let flat = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(pca_2d(&flat).unwrap(), flat);
    }

    #[test]
    fn ask_mode_collects_both_classes_first() {
        let req = CreateSession { initial_labels: InitialLabels::Mode(InitialMode::Ask), ..request() };
        let mut s = Session::create("s".into(), &req).unwrap();
        assert_eq!(s.phase(), Phase::Bootstrap);
        assert_eq!(s.pending().len(), 4);
        // answer everything positive: still bootstrapping
        let all_pos: Vec<LabelEntry> = s.pending().iter().map(|&id| LabelEntry { id, label: Label::Positive }).collect();
        s.submit(&all_pos).unwrap();
        assert_eq!(s.phase(), Phase::Bootstrap);
        let mixed: Vec<LabelEntry> = s.pending().iter().map(|&id| LabelEntry { id, label: Label::Negative }).collect();
        s.submit(&mixed).unwrap();
        assert_eq!(s.phase(), Phase::Active);
        assert_eq!(s.learner().unwrap().pool().labeled_count(), 8);
        assert_eq!(s.pending().len(), 1);
    }

    #[test]
    fn budget_ends_session() {
        let req = CreateSession { budget: Some(2), ..request() };
        let mut s = Session::create("s".into(), &req).unwrap();
        for _ in 0..2 {
            let ids = s.pending().to_vec();
            let answers: Vec<LabelEntry> = ids.iter().map(|&id| LabelEntry { id, label: s.dataset.labels[id] }).collect();
            s.submit(&answers).unwrap();
        }
        assert_eq!(s.phase(), Phase::Done);
        assert_eq!(s.remaining_budget(), Some(0));
        assert!(matches!(s.submit(&[]), Err(Error::NoPendingQuery)));
        assert_eq!(s.metrics().rows.len(), 3);
    }

    #[test]
    fn explicit_initial_labels() {
        let base = Session::create("a".into(), &request()).unwrap();
        let pos = *base.split.train_ids.iter().find(|&&i| base.dataset.labels[i].is_positive()).unwrap();
        let neg = *base.split.train_ids.iter().find(|&&i| !base.dataset.labels[i].is_positive()).unwrap();
        let req = CreateSession {
            initial_labels: InitialLabels::Explicit(vec![
                LabelEntry { id: pos, label: Label::Positive },
                LabelEntry { id: neg, label: Label::Negative },
            ]),
            ..request()
        };
        let s = Session::create("b".into(), &req).unwrap();
        assert_eq!(s.metrics().n_labeled, 2);
        let bad = CreateSession { initial_labels: InitialLabels::Explicit(vec![LabelEntry { id: 10_000, label: Label::Positive }]), ..request() };
        assert!(Session::create("c".into(), &bad).is_err());
    }
}
