//! The diversity-penalized leverage set function and its greedy maximizer.
//!
//! `F(S) = Σ_{i∈S} (ℓ_i + 1) - (α/M) Σ_{{i,j}⊆S} K(i,j)`, where the pair sum
//! runs over unordered pairs. Adding `x` to `S` therefore gains
//! `ℓ_x + 1 - (α/M) Σ_{i∈S} K(x,i)`, which shrinks as `S` grows (the
//! function is submodular) and stays positive while `|S| < M`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 - 1/e`, the greedy approximation factor.
pub const GREEDY_BOUND: f64 = 1.0 - 1.0 / std::f64::consts::E;

/// Slack allowed when comparing set-function values.
const VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetScoreContext {
    /// Unscaled leverage over the ground set, each in `[0, 1]`.
    pub leverage: Vec<f64>,
    /// Similarities over the ground set, each in `[0, 1]`.
    pub kernel: Array2<f64>,
    pub alpha: f64,
    pub cardinality_cap: usize,
}

impl SetScoreContext {
    pub fn new(leverage: Vec<f64>, kernel: Array2<f64>, alpha: f64, cardinality_cap: usize) -> Result<Self> {
        let ctx = SetScoreContext { leverage, kernel, alpha, cardinality_cap };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.leverage.len();
        if self.kernel.dim() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: self.kernel.nrows() });
        }
        if let Some(v) = self.leverage.iter().find(|v| !(0.0..=1.0 + 1e-12).contains(*v)) {
            return Err(Error::InvalidParameter(format!("leverage {v} outside [0, 1]")));
        }
        if let Some(v) = self.kernel.iter().find(|v| !(0.0..=1.0 + 1e-12).contains(*v)) {
            return Err(Error::InvalidParameter(format!("kernel entry {v} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.cardinality_cap == 0 {
            return Err(Error::InvalidParameter("cardinality cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.leverage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leverage.is_empty()
    }

    fn check_member(&self, x: usize) -> Result<()> {
        if x >= self.len() {
            return Err(Error::OutOfRange { index: x, len: self.len() });
        }
        Ok(())
    }

    /// Gain without validation; sums `K(x, i)` in the order of `set`.
    fn raw_gain(&self, set: &[usize], x: usize) -> f64 {
        let mut penalty = 0.0;
        for &i in set {
            penalty += self.kernel[[x, i]];
        }
        self.leverage[x] + 1.0 - self.alpha / self.cardinality_cap as f64 * penalty
    }
}

fn check_distinct(set: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    for &i in set {
        if i >= len {
            return Err(Error::OutOfRange { index: i, len });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::AlreadyInSet(i));
        }
    }
    Ok(())
}

pub fn score(ctx: &SetScoreContext, set: &[usize]) -> Result<f64> {
    if set.len() > ctx.cardinality_cap {
        return Err(Error::CapExceeded { size: set.len(), cap: ctx.cardinality_cap });
    }
    check_distinct(set, ctx.len())?;
    let mut modular = 0.0;
    let mut pairs = 0.0;
    for (a, &i) in set.iter().enumerate() {
        modular += ctx.leverage[i] + 1.0;
        for &j in &set[a + 1..] {
            pairs += ctx.kernel[[i, j]];
        }
    }
    Ok(modular - ctx.alpha / ctx.cardinality_cap as f64 * pairs)
}

pub fn marginal_gain(ctx: &SetScoreContext, set: &[usize], x: usize) -> Result<f64> {
    ctx.check_member(x)?;
    check_distinct(set, ctx.len())?;
    if set.contains(&x) {
        return Err(Error::AlreadyInSet(x));
    }
    if set.len() + 1 > ctx.cardinality_cap {
        return Err(Error::CapExceeded { size: set.len() + 1, cap: ctx.cardinality_cap });
    }
    Ok(ctx.raw_gain(set, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    /// Added elements in selection order (the initial set excluded).
    pub selected: Vec<usize>,
    /// Marginal gain of each selected element at the time it was added.
    pub gains: Vec<f64>,
    /// Fewer candidates than the budget were available.
    pub short: bool,
}

fn greedy_setup(ctx: &SetScoreContext, initial: &[usize], budget: usize, candidates: Option<&[usize]>) -> Result<Vec<usize>> {
    check_distinct(initial, ctx.len())?;
    if initial.len() + budget > ctx.cardinality_cap {
        return Err(Error::CapExceeded { size: initial.len() + budget, cap: ctx.cardinality_cap });
    }
    let mut in_initial = vec![false; ctx.len()];
    for &i in initial {
        in_initial[i] = true;
    }
    let pool: Vec<usize> = match candidates {
        Some(c) => {
            check_distinct(c, ctx.len())?;
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        }
        None => (0..ctx.len()).collect(),
    };
    Ok(pool.into_iter().filter(|&i| !in_initial[i]).collect())
}

/// Greedy maximization of `F` from the initial set `initial`, adding up
/// to `budget` elements drawn from `candidates` (default: everything
/// outside `initial`). Ties go to the lowest index.
///
/// Uses lazy evaluation: stale gains are upper bounds by submodularity,
/// and each gain is recomputed as a full sum over the current set, so the
/// result is identical to [`greedy_maximize_naive`].
pub fn greedy_maximize(
    ctx: &SetScoreContext,
    initial: &[usize],
    budget: usize,
    candidates: Option<&[usize]>,
) -> Result<GreedyOutcome> {
    let pool = greedy_setup(ctx, initial, budget, candidates)?;
    let take = budget.min(pool.len());
    let mut set = initial.to_vec();
    let mut heap: BinaryHeap<Entry> = pool.iter().map(|&i| Entry { gain: ctx.raw_gain(&set, i), index: i, round: 0 }).collect();
    let mut out = GreedyOutcome { selected: Vec::with_capacity(take), gains: Vec::with_capacity(take), short: take < budget };
    while out.selected.len() < take {
        let top = heap.pop().expect("heap holds every remaining candidate");
        let round = out.selected.len();
        if top.round == round {
            set.push(top.index);
            out.selected.push(top.index);
            out.gains.push(top.gain);
        } else {
            heap.push(Entry { gain: ctx.raw_gain(&set, top.index), index: top.index, round });
        }
    }
    Ok(out)
}

/// Reference greedy that re-evaluates every candidate each round.
pub fn greedy_maximize_naive(
    ctx: &SetScoreContext,
    initial: &[usize],
    budget: usize,
    candidates: Option<&[usize]>,
) -> Result<GreedyOutcome> {
    let mut pool = greedy_setup(ctx, initial, budget, candidates)?;
    let take = budget.min(pool.len());
    let mut set = initial.to_vec();
    let mut out = GreedyOutcome { selected: Vec::new(), gains: Vec::new(), short: take < budget };
    for _ in 0..take {
        let mut best = 0;
        let mut best_gain = f64::NEG_INFINITY;
        for (p, &i) in pool.iter().enumerate() {
            let g = ctx.raw_gain(&set, i);
            if g > best_gain {
                best_gain = g;
                best = p;
            }
        }
        let i = pool.remove(best);
        set.push(i);
        out.selected.push(i);
        out.gains.push(best_gain);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    gain: f64,
    index: usize,
    /// Set size at which `gain` was computed.
    round: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Larger gain first, then lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.index.cmp(&self.index))
    }
}

// ---------------------------------------------------------------------------
// Property checks

/// Draws a context with `size` elements: leverage and off-diagonal
/// similarities uniform in `[0, 1]`, unit diagonal, α uniform in `[0, 1]`.
pub fn random_context(rng: &mut impl Rng, size: usize, cap: usize) -> SetScoreContext {
    let leverage = (0..size).map(|_| rng.random::<f64>()).collect();
    let mut kernel = Array2::eye(size);
    for i in 0..size {
        for j in i + 1..size {
            let v = rng.random::<f64>();
            kernel[[i, j]] = v;
            kernel[[j, i]] = v;
        }
    }
    SetScoreContext { leverage, kernel, alpha: rng.random::<f64>(), cardinality_cap: cap.max(1) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    Submodularity,
    Monotonicity,
    NonNegativity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub property: Property,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub x: usize,
    /// The two compared quantities (gain or value at A, then at B).
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub trials: usize,
    pub submodularity_violations: usize,
    pub monotonicity_violations: usize,
    pub nonnegativity_violations: usize,
    /// The first few counterexamples, verbatim.
    pub counterexamples: Vec<Counterexample>,
}

impl PropertyReport {
    pub fn violations(&self) -> usize {
        self.submodularity_violations + self.monotonicity_violations + self.nonnegativity_violations
    }

    pub fn merge(&mut self, other: PropertyReport) {
        self.trials += other.trials;
        self.submodularity_violations += other.submodularity_violations;
        self.monotonicity_violations += other.monotonicity_violations;
        self.nonnegativity_violations += other.nonnegativity_violations;
        let room = MAX_COUNTEREXAMPLES.saturating_sub(self.counterexamples.len());
        self.counterexamples.extend(other.counterexamples.into_iter().take(room));
    }
}

const MAX_COUNTEREXAMPLES: usize = 16;

/// Samples `trials` triples `A ⊆ B ⊆ V`, `x ∉ B` with `|B ∪ {x}| ≤ M` and
/// checks diminishing gains, `F(A) ≤ F(B)` and `F(A) ≥ 0`. The context is
/// not validated, so corrupted contexts can be probed.
pub fn verify_properties(ctx: &SetScoreContext, trials: usize, seed: u64) -> PropertyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropertyReport::default();
    let n = ctx.len();
    let max_b = ctx.cardinality_cap.min(n).saturating_sub(1);
    if n == 0 {
        return report;
    }
    let mut ids: Vec<usize> = (0..n).collect();
    for _ in 0..trials {
        report.trials += 1;
        ids.shuffle(&mut rng);
        let b_len = rng.random_range(0..=max_b);
        let a_len = rng.random_range(0..=b_len);
        let b = &ids[..b_len];
        let a = &ids[..a_len];
        let x = ids[b_len];

        let record = |property, lhs: f64, rhs: f64, report: &mut PropertyReport| {
            if report.counterexamples.len() < MAX_COUNTEREXAMPLES {
                report.counterexamples.push(Counterexample { property, a: a.to_vec(), b: b.to_vec(), x, lhs, rhs });
            }
        };
        let (ga, gb) = (ctx.raw_gain(a, x), ctx.raw_gain(b, x));
        if ga < gb - VALUE_TOL {
            report.submodularity_violations += 1;
            record(Property::Submodularity, ga, gb, &mut report);
        }
        let fa = score(ctx, a).expect("sampled sets respect the cap");
        let fb = score(ctx, b).expect("sampled sets respect the cap");
        let fbx = fb + gb;
        if fa > fb + VALUE_TOL || fb > fbx + VALUE_TOL {
            report.monotonicity_violations += 1;
            if fa > fb + VALUE_TOL {
                record(Property::Monotonicity, fa, fb, &mut report);
            } else {
                record(Property::Monotonicity, fb, fbx, &mut report);
            }
        }
        if fa < -VALUE_TOL || fb < -VALUE_TOL {
            report.nonnegativity_violations += 1;
            record(Property::NonNegativity, fa, fb, &mut report);
        }
    }
    report
}

/// Runs [`verify_properties`] on `instances` fresh random contexts with
/// ground sets of 1 to `max_size` elements.
pub fn verify_random_properties(instances: usize, max_size: usize, seed: u64) -> PropertyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropertyReport::default();
    for _ in 0..instances {
        let size = rng.random_range(1..=max_size.max(1));
        let cap = rng.random_range(1..=size);
        let ctx = random_context(&mut rng, size, cap);
        report.merge(verify_properties(&ctx, 1, rng.random()));
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyRatio {
    /// `F(G ∪ A) - F(A)` for the greedy additions `G`.
    pub greedy_value: f64,
    /// Best `F(S ∪ A) - F(A)` over all `|S| ≤ b` by exhaustive search.
    pub optimum_value: f64,
}

impl GreedyRatio {
    pub fn ratio(&self) -> f64 {
        if self.optimum_value <= 0.0 {
            1.0
        } else {
            self.greedy_value / self.optimum_value
        }
    }

    pub fn meets_bound(&self) -> bool {
        self.greedy_value >= GREEDY_BOUND * self.optimum_value - VALUE_TOL
    }

    pub fn is_optimal(&self) -> bool {
        (self.greedy_value - self.optimum_value).abs() <= VALUE_TOL
    }
}

/// Compares greedy against exhaustive search over every subset of at most
/// `budget` candidates outside `initial`.
pub fn greedy_vs_exhaustive(ctx: &SetScoreContext, initial: &[usize], budget: usize) -> Result<GreedyRatio> {
    let greedy = greedy_maximize(ctx, initial, budget, None)?;
    let base = score(ctx, initial)?;
    let mut with_greedy = initial.to_vec();
    with_greedy.extend(&greedy.selected);
    let greedy_value = score(ctx, &with_greedy)? - base;

    let pool: Vec<usize> = (0..ctx.len()).filter(|i| !initial.contains(i)).collect();
    let mut best = 0.0_f64;
    let mut current = initial.to_vec();
    exhaustive(ctx, &pool, 0, budget, &mut current, &mut best)?;
    Ok(GreedyRatio { greedy_value, optimum_value: best - base })
}

fn exhaustive(ctx: &SetScoreContext, pool: &[usize], from: usize, left: usize, current: &mut Vec<usize>, best: &mut f64) -> Result<()> {
    *best = best.max(score(ctx, current)?);
    if left == 0 {
        return Ok(());
    }
    for p in from..pool.len() {
        current.push(pool[p]);
        exhaustive(ctx, pool, p + 1, left - 1, current, best)?;
        current.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub instances: usize,
    pub violations: usize,
    pub optimal: usize,
    pub min_ratio: f64,
}

/// Greedy-vs-exhaustive over random instances with `|V| ≤ max_size` and
/// `b ≤ max_budget`, some with a non-empty initial set.
pub fn random_ratio_check(instances: usize, max_size: usize, max_budget: usize, seed: u64) -> RatioReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RatioReport { min_ratio: f64::INFINITY, ..Default::default() };
    for _ in 0..instances {
        let size = rng.random_range(2..=max_size.max(2));
        let budget = rng.random_range(1..=max_budget.max(1).min(size));
        let init_len = rng.random_range(0..=(size - budget).min(3));
        let mut ctx = random_context(&mut rng, size, init_len + budget);
        ctx.cardinality_cap = init_len + budget;
        let mut ids: Vec<usize> = (0..size).collect();
        ids.shuffle(&mut rng);
        let initial = &ids[..init_len];
        let r = greedy_vs_exhaustive(&ctx, initial, budget).expect("instance respects the cap");
        report.instances += 1;
        if !r.meets_bound() {
            report.violations += 1;
        }
        if r.is_optimal() {
            report.optimal += 1;
        }
        report.min_ratio = report.min_ratio.min(r.ratio());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn pair_ctx() -> SetScoreContext {
        SetScoreContext::new(vec![0.5, 0.3], array![[1.0, 0.8], [0.8, 1.0]], 0.5, 4).unwrap()
    }

    #[test]
    fn hand_values() {
        let ctx = pair_ctx();
        assert_eq!(score(&ctx, &[]).unwrap(), 0.0);
        assert!((score(&ctx, &[0]).unwrap() - 1.5).abs() < 1e-12);
        assert!((score(&ctx, &[0, 1]).unwrap() - 2.7).abs() < 1e-12);
        assert!((marginal_gain(&ctx, &[], 1).unwrap() - 1.3).abs() < 1e-12);
        assert!((marginal_gain(&ctx, &[0], 1).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let ctx = SetScoreContext::new(vec![0.1; 3], Array2::eye(3), 0.5, 2).unwrap();
        assert!(matches!(score(&ctx, &[0, 1, 2]), Err(Error::CapExceeded { .. })));
        assert!(matches!(marginal_gain(&ctx, &[0], 0), Err(Error::AlreadyInSet(0))));
        assert!(matches!(marginal_gain(&ctx, &[0, 1], 2), Err(Error::CapExceeded { .. })));
        assert!(matches!(score(&ctx, &[1, 1]), Err(Error::AlreadyInSet(1))));
        assert!(SetScoreContext::new(vec![1.5], Array2::eye(1), 0.5, 1).is_err());
        assert!(SetScoreContext::new(vec![0.5], array![[2.0]], 0.5, 1).is_err());
    }

    #[test]
    fn alpha_zero_gain_is_modular() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = random_context(&mut rng, 6, 6);
        ctx.alpha = 0.0;
        for x in 3..6 {
            assert_eq!(marginal_gain(&ctx, &[0, 1, 2], x).unwrap(), ctx.leverage[x] + 1.0);
        }
        let r = verify_properties(&ctx, 200, 1);
        assert_eq!(r.violations(), 0);
    }

    #[test]
    fn greedy_examples() {
        let l = vec![0.9, 0.8, 0.1];
        let ctx = SetScoreContext::new(l.clone(), Array2::zeros((3, 3)), 0.5, 2).unwrap();
        assert_eq!(greedy_maximize(&ctx, &[], 2, None).unwrap().selected, vec![0, 1]);

        let mut k = Array2::zeros((3, 3));
        k[[0, 1]] = 1.0;
        k[[1, 0]] = 1.0;
        let ctx = SetScoreContext::new(l, k, 1.0, 2).unwrap();
        let out = greedy_maximize(&ctx, &[], 2, None).unwrap();
        assert_eq!(out.selected, vec![0, 1]);
        assert!((out.gains[0] - 1.9).abs() < 1e-12 && (out.gains[1] - 1.3).abs() < 1e-12);
        assert!((score(&ctx, &[0, 1]).unwrap() - 3.2).abs() < 1e-12);
        let r = greedy_vs_exhaustive(&ctx, &[], 2).unwrap();
        assert!((r.optimum_value - 3.2).abs() < 1e-12 && r.is_optimal());
    }

    #[test]
    fn greedy_ties_and_short_batches() {
        let ctx = SetScoreContext::new(vec![0.5; 4], Array2::zeros((4, 4)), 0.5, 4).unwrap();
        assert_eq!(greedy_maximize(&ctx, &[], 3, None).unwrap().selected, vec![0, 1, 2]);
        let out = greedy_maximize(&ctx, &[1], 3, Some(&[3, 1, 2])).unwrap();
        assert_eq!(out.selected, vec![2, 3]);
        assert!(out.short);
        assert!(greedy_maximize(&ctx, &[0, 1], 3, None).is_err());
    }

    #[test]
    fn tester_catches_corrupted_contexts() {
        // Leverage above one only raises gains, so the checks stay silent.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ctx = random_context(&mut rng, 8, 8);
        ctx.alpha = 1.0;
        ctx.leverage[0] = 5.0;
        assert_eq!(verify_properties(&ctx, 2000, 0).violations(), 0);

        // A negative leverage gives a negative gain.
        ctx.leverage[0] = -5.0;
        let r = verify_properties(&ctx, 2000, 0);
        assert!(r.monotonicity_violations > 0);
        assert!(r.counterexamples.iter().any(|c| c.property == Property::Monotonicity));

        // Similarities above one let the penalty outgrow the reward.
        let mut ctx = random_context(&mut rng, 8, 8);
        ctx.alpha = 1.0;
        ctx.kernel.fill(5.0);
        assert!(verify_properties(&ctx, 2000, 0).monotonicity_violations > 0);
    }

    #[test]
    fn random_suites_are_clean() {
        let r = verify_random_properties(1000, 12, 7);
        assert_eq!(r.violations(), 0, "{:?}", r.counterexamples);
        let t = random_ratio_check(200, 10, 4, 3);
        assert_eq!(t.violations, 0);
        assert!(t.min_ratio >= GREEDY_BOUND);
    }

    fn ctx_and_sets() -> impl Strategy<Value = (SetScoreContext, Vec<usize>, usize)> {
        (2usize..12, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = random_context(&mut rng, n, n);
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut rng);
            let k = rand::Rng::random_range(&mut rng, 0..n);
            (ctx, ids[..k].to_vec(), ids[k])
        })
    }

    proptest! {
        #[test]
        fn gain_equals_score_difference((ctx, set, x) in ctx_and_sets()) {
            let mut with = set.clone();
            with.push(x);
            let diff = score(&ctx, &with).unwrap() - score(&ctx, &set).unwrap();
            prop_assert!((marginal_gain(&ctx, &set, x).unwrap() - diff).abs() < 1e-12);
        }

        #[test]
        fn score_is_relabeling_invariant((ctx, set, _x) in ctx_and_sets(), seed in any::<u64>()) {
            let n = ctx.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            // element i of the old ground set becomes perm[i]
            let mut lev = vec![0.0; n];
            let mut k = Array2::zeros((n, n));
            for i in 0..n {
                lev[perm[i]] = ctx.leverage[i];
                for j in 0..n {
                    k[[perm[i], perm[j]]] = ctx.kernel[[i, j]];
                }
            }
            let moved = SetScoreContext { leverage: lev, kernel: k, ..ctx.clone() };
            let mapped: Vec<usize> = set.iter().map(|&i| perm[i]).collect();
            prop_assert!((score(&ctx, &set).unwrap() - score(&moved, &mapped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn lazy_equals_naive(n in 1usize..40, seed in any::<u64>(), budget in 0usize..12, init in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = init.min(n);
            let mut ctx = random_context(&mut rng, n, init + budget);
            if seed % 3 == 0 {
                // coarse values force plenty of exact ties
                ctx.leverage.iter_mut().for_each(|v| *v = (*v * 2.0).round() / 2.0);
                ctx.kernel.mapv_inplace(|v| (v * 2.0).round() / 2.0);
            }
            let initial: Vec<usize> = (0..init).collect();
            let a = greedy_maximize(&ctx, &initial, budget, None).unwrap();
            let b = greedy_maximize_naive(&ctx, &initial, budget, None).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
