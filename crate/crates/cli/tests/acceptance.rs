//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion before asserting.

use std::collections::BTreeMap;
use std::time::Instant;

use alevs_core::classifier::{train, SvmModel};
use alevs_core::data::{self, ClusterSpec, Label};
use alevs_core::harness::{
    compare, queried_class_ratio, run_experiment, run_trial, ClassRatio, ExperimentConfig, GammaSetting, LearnerConfig, TrialRecord,
};
use alevs_core::kernels::KernelSpec;
use alevs_core::linalg::{eigvals_sym, leverage_scores, rank_selector};
use alevs_core::setfunc::{
    greedy_maximize, greedy_vs_exhaustive, marginal_gain, random_ratio_check, score, verify_random_properties, SetScoreContext,
    GREEDY_BOUND,
};
use alevs_core::stats::{paired_t_test_one_sided, Verdict};
use alevs_core::strategies::{StrategyConfig, StrategyKind};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {criterion}: {title} -- {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Random SPSD matrices `G Gᵀ` with random size and rank, plus a random τ.
fn spsd_suite(count: usize, seed: u64) -> Vec<(Array2<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m = rng.random_range(1..=50);
            let r = rng.random_range(1..=m);
            let g = Array2::from_shape_fn((m, r), |_| rng.random_range(-1.0..1.0));
            let tau = rng.random_range(0.05..=1.0);
            (g.dot(&g.t()), tau)
        })
        .collect()
}

#[test]
fn criterion_01_leverage_axioms() {
    let start = Instant::now();
    let suite = spsd_suite(1000, 101);
    let (mut worst_sum, mut worst_mean, mut worst_entry) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut failures = 0;
    for (k, tau) in &suite {
        let p = leverage_scores(k, *tau).unwrap();
        let sum: f64 = p.unscaled.iter().sum();
        let mean = p.scaled.iter().sum::<f64>() / p.scaled.len() as f64;
        let over = p.unscaled.iter().map(|&l| (l - 1.0).max(-l).max(0.0)).fold(0.0, f64::max);
        worst_sum = worst_sum.max((sum - p.rank as f64).abs());
        worst_mean = worst_mean.max((mean - 1.0).abs());
        worst_entry = worst_entry.max(over);
        if (sum - p.rank as f64).abs() > 1e-8 || (mean - 1.0).abs() > 1e-8 || p.unscaled.iter().any(|&l| !(0.0..=1.0 + 1e-12).contains(&l)) {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} matrices, max |sum - k| {worst_sum:.1e}, max |mean scaled - 1| {worst_mean:.1e}, max excursion outside [0,1] {worst_entry:.1e}, {failures} failures, {secs:.1}s",
        suite.len()
    );
    report(1, "leverage axioms", failures == 0 && secs < 30.0, &detail);
}

#[test]
fn criterion_02_set_function_properties() {
    let start = Instant::now();
    let r = verify_random_properties(10_000, 12, 202);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} instances, violations: submodularity {}, monotonicity {}, non-negativity {}, {secs:.1}s",
        r.trials, r.submodularity_violations, r.monotonicity_violations, r.nonnegativity_violations
    );
    report(2, "submodularity, monotonicity, non-negativity", r.trials >= 10_000 && r.violations() == 0 && secs < 60.0, &detail);
}

#[test]
fn criterion_03_greedy_bound() {
    let start = Instant::now();
    let r = random_ratio_check(500, 12, 4, 303);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} instances, {} below {:.4}, greedy optimal in {} ({:.1}%), min ratio {:.4}, {secs:.1}s",
        r.instances,
        r.violations,
        GREEDY_BOUND,
        r.optimal,
        100.0 * r.optimal as f64 / r.instances as f64,
        r.min_ratio
    );
    report(3, "greedy (1 - 1/e) bound", r.instances >= 500 && r.violations == 0 && secs < 60.0, &detail);
}

#[test]
fn criterion_04_hand_worked_values() {
    let tol = 1e-12;
    let two = SetScoreContext::new(vec![0.5, 0.3], array![[1.0, 0.8], [0.8, 1.0]], 0.5, 4).unwrap();
    let mut checks: Vec<(&str, f64, f64)> = vec![
        ("F(empty)", score(&two, &[]).unwrap(), 0.0),
        ("F({i}) with l=0.5", score(&two, &[0]).unwrap(), 1.5),
        ("F({i,j}) = 0.5+0.3+2-(0.5/4)*0.8", score(&two, &[0, 1]).unwrap(), 2.7),
        ("gain from empty", marginal_gain(&two, &[], 1).unwrap(), 1.3),
        ("gain equals score difference", marginal_gain(&two, &[0], 1).unwrap(), score(&two, &[0, 1]).unwrap() - score(&two, &[0]).unwrap()),
    ];
    let no_diversity = SetScoreContext::new(vec![0.5, 0.3], array![[1.0, 0.8], [0.8, 1.0]], 0.0, 4).unwrap();
    checks.push(("gain with alpha 0", marginal_gain(&no_diversity, &[0], 1).unwrap(), 1.3));

    let three = SetScoreContext::new(vec![0.9, 0.8, 0.1], array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 1.0, 2).unwrap();
    let g = greedy_maximize(&three, &[], 2, None).unwrap();
    checks.push(("greedy value on 3-element instance", score(&three, &g.selected).unwrap(), 3.2));
    checks.push(("exhaustive optimum on 3-element instance", greedy_vs_exhaustive(&three, &[], 2).unwrap().optimum_value, 3.2));
    let picks_ok = g.selected == vec![0, 1];

    let bad: Vec<String> = checks.iter().filter(|c| (c.1 - c.2).abs() > tol).map(|c| format!("{}: {} vs {}", c.0, c.1, c.2)).collect();
    let detail = format!("{} values within {tol:e}, greedy picks {:?}; mismatches: {:?}", checks.len() - bad.len(), g.selected, bad);
    report(4, "hand-worked set-function values", bad.is_empty() && picks_ok, &detail);
}

fn dual_feasible(m: &SvmModel, n: usize) -> bool {
    let (box_violation, balance) = m.dual_residuals();
    box_violation <= 1e-12 * m.c_penalty && balance <= 1e-9 * m.c_penalty * n as f64
}

#[test]
fn criterion_05_svm_sanity() {
    let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let y = [Label::Negative, Label::Negative, Label::Positive, Label::Positive];
    let xor = train(x.view(), &y, &KernelSpec::rbf(1.0), 10.0).unwrap();
    let xor_acc = xor.predict(x.view()).unwrap().iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 4.0;

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut runs = 0;
    let mut infeasible = 0;
    let specs = [KernelSpec::rbf(0.5), KernelSpec::linear(), KernelSpec::polynomial(2, 1.0)];
    for _ in 0..300 {
        let n = rng.random_range(2..60);
        let d = rng.random_range(1..6);
        let feats = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let mut labels: Vec<Label> = (0..n).map(|_| if rng.random_bool(0.5) { Label::Positive } else { Label::Negative }).collect();
        labels[0] = Label::Positive;
        labels[1] = Label::Negative;
        let c = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
        let spec = specs[rng.random_range(0..specs.len())];
        let m = train(feats.view(), &labels, &spec, c).unwrap();
        runs += 1;
        if !dual_feasible(&m, n) {
            infeasible += 1;
        }
    }
    let detail = format!("XOR training accuracy {xor_acc}, dual feasibility held on {}/{runs} random training runs", runs - infeasible);
    report(5, "SVM sanity", xor_acc == 1.0 && infeasible == 0 && dual_feasible(&xor, 4), &detail);
}

#[test]
fn criterion_06_t_test_oracle() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let r = paired_t_test_one_sided(&a, &[0.0; 5], 0.05).unwrap();
    let detail = format!("t {:.4}, one-sided p {:.5}, verdict {}", r.t, r.p_value, r.verdict.as_str());
    report(6, "paired t-test on differences 1..5", (r.p_value - 0.0066).abs() <= 1e-3 && r.verdict == Verdict::Win, &detail);
}

fn window_counts(records: &[TrialRecord], a: &str, b: &str, lo: usize, hi: usize) -> (usize, usize, usize, usize) {
    let pick = |s: &str| records.iter().filter(|r| r.strategy == s).cloned().collect::<Vec<_>>();
    let checkpoints: Vec<usize> = (lo..=hi).collect();
    let t = compare(&pick(a), &pick(b), Some(&checkpoints), 0.05).unwrap();
    (t.wins(), t.ties(), t.losses(), checkpoints.len())
}

#[test]
fn criterion_07_sequential_against_baselines() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        dataset: "twonorm".into(),
        n: 2000,
        dim: 20,
        strategy: "alevs,random,uncertainty".into(),
        batch_size: 1,
        budget: 50,
        trials: 20,
        seed: 1,
        c: 10.0,
        gamma: GammaSetting::Fixed(0.03),
        classifier_gamma: Some(GammaSetting::Auto),
        tau: 0.75,
        ..ExperimentConfig::default()
    };
    let res = run_experiment(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut pass = secs < 1800.0;
    let mut parts = Vec::new();
    for other in ["random", "uncertainty"] {
        let (w, t, l, n) = window_counts(&res.records, "alevs", other, 5, 50);
        pass &= w as f64 >= 0.6 * n as f64 && l as f64 <= 0.1 * n as f64;
        parts.push(format!("vs {other} {w}/{t}/{l} of {n}"));
    }
    let detail = format!("win/tie/loss in iterations 5-50: {}, {secs:.0}s", parts.join(", "));
    report(7, "ALEVS against random and uncertainty on twonorm", pass, &detail);
}

#[test]
fn criterion_08_imbalance() {
    let base = data::gen_twonorm(2000, 20, 8).unwrap();
    let ds = data::subsample_ratio(&base, 5.0, 8).unwrap();
    let gamma = alevs_core::kernels::gamma_heuristic(ds.features.view(), 8).unwrap();
    let mut ratios: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut final_f1: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut infinite = 0;
    for trial in 0..10u64 {
        let seed = 80 + trial;
        let split = data::make_split(&ds, 0.3, 2, seed).unwrap();
        for kind in [StrategyKind::Alevs, StrategyKind::Random] {
            let mut s = StrategyConfig::new(kind, KernelSpec::rbf(gamma));
            s.batch_size = 1;
            let rec = run_trial(&ds, &split, &LearnerConfig::shared(s, 10.0), 50, trial as usize, seed).unwrap();
            match queried_class_ratio(&rec) {
                ClassRatio::Finite(v) => ratios.entry(kind.name()).or_default().push(v),
                _ => infinite += 1,
            }
            final_f1.entry(kind.name()).or_default().push(rec.final_row().unwrap().f1);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pos, neg) = ds.class_counts();
    let ar = mean(&ratios["alevs"]);
    let rr = mean(&ratios["random"]);
    let (af, rf) = (mean(&final_f1["alevs"]), mean(&final_f1["random"]));
    let detail = format!(
        "n={} (+{pos}/-{neg}), mean queried +/- ratio ALEVS {ar:.2} random {rr:.2} ({infinite} trials without negatives), final F1 ALEVS {af:.4} random {rf:.4}",
        ds.len()
    );
    let pass = infinite == 0 && (0.7..=2.5).contains(&ar) && (3.5..=7.0).contains(&rr) && af >= rf;
    report(8, "queried class ratio under 5:1 imbalance", pass, &detail);
}

#[test]
fn criterion_09_batch_against_top_leverage() {
    let ds = data::gen_clusters(&ClusterSpec::default(), 9).unwrap();
    let gamma = alevs_core::kernels::gamma_heuristic(ds.features.view(), 9).unwrap();
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for trial in 0..10u64 {
        let seed = 90 + trial;
        let split = data::make_split(&ds, 0.3, 2, seed).unwrap();
        for kind in [StrategyKind::Dbalevs, StrategyKind::TopLev] {
            let mut s = StrategyConfig::new(kind, KernelSpec::rbf(gamma));
            s.batch_size = 10;
            s.alpha = 0.5;
            let rec = run_trial(&ds, &split, &LearnerConfig::shared(s, 10.0), 50, trial as usize, seed).unwrap();
            acc.entry(kind.name()).or_default().push(rec.final_row().unwrap().accuracy);
        }
    }
    let (d, t) = (&acc["dbalevs"], &acc["top-lev"]);
    let not_worse = d.iter().zip(t).filter(|(a, b)| a >= b).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let detail = format!(
        "{} rows, final mean accuracy DBALEVS {:.4} Top-Lev {:.4}, DBALEVS not worse in {not_worse}/10 paired trials",
        ds.len(),
        mean(d),
        mean(t)
    );
    report(9, "DBALEVS against Top-Lev on duplicated clusters", mean(d) >= mean(t) && not_worse >= 8, &detail);
}

#[test]
fn criterion_10_rank_selector_mechanism() {
    let taus: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    // (spectrum, index of its last nonzero eigenvalue); computed spectra of
    // G Gᵀ have exactly rank(G) nonzero eigenvalues
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut spectra: Vec<(Vec<f64>, usize)> = (0..1000)
        .map(|_| {
            let m = rng.random_range(1..=50);
            let r = rng.random_range(1..=m);
            let g = Array2::from_shape_fn((m, r), |_| rng.random_range(-1.0..1.0));
            (eigvals_sym(&g.dot(&g.t())).unwrap(), r)
        })
        .collect();
    spectra.push((vec![4.0, 3.0, 2.0, 1.0], 4));
    spectra.push((vec![5.0, 2.0, 0.0, 0.0, 0.0], 2));
    spectra.push((vec![1.0, 0.0, 0.0], 1));
    spectra.push((vec![3.0, 3.0, 3.0], 3));
    let mut non_monotone = 0;
    let mut misses = Vec::new();
    for (lambda, last_nonzero) in &spectra {
        let ks: Vec<usize> = taus.iter().map(|&t| rank_selector(lambda, t).unwrap()).collect();
        if ks.windows(2).any(|w| w[1] < w[0]) {
            non_monotone += 1;
        }
        if ks[ks.len() - 1] != *last_nonzero {
            misses.push((lambda.len(), *last_nonzero, ks[ks.len() - 1]));
        }
    }
    let detail = format!(
        "{} spectra x {} tau values: {non_monotone} non-monotone, {} where tau=1 missed the last nonzero eigenvalue {:?}",
        spectra.len(),
        taus.len(),
        misses.len(),
        &misses[..misses.len().min(5)]
    );
    report(10, "rank selector monotone in tau", non_monotone == 0 && misses.is_empty(), &detail);
}

mod equivalence {
    use super::*;
    use alevs_service::api::{CreateResponse, CreateSession, MetricsResponse, SubmitResponse};
    use alevs_service::{router, AppState};
    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use http_body_util::BodyExt;
    use serde_json::{json, Value};
    use tower::ServiceExt;

    async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() })
    }

    /// Drives a session with true labels for ten steps; returns the API's
    /// record and the headless one.
    async fn scripted(body: Value, budget: usize) -> (TrialRecord, TrialRecord) {
        let app = router(AppState::new());
        let req: CreateSession = serde_json::from_value(body.clone()).unwrap();
        let exp = req.experiment();
        let ds = exp.load_dataset().unwrap();
        let (s, v) = call(&app, "POST", "/sessions", Some(body)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        let created: CreateResponse = serde_json::from_value(v).unwrap();
        let mut ids = created.query.ids;
        for _ in 0..10 {
            let labels: Vec<Value> = ids.iter().map(|&id| json!({"id": id, "label": i64::from(ds.labels[id])})).collect();
            let (s, v) = call(&app, "POST", &format!("/sessions/{}/labels", created.session), Some(json!({ "labels": labels }))).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            ids = serde_json::from_value::<SubmitResponse>(v).unwrap().query.ids;
        }
        let (_, m) = call(&app, "GET", &format!("/sessions/{}/metrics", created.session), None).await;
        let m: MetricsResponse = serde_json::from_value(m).unwrap();
        let api = TrialRecord { strategy: m.strategy, trial: 0, seed: m.seed, rows: m.rows };

        let config = exp.learner_config(exp.strategies().unwrap()[0], &ds).unwrap();
        let split = data::make_split(&ds, req.test_fraction, req.initial_per_class, req.seed).unwrap();
        let direct = run_trial(&ds, &split, &config, budget, 0, req.seed).unwrap();
        (api, direct)
    }

    #[tokio::test]
    async fn criterion_11_service_matches_headless() {
        let mut parts = Vec::new();
        let mut pass = true;
        for (strategy, batch, budget) in [("alevs", 1, 10), ("dbalevs", 4, 40)] {
            let body = json!({"dataset": "twonorm", "n": 300, "dim": 20, "strategy": strategy, "batch_size": batch, "budget": budget, "seed": 11});
            let (api, direct) = scripted(body, budget).await;
            let same = api.without_timing() == direct.without_timing() && api.rows.len() == 11;
            pass &= same;
            parts.push(format!("{strategy}: {} rows, identical {same}", api.rows.len()));
        }
        report(11, "10-step API session reproduces the headless trial", pass, &parts.join(", "));
    }
}
