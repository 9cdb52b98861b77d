use std::collections::BTreeSet;

use alevs_core::data::{self, Dataset, Label};
use alevs_core::harness::{read_records, run_experiment, write_experiment, ExperimentConfig, GammaSetting};
use alevs_core::strategies::StrategyKind;
use proptest::prelude::*;

fn experiment(strategy: &str, dataset: &str) -> ExperimentConfig {
    ExperimentConfig {
        dataset: dataset.into(),
        n: 160,
        dim: 6,
        strategy: strategy.into(),
        budget: 12,
        batch_size: 4,
        trials: 3,
        seed: 21,
        gamma: GammaSetting::Fixed(0.1),
        ..ExperimentConfig::default()
    }
}

#[test]
fn strategies_share_splits_and_query_only_the_pool() {
    let cfg = experiment("dbalevs,alevs,random,uncertainty,lev-on-all,top-lev", "twonorm");
    let res = run_experiment(&cfg).unwrap();
    let ds = cfg.load_dataset().unwrap();
    assert_eq!(res.records.len(), 3 * StrategyKind::ALL.len());
    assert_eq!(res.tables.len(), StrategyKind::ALL.len() - 1);
    for r in &res.records {
        let split = data::make_split(&ds, cfg.test_fraction, cfg.initial_per_class, r.seed).unwrap();
        let ids = r.queried_ids();
        assert_eq!(ids.len(), 12, "{}", r.strategy);
        assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), ids.len());
        let train: BTreeSet<usize> = split.train_ids.iter().copied().collect();
        assert!(ids.iter().all(|i| train.contains(i) && !split.initial_labeled_ids.contains(i)));
        // queried labels are the hidden truth
        assert!(r.queried_labels().iter().zip(&ids).all(|(l, &i)| *l == ds.labels[i]));
        let step = r.strategy.parse::<StrategyKind>().unwrap().query_count(4);
        for w in r.rows.windows(2) {
            assert_eq!(w[1].n_labeled - w[0].n_labeled, step);
            assert_eq!(w[1].iteration, w[0].iteration + 1);
        }
        assert_eq!(r.rows[0].n_labeled, 4);
    }
    // same seed, same first metrics row regardless of strategy
    for seed in [21u64, 22, 23] {
        let first: BTreeSet<String> =
            res.records.iter().filter(|r| r.seed == seed).map(|r| format!("{:?}", (r.rows[0].accuracy, r.rows[0].f1))).collect();
        assert_eq!(first.len(), 1);
    }
}

#[test]
fn result_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&experiment("alevs,random", "ringnorm")).unwrap();
    write_experiment(&res, dir.path()).unwrap();
    let back = read_records(dir.path()).unwrap();
    assert_eq!(back, res.records);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["experiment"]["dataset"], "ringnorm");
    assert_eq!(summary["comparisons"][0]["strategy_a"], "alevs");
    let wtl = summary["comparisons"][0].as_object().unwrap();
    let total: u64 = ["wins", "ties", "losses"].iter().map(|k| wtl[*k].as_u64().unwrap()).sum();
    assert_eq!(total as usize, res.tables[0].checkpoints.len());
}

#[test]
fn loaded_files_feed_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let ds = data::gen_twonorm(90, 3, 5).unwrap();
    let svm = dir.path().join("d.svm");
    let csv = dir.path().join("d.csv");
    data::write_libsvm(&ds, std::fs::File::create(&svm).unwrap()).unwrap();
    data::write_csv(&ds, std::fs::File::create(&csv).unwrap()).unwrap();
    for (kind, path) in [("libsvm", svm), ("csv", csv)] {
        let cfg = ExperimentConfig { path: Some(path), trials: 2, budget: 3, ..experiment("alevs,random", kind) };
        let loaded = cfg.load_dataset().unwrap();
        assert_eq!(loaded.labels, ds.labels);
        assert!((&loaded.features - &ds.features).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(run_experiment(&cfg).unwrap().records.len(), 4);
    }
}

#[test]
fn imbalanced_clusters_run() {
    let cfg = ExperimentConfig { imbalance_ratio: Some(3.0), n: 200, ..experiment("dbalevs,top-lev", "clusters") };
    let ds: Dataset = cfg.load_dataset().unwrap();
    let (pos, neg) = ds.class_counts();
    assert!((pos as f64 / neg as f64 - 3.0).abs() * neg as f64 <= 1.0 + 1e-9);
    let res = run_experiment(&cfg).unwrap();
    assert!(res.records.iter().all(|r| r.rows.len() == 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn any_seed_keeps_trials_consistent(seed in 0u64..1000, strategy in prop::sample::select(vec!["alevs", "dbalevs", "uncertainty"])) {
        let cfg = ExperimentConfig { seed, trials: 1, budget: 8, n: 80, strategy: strategy.into(), ..experiment("x", "twonorm") };
        let r = &run_experiment(&cfg).unwrap().records[0];
        for row in &r.rows {
            prop_assert!((0.0..=1.0).contains(&row.accuracy) && (0.0..=1.0).contains(&row.f1));
            prop_assert!(row.queried_labels.iter().all(|l| matches!(l, Label::Positive | Label::Negative)));
        }
        prop_assert_eq!(r.queried_ids().len(), 8);
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(cfg.strategies().unwrap().len() >= 2, "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 2);
}
