//! Request and response bodies. Ids are integers (row index into the
//! dataset) and numbers are JSON doubles.

use std::path::PathBuf;

use alevs_core::data::Label;
use alevs_core::harness::{ClassRatio, ExperimentConfig, GammaSetting, TrialRow};
use alevs_core::kernels::KernelKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    /// Two examples per class drawn by the split, labeled from the dataset.
    Dataset,
    /// The session asks the human for labels on random pool examples
    /// until each class has enough.
    Ask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialLabels {
    Mode(InitialMode),
    Explicit(Vec<LabelEntry>),
}

impl Default for InitialLabels {
    fn default() -> Self {
        InitialLabels::Mode(InitialMode::Dataset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub id: usize,
    pub label: Label,
}

/// Body of `POST /sessions`. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    pub path: Option<PathBuf>,
    pub label_column: String,
    pub n: usize,
    pub dim: usize,
    pub imbalance_ratio: Option<f64>,
    /// A single strategy name.
    pub strategy: String,
    pub kernel: KernelKind,
    pub gamma: GammaSetting,
    pub degree: u32,
    pub coeff: f64,
    pub classifier_gamma: Option<GammaSetting>,
    pub c: f64,
    pub tau: f64,
    pub alpha: Option<f64>,
    pub batch_size: usize,
    /// Labels to buy after the initial set; unlimited when absent.
    pub budget: Option<usize>,
    pub seed: u64,
    pub test_fraction: f64,
    pub initial_per_class: usize,
    pub initial_labels: InitialLabels,
    /// Attach a square raster to query items when the dimension allows.
    pub image_like: bool,
    /// Attach 2-D principal-component coordinates.
    pub projection: bool,
}

impl Default for CreateSession {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        CreateSession {
            dataset: e.dataset,
            path: e.path,
            label_column: e.label_column,
            n: 500,
            dim: e.dim,
            imbalance_ratio: e.imbalance_ratio,
            strategy: "alevs".into(),
            kernel: e.kernel,
            gamma: e.gamma,
            degree: e.degree,
            coeff: e.coeff,
            classifier_gamma: e.classifier_gamma,
            c: e.c,
            tau: e.tau,
            alpha: e.alpha,
            batch_size: e.batch_size,
            budget: None,
            seed: e.seed,
            test_fraction: e.test_fraction,
            initial_per_class: e.initial_per_class,
            initial_labels: InitialLabels::default(),
            image_like: false,
            projection: true,
        }
    }
}

impl CreateSession {
    /// The equivalent single-trial experiment, for the dataset and learner
    /// settings.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            dataset: self.dataset.clone(),
            path: self.path.clone(),
            label_column: self.label_column.clone(),
            n: self.n,
            dim: self.dim,
            imbalance_ratio: self.imbalance_ratio,
            strategy: self.strategy.clone(),
            kernel: self.kernel,
            gamma: self.gamma,
            degree: self.degree,
            coeff: self.coeff,
            classifier_gamma: self.classifier_gamma,
            c: self.c,
            tau: self.tau,
            alpha: self.alpha,
            batch_size: self.batch_size,
            budget: self.budget.unwrap_or(0),
            trials: 1,
            seed: self.seed,
            test_fraction: self.test_fraction,
            initial_per_class: self.initial_per_class,
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Collecting the initial labels from the human.
    Bootstrap,
    Active,
    /// Budget spent or pool exhausted.
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Row-major, min-max scaled to `[0, 1]`.
    pub pixels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub id: usize,
    pub features: Vec<f64>,
    pub projection: Option<[f64; 2]>,
    pub raster: Option<Raster>,
}

/// Body of `GET /sessions/{id}/query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub session: String,
    pub phase: Phase,
    pub iteration: usize,
    pub n_labeled: usize,
    pub remaining_budget: Option<usize>,
    pub ids: Vec<usize>,
    pub items: Vec<QueryItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session: String,
    pub query: QueryResponse,
}

/// Body of `POST /sessions/{id}/labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitLabels {
    pub labels: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    /// Metrics of the model retrained on the new labels.
    pub latest: Option<TrialRow>,
    pub query: QueryResponse,
}

/// Body of `GET /sessions/{id}/metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub session: String,
    pub strategy: String,
    pub seed: u64,
    pub phase: Phase,
    pub rows: Vec<TrialRow>,
    pub queried_ratio: ClassRatio,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Seconds since the Unix epoch.
    pub created_at: f64,
    pub updated_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPoint {
    pub id: usize,
    pub projection: Option<[f64; 2]>,
    /// Known label, for labeled examples.
    pub label: Option<Label>,
}

/// Body of `GET /sessions/{id}/pool`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolResponse {
    pub session: String,
    pub points: Vec<PoolPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_label_forms() {
        let mode: InitialLabels = serde_json::from_str("\"ask\"").unwrap();
        assert_eq!(mode, InitialLabels::Mode(InitialMode::Ask));
        let list: InitialLabels = serde_json::from_str(r#"[{"id": 3, "label": -1}]"#).unwrap();
        assert_eq!(list, InitialLabels::Explicit(vec![LabelEntry { id: 3, label: Label::Negative }]));
        assert!(serde_json::from_str::<InitialLabels>("\"maybe\"").is_err());
    }

    #[test]
    fn label_domain_enforced() {
        assert!(serde_json::from_str::<SubmitLabels>(r#"{"labels":[{"id":1,"label":2}]}"#).is_err());
        assert!(serde_json::from_str::<SubmitLabels>(r#"{"labels":[{"id":1,"label":0}]}"#).is_err());
        assert!(serde_json::from_str::<SubmitLabels>(r#"{"labels":[{"id":1,"label":1}]}"#).is_ok());
    }

    #[test]
    fn create_defaults() {
        let c: CreateSession = serde_json::from_str("{}").unwrap();
        assert_eq!(c.strategy, "alevs");
        assert_eq!(c.budget, None);
        assert!(serde_json::from_str::<CreateSession>(r#"{"datset": "x"}"#).is_err());
        let e = c.experiment();
        assert_eq!(e.trials, 1);
        assert_eq!(e.n, 500);
    }
}
