//! Subcommands of the `al` tool.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;

use alevs_core::harness::{
    compare_dirs, run_experiment, write_experiment, write_outputs, ComparisonTable, ExperimentConfig, ExperimentResult, GammaSetting,
};
use alevs_core::kernels::KernelKind;
use alevs_core::setfunc::{random_ratio_check, verify_random_properties, PropertyReport, RatioReport};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "al", version, about = "Leverage-score active learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded trials of one or more strategies and write result files.
    Run(RunArgs),
    /// Win/tie/loss of every strategy in A_DIR against every one in B_DIR.
    Compare(CompareArgs),
    /// Randomized checks of the set function and the greedy bound.
    Verify(VerifyArgs),
    /// Serve labeling sessions over HTTP.
    Serve(ServeArgs),
}

/// Flags override values from `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags (underscored).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// twonorm, ringnorm, clusters, libsvm or csv.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub imbalance_ratio: Option<f64>,
    /// Comma-separated; the first is compared against the others.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    /// `auto` or a number.
    #[arg(long)]
    pub gamma: Option<GammaSetting>,
    #[arg(long)]
    pub classifier_gamma: Option<GammaSetting>,
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub coeff: Option<f64>,
    #[arg(long = "c")]
    pub c: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub initial_per_class: Option<usize>,
    #[arg(long)]
    pub significance: Option<f64>,
    /// Comma-separated iterations.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub cache_profiles: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunArgs {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        overlay!(
            cfg, self, dataset, label_column, n, dim, strategy, kernel, gamma, degree, coeff, c, tau, batch_size, budget, trials, seed,
            test_fraction, initial_per_class, significance, workers
        );
        if self.path.is_some() {
            cfg.path = self.path.clone();
        }
        if self.imbalance_ratio.is_some() {
            cfg.imbalance_ratio = self.imbalance_ratio;
        }
        if self.classifier_gamma.is_some() {
            cfg.classifier_gamma = self.classifier_gamma;
        }
        if self.alpha.is_some() {
            cfg.alpha = self.alpha;
        }
        if self.checkpoints.is_some() {
            cfg.checkpoints = self.checkpoints.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.cache_profiles |= self.cache_profiles;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a_dir: PathBuf,
    pub b_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also write `wtl.csv` and `summary.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random (A, B, x, context) instances for the set-function properties.
    #[arg(long, default_value_t = 10_000)]
    pub instances: usize,
    /// Random instances for the greedy-versus-exhaustive check.
    #[arg(long, default_value_t = 500)]
    pub ratio_instances: usize,
    #[arg(long, default_value_t = 12)]
    pub max_size: usize,
    #[arg(long, default_value_t = 4)]
    pub max_budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

pub fn run(args: &RunArgs) -> anyhow::Result<(ExperimentResult, PathBuf)> {
    let cfg = args.resolve()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let result = run_experiment(&cfg)?;
    write_experiment(&result, &out).with_context(|| format!("writing results to {}", out.display()))?;
    Ok((result, out))
}

pub fn format_tables(tables: &[ComparisonTable]) -> String {
    let mut s = String::new();
    for t in tables {
        let _ = writeln!(
            s,
            "{} vs {}: {} win / {} tie / {} loss over {} checkpoints (alpha {})",
            t.strategy_a,
            t.strategy_b,
            t.wins(),
            t.ties(),
            t.losses(),
            t.checkpoints.len(),
            t.alpha
        );
    }
    s
}

pub fn format_run(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let d = &result.dataset;
    let _ = writeln!(s, "dataset {} (n={}, d={}, +{}/-{}), gamma {:.4}", d.name, d.n, d.dim, d.positives, d.negatives, result.gamma);
    let summary = alevs_core::harness::summarize(&result.records, &result.tables, None);
    for st in &summary.strategies {
        if let Some(last) = st.curve.last() {
            let _ = writeln!(
                s,
                "{:<12} trials {:>3}  final n_labeled {:>4}  accuracy {:.4} ± {:.4}  f1 {:.4} ± {:.4}  queried +/- {}",
                st.strategy,
                st.trials,
                last.n_labeled,
                last.accuracy_mean,
                last.accuracy_std,
                last.f1_mean,
                last.f1_std,
                st.queried_ratio_mean.map(|r| format!("{r:.2}")).unwrap_or_else(|| "n/a".into()),
            );
        }
    }
    s.push_str(&format_tables(&result.tables));
    s
}

pub fn compare(args: &CompareArgs) -> anyhow::Result<Vec<ComparisonTable>> {
    let tables = compare_dirs(&args.a_dir, &args.b_dir, args.checkpoints.as_deref(), args.alpha)?;
    if let Some(out) = &args.out {
        write_outputs(&[], &tables, None, out)?;
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub properties: PropertyReport,
    pub ratio: RatioReport,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.properties.violations() == 0 && self.ratio.violations == 0
    }

    pub fn describe(&self) -> String {
        let p = &self.properties;
        let r = &self.ratio;
        let mut s = format!(
            "set function: {} instances, {} submodularity / {} monotonicity / {} non-negativity violations\n\
             greedy bound: {} instances, {} below (1 - 1/e), {} optimal ({:.1}%), min ratio {:.4}\n",
            p.trials,
            p.submodularity_violations,
            p.monotonicity_violations,
            p.nonnegativity_violations,
            r.instances,
            r.violations,
            r.optimal,
            100.0 * r.optimal as f64 / r.instances.max(1) as f64,
            r.min_ratio,
        );
        for c in &p.counterexamples {
            let _ = writeln!(s, "counterexample: {c:?}");
        }
        s
    }
}

pub fn verify(args: &VerifyArgs) -> anyhow::Result<VerifyOutcome> {
    if args.max_size == 0 {
        bail!("max-size must be at least 1");
    }
    Ok(VerifyOutcome {
        properties: verify_random_properties(args.instances, args.max_size, args.seed),
        ratio: random_ratio_check(args.ratio_instances, args.max_size, args.max_budget, args.seed.wrapping_add(1)),
    })
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(alevs_service::serve(args.addr))?;
    Ok(())
}
