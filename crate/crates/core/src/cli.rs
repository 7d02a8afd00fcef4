//! Pipeline orchestration behind the command-line interface.
//!
//! A run is keyed by the hash of its configuration and lives in its own
//! directory: the resolved config, the featurized dataset, the fold splits,
//! one model file per node per fold with an ensemble manifest, and the
//! report files. Everything an evaluation needs is read back from the run
//! directory, so identical configs reproduce identical reports byte for
//! byte (no timestamps are written).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::ClassifierSpec;
use crate::bench::{bench_csv, bench_report, time_batch, TimingResult};
use crate::dataset::{
    augment_samples, featurize_samples, generate_synthetic_dim, kfold_split, load_csv,
    load_image_dir, save_csv, default_dim, Featurize, FoldSplit, GridSample, Sample,
};
use crate::estimator::{estimate_overall, measure_cascade_inputs, monte_carlo_cascade};
use crate::evaluation::{aggregate, score, ExperimentReport, FoldMetrics, RunMeta};
use crate::routing::{
    load_ensemble, train_ensemble, EnsembleManifest, HierarchyEnsemble, Mode,
};
use crate::seed;
use crate::taxonomy::Taxonomy;

/// Errors surfaced to the command line, bucketed by exit code:
/// 1 usage, 2 data, 3 runtime.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! from_err {
    ($ty:ty, $variant:ident) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e.to_string())
            }
        }
    };
}

from_err!(crate::taxonomy::TaxonomyError, Data);
from_err!(crate::dataset::DatasetError, Data);
from_err!(crate::backend::BackendError, Runtime);
from_err!(crate::routing::RoutingError, Runtime);
from_err!(crate::evaluation::EvalError, Runtime);
from_err!(crate::estimator::EstimatorError, Runtime);
from_err!(crate::bench::BenchError, Runtime);

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Hierarchy-structured Gaussian blobs.
    Synthetic {
        per_class: usize,
        separation: f64,
        overlap: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
    /// Feature CSV with header `f0,...,fD-1,label`.
    Csv { path: String },
    /// `<fine-name>/*.png` directory; grids are augmented at train time and
    /// featurized with the given mode.
    ImageDir { path: String, featurize: Featurize },
}

/// One experiment run, fully specified. The backend spec's own seed field is
/// ignored; per-node seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Path to a taxonomy JSON file, or the literal `nw45` for the bundled one.
    pub taxonomy: String,
    pub dataset: DatasetSource,
    pub backend: ClassifierSpec,
    pub folds: usize,
    /// Train, validation, test fractions; must sum to 1.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("cannot parse config {}: {e}", path.as_ref().display())))
    }

    /// Hex digest over the canonical JSON form; the run directory key.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    pub fn resolve_taxonomy(&self) -> Result<Taxonomy, CliError> {
        if self.taxonomy == "nw45" {
            Ok(Taxonomy::nw45())
        } else {
            Ok(Taxonomy::load(&self.taxonomy)?)
        }
    }
}

/// Everything persisted by `train` that later commands read back.
pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
    pub taxonomy: Taxonomy,
    pub samples: Vec<Sample>,
    pub splits: Vec<FoldSplit>,
}

impl RunDir {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CliError> {
        let root = root.as_ref().to_path_buf();
        let config = RunConfig::load(root.join("config.json"))?;
        let taxonomy = Taxonomy::load(root.join("taxonomy.json"))?;
        let samples = load_csv(root.join("dataset.csv"), &taxonomy)?;
        let splits: Vec<FoldSplit> = read_json(&root.join("splits.json"))?;
        let n = samples.len();
        let out_of_range = splits
            .iter()
            .flat_map(|f| f.train.iter().chain(&f.val).chain(&f.test))
            .any(|&i| i >= n);
        if out_of_range {
            return Err(CliError::Data(format!(
                "splits.json indexes beyond the {n} samples in dataset.csv"
            )));
        }
        Ok(RunDir {
            root,
            config,
            taxonomy,
            samples,
            splits,
        })
    }

    pub fn manifest_path(&self, fold: usize) -> PathBuf {
        self.root.join(format!("models/fold{fold}/manifest.json"))
    }

    pub fn ensemble(&self, fold: usize) -> Result<HierarchyEnsemble, CliError> {
        Ok(load_ensemble(self.manifest_path(fold))?)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn meta(&self) -> RunMeta {
        let taxonomy_bytes = std::fs::read(self.root.join("taxonomy.json")).unwrap_or_default();
        let digest = Sha256::digest(&taxonomy_bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        RunMeta {
            seed: self.config.seed,
            spec: format!(
                "{:?}-{:?}",
                self.config.backend.kind, self.config.backend.capacity
            )
            .to_lowercase(),
            taxonomy_hash: hex[..12].to_string(),
        }
    }

    pub fn test_samples(&self, fold: usize) -> Vec<Sample> {
        self.splits[fold]
            .test
            .iter()
            .map(|&i| self.samples[i].clone())
            .collect()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("cannot parse {}: {e}", path.display())))
}

/// Train all node models for every fold and write the run directory.
/// Removes the partially written directory if anything fails.
pub fn cmd_train(config: &RunConfig, out_root: &Path, jobs: usize) -> Result<PathBuf, CliError> {
    let run_dir = out_root.join(format!("run-{}", config.hash()));
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", run_dir.display())))?;
    let result = train_into(config, &run_dir, jobs);
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&run_dir);
    }
    result.map(|()| run_dir)
}

fn train_into(config: &RunConfig, run_dir: &Path, jobs: usize) -> Result<(), CliError> {
    if config.folds < 2 {
        return Err(CliError::Usage("folds must be at least 2".into()));
    }
    let taxonomy = config.resolve_taxonomy()?;

    // Materialize features once; keep grids around when augmentation applies.
    let (samples, grids): (Vec<Sample>, Option<(Vec<GridSample>, Featurize)>) =
        match &config.dataset {
            DatasetSource::Synthetic {
                per_class,
                separation,
                overlap,
                dim,
            } => {
                let d = dim.unwrap_or_else(|| default_dim(&taxonomy));
                let s = generate_synthetic_dim(
                    &taxonomy,
                    *per_class,
                    *separation,
                    *overlap,
                    d,
                    seed::derive(config.seed, "data"),
                )?;
                (s, None)
            }
            DatasetSource::Csv { path } => (load_csv(path, &taxonomy)?, None),
            DatasetSource::ImageDir { path, featurize } => {
                let g = load_image_dir(path, &taxonomy)?;
                let s = featurize_samples(&g, *featurize)?;
                (s, Some((g, *featurize)))
            }
        };

    let [train_frac, val_frac, test_frac] = config.fractions;
    let splits = kfold_split(
        &samples,
        &taxonomy,
        config.folds,
        train_frac,
        val_frac,
        test_frac,
        seed::derive(config.seed, "split"),
    )?;

    write_json(&run_dir.join("config.json"), config)?;
    taxonomy.save(run_dir.join("taxonomy.json"))?;
    save_csv(run_dir.join("dataset.csv"), &samples, &taxonomy)?;
    write_json(&run_dir.join("splits.json"), &splits)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot build worker pool: {e}")))?;

    pool.install(|| {
        splits
            .par_iter()
            .map(|fold| train_fold(config, run_dir, &taxonomy, &samples, &grids, fold))
            .collect::<Result<Vec<()>, CliError>>()
    })?;
    Ok(())
}

fn train_fold(
    config: &RunConfig,
    run_dir: &Path,
    taxonomy: &Taxonomy,
    samples: &[Sample],
    grids: &Option<(Vec<GridSample>, Featurize)>,
    fold: &FoldSplit,
) -> Result<(), CliError> {
    let fold_dir = run_dir.join(format!("models/fold{}", fold.fold_index));
    std::fs::create_dir_all(&fold_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", fold_dir.display())))?;

    // Augmentation applies to the train split only, before featurization.
    let train_samples: Vec<Sample> = match grids {
        Some((g, mode)) => {
            let picked: Vec<GridSample> = fold.train.iter().map(|&i| g[i].clone()).collect();
            featurize_samples(&augment_samples(&picked)?, *mode)?
        }
        None => fold.train.iter().map(|&i| samples[i].clone()).collect(),
    };
    let val_samples: Vec<Sample> = fold.val.iter().map(|&i| samples[i].clone()).collect();

    let ensemble = train_ensemble(
        taxonomy,
        &config.backend,
        &train_samples,
        &val_samples,
        seed::derive2(config.seed, "model", fold.fold_index as u64, 0),
    )?;

    ensemble.first().save(fold_dir.join("first.json"))?;
    let mut manifest_second = BTreeMap::new();
    for c in 0..taxonomy.num_coarse() {
        let file = format!("second{c}.json");
        ensemble.second(c)?.save(fold_dir.join(&file))?;
        manifest_second.insert(c, file);
    }
    ensemble.flat()?.save(fold_dir.join("flat.json"))?;

    let manifest = EnsembleManifest {
        taxonomy: "../../taxonomy.json".into(),
        first: "first.json".into(),
        second: manifest_second,
        flat: Some("flat.json".into()),
    };
    manifest.save(fold_dir.join("manifest.json"))?;
    Ok(())
}

/// Parse an experiment selector: `1`/`topdown`, `2`/`oracle`, `3`/`bottomup`,
/// or `flat`.
pub fn parse_experiment(token: &str) -> Result<Mode, CliError> {
    match token.trim().to_lowercase().as_str() {
        "1" | "topdown" => Ok(Mode::TopDown),
        "2" | "oracle" => Ok(Mode::Oracle),
        "3" | "bottomup" => Ok(Mode::BottomUp),
        "flat" => Ok(Mode::Flat),
        other => Err(CliError::Usage(format!(
            "unknown experiment {other:?}; expected 1, 2, 3, topdown, oracle, bottomup or flat"
        ))),
    }
}

/// Evaluate the requested experiments over every fold, writing one report
/// JSON per mode plus flat CSV summaries.
pub fn cmd_evaluate(run: &RunDir, modes: &[Mode]) -> Result<Vec<ExperimentReport>, CliError> {
    if modes.is_empty() {
        return Err(CliError::Usage("no experiments selected".into()));
    }
    let mut per_mode: BTreeMap<Mode, Vec<FoldMetrics>> = BTreeMap::new();
    for fold in 0..run.splits.len() {
        let ensemble = run.ensemble(fold)?;
        let test = run.test_samples(fold);
        let truths: Vec<usize> = test.iter().map(|s| s.fine).collect();
        for &mode in modes {
            let preds = ensemble.classify_batch(mode, &test)?;
            let metrics = score(&preds, &truths, &run.taxonomy)?;
            per_mode.entry(mode).or_default().push(metrics);
        }
    }

    // Oracle routing can never lose to learned routing on the same models;
    // a violation means the harness itself is broken.
    if let (Some(oracle), Some(topdown)) =
        (per_mode.get(&Mode::Oracle), per_mode.get(&Mode::TopDown))
    {
        for (o, t) in oracle.iter().zip(topdown) {
            if o.overall_accuracy < t.overall_accuracy {
                return Err(CliError::Runtime(format!(
                    "routing dominance violated: oracle {} < topdown {}",
                    o.overall_accuracy, t.overall_accuracy
                )));
            }
        }
    }

    let reports_dir = run.reports_dir();
    std::fs::create_dir_all(&reports_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", reports_dir.display())))?;
    let meta = run.meta();
    let mut reports = Vec::new();
    for (mode, folds) in per_mode {
        let report = aggregate(folds, meta.clone())?;
        write_json(&reports_dir.join(format!("report_{mode}.json")), &report)?;
        reports.push(report);
    }

    write_overall_csv(&reports_dir.join("table4.csv"), &reports)?;
    write_per_coarse_csv(&reports_dir.join("table5.csv"), &reports, &run.taxonomy)?;
    Ok(reports)
}

/// Overall accuracy per experiment, mean and std in percent.
fn write_overall_csv(path: &Path, reports: &[ExperimentReport]) -> Result<(), CliError> {
    let mut out = String::from("experiment,mean_pct,std_pct,rendered\n");
    for r in reports {
        out.push_str(&format!(
            "{},{:.4},{:.4},{}\n",
            r.mode,
            100.0 * r.mean_overall,
            100.0 * r.std_overall,
            r.rendered_overall()
        ));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// One row per coarse category plus an overall row, one column pair per
/// evaluated experiment.
fn write_per_coarse_csv(
    path: &Path,
    reports: &[ExperimentReport],
    taxonomy: &Taxonomy,
) -> Result<(), CliError> {
    let mut out = String::from("category");
    for r in reports {
        out.push_str(&format!(",{}_mean_pct,{}_std_pct", r.mode, r.mode));
    }
    out.push('\n');
    for label in taxonomy.coarse_labels() {
        out.push_str(&label.name);
        for r in reports {
            let m = r.per_coarse_mean.get(&label.name).copied().unwrap_or(f64::NAN);
            let s = r.per_coarse_std.get(&label.name).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(",{:.4},{:.4}", 100.0 * m, 100.0 * s));
        }
        out.push('\n');
    }
    out.push_str("overall");
    for r in reports {
        out.push_str(&format!(
            ",{:.4},{:.4}",
            100.0 * r.mean_overall,
            100.0 * r.std_overall
        ));
    }
    out.push('\n');
    std::fs::write(path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Per-branch view of the cascade estimate for one fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchEstimate {
    pub coarse: String,
    pub route_acc: f64,
    pub fine_acc: f64,
    pub product: f64,
    pub prior: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldEstimate {
    pub fold: usize,
    pub branches: Vec<BranchEstimate>,
    /// Scalar first-level accuracy: the prior-weighted mean of the
    /// class-conditional routing accuracies, emitted alongside them.
    pub first_level_accuracy: f64,
    pub analytic_overall: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub mc_draws: u64,
    pub empirical_topdown: f64,
    /// |analytic - empirical|.
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub folds: Vec<FoldEstimate>,
    pub mean_analytic: f64,
    pub mean_empirical: f64,
    pub mean_gap: f64,
    pub meta: RunMeta,
}

/// Per fold: measured cascade inputs, the analytic estimate, a Monte-Carlo
/// cross-check, and the empirical top-down accuracy side by side.
pub fn cmd_estimate(run: &RunDir, mc_draws: u64) -> Result<EstimateReport, CliError> {
    let mut folds = Vec::new();
    for fold in 0..run.splits.len() {
        let ensemble = run.ensemble(fold)?;
        let test = run.test_samples(fold);
        let inputs = measure_cascade_inputs(&ensemble, &test)?;
        let estimate = estimate_overall(&inputs)?;
        let mc = monte_carlo_cascade(
            &inputs,
            mc_draws,
            seed::derive2(run.config.seed, "mc", fold as u64, 0),
        )?;
        let empirical = ensemble.accuracy(Mode::TopDown, &test)?;
        let branches = (0..run.taxonomy.num_coarse())
            .map(|c| BranchEstimate {
                coarse: run.taxonomy.coarse_name(c).to_string(),
                route_acc: inputs.route_acc[c],
                fine_acc: inputs.fine_acc[c],
                product: estimate.per_branch[c],
                prior: inputs.prior[c],
            })
            .collect();
        let first_level_accuracy = inputs
            .route_acc
            .iter()
            .zip(&inputs.prior)
            .map(|(&r, &p)| r * p)
            .sum();
        folds.push(FoldEstimate {
            fold,
            branches,
            first_level_accuracy,
            analytic_overall: estimate.overall,
            mc_mean: mc.mean,
            mc_stderr: mc.stderr,
            mc_draws: mc.draws,
            empirical_topdown: empirical,
            gap: (estimate.overall - empirical).abs(),
        });
    }
    let n = folds.len() as f64;
    let report = EstimateReport {
        mean_analytic: folds.iter().map(|f| f.analytic_overall).sum::<f64>() / n,
        mean_empirical: folds.iter().map(|f| f.empirical_topdown).sum::<f64>() / n,
        mean_gap: folds.iter().map(|f| f.gap).sum::<f64>() / n,
        folds,
        meta: run.meta(),
    };
    let reports_dir = run.reports_dir();
    std::fs::create_dir_all(&reports_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", reports_dir.display())))?;
    write_json(&reports_dir.join("estimate.json"), &report)?;
    Ok(report)
}

/// Parse the bench mode selector.
pub fn parse_bench_modes(token: &str) -> Result<Vec<Mode>, CliError> {
    match token.trim().to_lowercase().as_str() {
        "all" => Ok(vec![Mode::Flat, Mode::TopDown, Mode::BottomUp]),
        "flat" => Ok(vec![Mode::Flat]),
        "topdown" => Ok(vec![Mode::TopDown]),
        "bottomup" => Ok(vec![Mode::BottomUp]),
        other => Err(CliError::Usage(format!(
            "unknown bench mode {other:?}; expected flat, topdown, bottomup or all"
        ))),
    }
}

/// Time the fold-0 ensemble on a pre-materialized batch drawn from the
/// fold-0 test split, cycling when the split is smaller than the batch.
pub fn cmd_bench(
    run: &RunDir,
    batch_size: usize,
    repeats: usize,
    modes: &[Mode],
) -> Result<(Vec<TimingResult>, String), CliError> {
    if batch_size == 0 {
        return Err(CliError::Usage("batch size must be positive".into()));
    }
    let ensemble = run.ensemble(0)?;
    let test = run.test_samples(0);
    if test.is_empty() {
        return Err(CliError::Data("fold 0 has an empty test split".into()));
    }
    let batch: Vec<Sample> = (0..batch_size).map(|i| test[i % test.len()].clone()).collect();

    let mut results = Vec::new();
    for &mode in modes {
        results.push(time_batch(&ensemble, mode, &batch, repeats)?);
    }
    let rendered = bench_report(&results);
    let reports_dir = run.reports_dir();
    std::fs::create_dir_all(&reports_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", reports_dir.display())))?;
    write_json(&reports_dir.join("bench.json"), &results)?;
    std::fs::write(reports_dir.join("bench.csv"), bench_csv(&results))
        .map_err(|e| CliError::Runtime(format!("cannot write bench.csv: {e}")))?;
    Ok((results, rendered))
}
