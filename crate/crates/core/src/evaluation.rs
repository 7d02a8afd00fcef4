//! Fold-wise and aggregated accuracy metrics.
//!
//! Per-coarse accuracies are keyed by the *ground-truth* coarse category: a
//! Buildings sample predicted into Water Areas counts against Buildings.
//! Confusion matrices are always emitted at fine granularity; anything
//! coarser is derived by summation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ConfusionMatrix;
use crate::routing::{Mode, RoutedPrediction};
use crate::taxonomy::{FineId, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("predictions and truths differ in length: {preds} vs {truths}")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("cannot score an empty prediction list")]
    Empty,
    #[error("aggregation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("folds mix modes: {0} and {1}")]
    MixedModes(Mode, Mode),
}

/// Metrics of one fold under one inference mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub mode: Mode,
    pub overall_accuracy: f64,
    /// Accuracy over samples whose true fine label falls in each category.
    pub per_coarse_accuracy: BTreeMap<String, f64>,
    /// Fine-granularity confusion, rows = true label, cols = predicted.
    pub confusion: ConfusionMatrix,
}

/// Run metadata carried into reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub spec: String,
    pub taxonomy_hash: String,
}

/// Fold metrics plus mean and sample standard deviation across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub folds: Vec<FoldMetrics>,
    pub mean_overall: f64,
    pub std_overall: f64,
    pub per_coarse_mean: BTreeMap<String, f64>,
    pub per_coarse_std: BTreeMap<String, f64>,
    pub meta: RunMeta,
}

impl ExperimentReport {
    /// `"94.10±0.65"`-style rendering of the overall accuracy, in percent.
    pub fn rendered_overall(&self) -> String {
        format_pct(self.mean_overall, self.std_overall)
    }
}

/// Render a mean and spread as percentages: `format_pct(0.941, 0.0065)`
/// gives `"94.10±0.65"`.
pub fn format_pct(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

/// Score a batch of routed predictions against ground truth.
pub fn score(
    predictions: &[RoutedPrediction],
    truths: &[FineId],
    taxonomy: &Taxonomy,
) -> Result<FoldMetrics, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let f = taxonomy.num_fine();
    let mut confusion = ConfusionMatrix::new(f);
    let mut coarse_total = vec![0u64; taxonomy.num_coarse()];
    let mut coarse_hits = vec![0u64; taxonomy.num_coarse()];
    let mode = predictions[0].mode;
    for (p, &t) in predictions.iter().zip(truths) {
        if t >= f {
            return Err(TaxonomyError::FineOutOfRange(t, f).into());
        }
        if p.fine >= f {
            return Err(TaxonomyError::FineOutOfRange(p.fine, f).into());
        }
        confusion.record(t, p.fine);
        let tc = taxonomy.coarse_of(t)?;
        coarse_total[tc] += 1;
        if p.fine == t {
            coarse_hits[tc] += 1;
        }
    }
    let per_coarse_accuracy = (0..taxonomy.num_coarse())
        .filter(|&c| coarse_total[c] > 0)
        .map(|c| {
            (
                taxonomy.coarse_name(c).to_string(),
                coarse_hits[c] as f64 / coarse_total[c] as f64,
            )
        })
        .collect();
    Ok(FoldMetrics {
        mode,
        overall_accuracy: confusion.accuracy(),
        per_coarse_accuracy,
        confusion,
    })
}

/// Sum a fine-granularity confusion matrix into coarse granularity. Coarse
/// confusion is always derived this way, never recomputed from predictions.
pub fn coarse_confusion(
    confusion: &ConfusionMatrix,
    taxonomy: &Taxonomy,
) -> Result<ConfusionMatrix, EvalError> {
    let f = taxonomy.num_fine();
    if confusion.n_classes() != f {
        return Err(TaxonomyError::FineOutOfRange(confusion.n_classes(), f).into());
    }
    let mut coarse = ConfusionMatrix::new(taxonomy.num_coarse());
    for t in 0..f {
        let tc = taxonomy.coarse_of(t)?;
        for p in 0..f {
            coarse.add(tc, taxonomy.coarse_of(p)?, confusion.get(t, p));
        }
    }
    Ok(coarse)
}

/// Mean and sample (n-1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate fold metrics of one mode into a report.
pub fn aggregate(folds: Vec<FoldMetrics>, meta: RunMeta) -> Result<ExperimentReport, EvalError> {
    if folds.len() < 2 {
        return Err(EvalError::TooFewFolds(folds.len()));
    }
    let mode = folds[0].mode;
    for f in &folds {
        if f.mode != mode {
            return Err(EvalError::MixedModes(mode, f.mode));
        }
    }
    let overall: Vec<f64> = folds.iter().map(|f| f.overall_accuracy).collect();
    let (mean_overall, std_overall) = mean_std(&overall);

    let mut per_coarse_mean = BTreeMap::new();
    let mut per_coarse_std = BTreeMap::new();
    let keys: std::collections::BTreeSet<String> = folds
        .iter()
        .flat_map(|f| f.per_coarse_accuracy.keys().cloned())
        .collect();
    for key in keys {
        let vals: Vec<f64> = folds
            .iter()
            .filter_map(|f| f.per_coarse_accuracy.get(&key).copied())
            .collect();
        let (m, s) = mean_std(&vals);
        per_coarse_mean.insert(key.clone(), m);
        per_coarse_std.insert(key, s);
    }

    Ok(ExperimentReport {
        mode,
        folds,
        mean_overall,
        std_overall,
        per_coarse_mean,
        per_coarse_std,
        meta,
    })
}
