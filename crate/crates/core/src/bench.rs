//! Batch-level wall-clock timing of flat vs hierarchical inference.
//!
//! The batch is featurized and materialized in memory before the clock
//! starts, so the measurement covers model evaluation only — no ingestion or
//! I/O. One warm-up pass runs and is discarded before the measured repeats;
//! a monotonic clock times each repeat. The harness is single-threaded by
//! construction: every call runs the batch serially on the calling thread.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::routing::{HierarchyEnsemble, Mode, RoutingError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("{0}")]
    Routing(#[from] RoutingError),
}

/// Timing of one mode over one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub mode: Mode,
    pub batch_size: usize,
    pub repeats: usize,
    pub per_repeat_seconds: Vec<f64>,
    pub total_mean_seconds: f64,
    pub per_image_ms: f64,
}

impl TimingResult {
    /// Build from raw per-repeat measurements, deriving the mean and the
    /// per-image rate.
    pub fn from_measurements(
        mode: Mode,
        batch_size: usize,
        per_repeat_seconds: Vec<f64>,
    ) -> Result<Self, BenchError> {
        if batch_size == 0 {
            return Err(BenchError::EmptyBatch);
        }
        if per_repeat_seconds.is_empty() {
            return Err(BenchError::NoRepeats);
        }
        let repeats = per_repeat_seconds.len();
        let total_mean_seconds = per_repeat_seconds.iter().sum::<f64>() / repeats as f64;
        Ok(TimingResult {
            mode,
            batch_size,
            repeats,
            per_repeat_seconds,
            total_mean_seconds,
            per_image_ms: per_image_ms(total_mean_seconds, batch_size),
        })
    }
}

/// `1000 * total_seconds / batch_size`.
pub fn per_image_ms(total_seconds: f64, batch_size: usize) -> f64 {
    1000.0 * total_seconds / batch_size as f64
}

/// Time a batch under one mode. The same in-memory batch feeds every model
/// pass; for hierarchical modes the clock covers the first pass plus the
/// routed second-level passes, back to back.
pub fn time_batch(
    ensemble: &HierarchyEnsemble,
    mode: Mode,
    batch: &[Sample],
    repeats: usize,
) -> Result<TimingResult, BenchError> {
    if batch.is_empty() {
        return Err(BenchError::EmptyBatch);
    }
    if repeats == 0 {
        return Err(BenchError::NoRepeats);
    }
    // Warm-up pass, discarded.
    ensemble.classify_batch(mode, batch)?;

    let mut per_repeat_seconds = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        ensemble.classify_batch(mode, batch)?;
        per_repeat_seconds.push(start.elapsed().as_secs_f64());
    }
    TimingResult::from_measurements(mode, batch.len(), per_repeat_seconds)
}

/// Format with two decimals above 1.0, four below, so microsecond-scale
/// pseudo-model timings stay legible next to second-scale ones.
fn fmt_val(v: f64) -> String {
    if v >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

/// Render a comparison table plus hierarchical/flat per-image ratios.
pub fn bench_report(results: &[TimingResult]) -> String {
    let mut out = String::new();
    out.push_str("mode      batch  repeats  total_mean_s  per_image_ms\n");
    for r in results {
        out.push_str(&format!(
            "{:<9} {:<6} {:<8} {:<13} {}\n",
            r.mode,
            r.batch_size,
            r.repeats,
            fmt_val(r.total_mean_seconds),
            fmt_val(r.per_image_ms)
        ));
    }
    if let Some(flat) = results.iter().find(|r| r.mode == Mode::Flat) {
        for r in results.iter().filter(|r| r.mode != Mode::Flat) {
            out.push_str(&format!(
                "ratio {}/flat: {:.3}\n",
                r.mode,
                r.per_image_ms / flat.per_image_ms
            ));
        }
    }
    out
}

/// Rows of the comparison as CSV.
pub fn bench_csv(results: &[TimingResult]) -> String {
    let mut out = String::from("mode,batch_size,repeats,total_mean_seconds,per_image_ms\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mode, r.batch_size, r.repeats, r.total_mean_seconds, r.per_image_ms
        ));
    }
    out
}
