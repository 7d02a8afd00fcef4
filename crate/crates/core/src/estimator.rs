//! Statistical model of cascade accuracy.
//!
//! Each branch of the two-layer hierarchy succeeds when its two stages both
//! succeed; under the independence assumption the branch accuracy is the
//! product of the class-conditional routing accuracy and the standalone
//! branch accuracy, and the overall accuracy is the prior-weighted sum of
//! branch products. A misrouted sample is counted as a failure, which is
//! exact for disjoint branches since the wrong branch's label set excludes
//! the true label.
//!
//! The product can never exceed either factor, so the hierarchical estimate
//! is bounded by the first-level accuracy alone: stacked stages accumulate
//! error. A Monte-Carlo sampler of the same assumption cross-checks the
//! closed form, and `measure_cascade_inputs` extracts the inputs from a real
//! ensemble on a test set.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::routing::{HierarchyEnsemble, RoutingError};
use crate::seed;
use crate::taxonomy::TaxonomyError;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("{name} must lie in [0,1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("cascade inputs have inconsistent branch counts")]
    LengthMismatch,
    #[error("priors sum to {0}, expected 1")]
    PriorsNotNormalized(f64),
    #[error("test set has no samples in coarse category {0:?}")]
    EmptyCategory(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("draw count must be positive")]
    NoDraws,
    #[error("{0}")]
    Routing(#[from] RoutingError),
    #[error("{0}")]
    Taxonomy(#[from] TaxonomyError),
}

/// Per-branch inputs of the cascade model, indexed by coarse id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeInputs {
    /// Class-conditional first-level routing accuracy per category.
    pub route_acc: Vec<f64>,
    /// Standalone second-level accuracy per category.
    pub fine_acc: Vec<f64>,
    /// Share of test samples per category; sums to 1.
    pub prior: Vec<f64>,
}

impl CascadeInputs {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.route_acc.len() != self.fine_acc.len() || self.route_acc.len() != self.prior.len()
        {
            return Err(EstimatorError::LengthMismatch);
        }
        for (name, values) in [
            ("route_acc", &self.route_acc),
            ("fine_acc", &self.fine_acc),
            ("prior", &self.prior),
        ] {
            for &v in values.iter() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(EstimatorError::OutOfRange { name, value: v });
                }
            }
        }
        let sum: f64 = self.prior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EstimatorError::PriorsNotNormalized(sum));
        }
        Ok(())
    }
}

/// Analytic branch products and their prior-weighted overall accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEstimate {
    pub per_branch: Vec<f64>,
    pub overall: f64,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub draws: u64,
}

/// Accuracy of one branch: the product of its stage accuracies. Never
/// exceeds either factor.
pub fn estimate_branch(route_acc: f64, fine_acc: f64) -> Result<f64, EstimatorError> {
    for (name, v) in [("route_acc", route_acc), ("fine_acc", fine_acc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EstimatorError::OutOfRange { name, value: v });
        }
    }
    Ok(route_acc * fine_acc)
}

/// Branch products weighted by the test prior.
pub fn estimate_overall(inputs: &CascadeInputs) -> Result<CascadeEstimate, EstimatorError> {
    inputs.validate()?;
    let per_branch: Vec<f64> = inputs
        .route_acc
        .iter()
        .zip(&inputs.fine_acc)
        .map(|(&r, &f)| r * f)
        .collect();
    let overall = per_branch
        .iter()
        .zip(&inputs.prior)
        .map(|(&b, &p)| p * b)
        .sum();
    Ok(CascadeEstimate { per_branch, overall })
}

/// Simulate the independence assumption directly: draw a category from the
/// prior, a routing success from `route_acc`, and a fine success from
/// `fine_acc` conditional on routing (a misroute is a failure). Converges to
/// [`estimate_overall`] as `n` grows; reproducible for a fixed seed.
pub fn monte_carlo_cascade(
    inputs: &CascadeInputs,
    n: u64,
    seed_value: u64,
) -> Result<McEstimate, EstimatorError> {
    inputs.validate()?;
    if n == 0 {
        return Err(EstimatorError::NoDraws);
    }
    let mut rng = seed::rng(seed::derive(seed_value, "mc-cascade"));
    let mut hits = 0u64;
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut branch = inputs.prior.len() - 1;
        for (c, &p) in inputs.prior.iter().enumerate() {
            acc += p;
            if u < acc {
                branch = c;
                break;
            }
        }
        let routed = rng.random::<f64>() < inputs.route_acc[branch];
        if routed && rng.random::<f64>() < inputs.fine_acc[branch] {
            hits += 1;
        }
    }
    let mean = hits as f64 / n as f64;
    let stderr = (mean * (1.0 - mean) / n as f64).sqrt();
    Ok(McEstimate {
        mean,
        stderr,
        draws: n,
    })
}

/// Measure cascade inputs from a real ensemble on a test set:
/// `route_acc[c]` is the share of true-c samples the first level routes to c,
/// `fine_acc[c]` the standalone branch accuracy on true-c samples, and
/// `prior[c]` the true-c share of the test set.
pub fn measure_cascade_inputs(
    ensemble: &HierarchyEnsemble,
    test: &[Sample],
) -> Result<CascadeInputs, EstimatorError> {
    if test.is_empty() {
        return Err(EstimatorError::EmptyTestSet);
    }
    let taxonomy = ensemble.taxonomy();
    let c_count = taxonomy.num_coarse();
    let mut totals = vec![0u64; c_count];
    let mut routed = vec![0u64; c_count];
    let mut fine_hits = vec![0u64; c_count];
    for s in test {
        let tc = taxonomy.coarse_of(s.fine)?;
        totals[tc] += 1;
        let predicted_coarse = ensemble.first().predict(&s.features).map_err(RoutingError::from)?;
        if predicted_coarse == tc {
            routed[tc] += 1;
        }
        let local = taxonomy.local_index(s.fine)?;
        let branch_pred = ensemble
            .second(tc)?
            .predict(&s.features)
            .map_err(RoutingError::from)?;
        if branch_pred == local {
            fine_hits[tc] += 1;
        }
    }
    if let Some(empty) = totals.iter().position(|&t| t == 0) {
        return Err(EstimatorError::EmptyCategory(
            taxonomy.coarse_name(empty).to_string(),
        ));
    }
    let n = test.len() as f64;
    Ok(CascadeInputs {
        route_acc: routed
            .iter()
            .zip(&totals)
            .map(|(&r, &t)| r as f64 / t as f64)
            .collect(),
        fine_acc: fine_hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| h as f64 / t as f64)
            .collect(),
        prior: totals.iter().map(|&t| t as f64 / n).collect(),
    })
}
