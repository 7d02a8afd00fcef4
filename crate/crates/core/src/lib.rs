//! Two-level coarse-to-fine cascaded classification.
//!
//! The crate builds a two-layer label hierarchy (coarse categories over fine
//! classes), trains a probability-emitting classifier at every node, and runs
//! four inference schemes over the resulting ensemble:
//!
//! * `flat` — a single classifier over all fine classes,
//! * `topdown` — route by the first-level argmax, then evaluate only the
//!   selected branch classifier (pruned execution),
//! * `oracle` — route by the ground-truth coarse label (a perfect router),
//! * `bottomup` — map the flat prediction to its coarse parent and
//!   re-classify within that branch.
//!
//! Alongside the inference engine there is a k-fold evaluation harness, a
//! statistical estimator for the accuracy of the cascade (per-branch products
//! weighted by test priors, with a Monte-Carlo cross-check), and a batch
//! timing harness that compares flat and hierarchical inference cost.

pub mod backend;
pub mod bench;
pub mod cli;
pub mod dataset;
pub mod estimator;
pub mod evaluation;
pub mod routing;
pub mod seed;
pub mod taxonomy;

pub use backend::{BackendError, ClassifierSpec, ConfusionMatrix, LabelSpace, ProbVector, TrainedModel};
pub use dataset::{DatasetError, FeatureVector, FoldSplit, ImageGrid, Sample};
pub use routing::{HierarchyEnsemble, Mode, RoutedPrediction, RoutingError};
pub use taxonomy::{Taxonomy, TaxonomyError};
