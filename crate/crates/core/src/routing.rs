//! The hierarchical inference engine.
//!
//! A [`HierarchyEnsemble`] bundles one first-level model over coarse
//! categories, one second-level model per category over that category's fine
//! classes, and optionally a flat model over all fine classes. Four inference
//! modes run over it; the hierarchical ones execute exactly one second-level
//! branch per input (pruned execution), which the built-in invocation
//! counters make observable.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    fit, make_table_backend_in_space, BackendError, ClassifierSpec, LabelSpace, LabeledExample,
    TrainedModel,
};
use crate::dataset::{FeatureVector, Sample};
use crate::seed;
use crate::taxonomy::{CoarseId, FineId, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("{0}")]
    Backend(#[from] BackendError),
    #[error("{0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("missing second-level model for coarse category {0}")]
    MissingSecond(CoarseId),
    #[error("missing flat model")]
    MissingFlat,
    #[error("model for {node} has label space {got:?}, expected {expected:?}")]
    SpaceMismatch {
        node: String,
        expected: LabelSpace,
        got: LabelSpace,
    },
    #[error("model for {node} has {got} classes, expected {expected}")]
    ClassCountMismatch {
        node: String,
        expected: usize,
        got: usize,
    },
    #[error("cannot {op} manifest {path}: {msg}")]
    Manifest {
        op: &'static str,
        path: String,
        msg: String,
    },
}

/// Inference scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// First-level argmax selects the one branch that is evaluated.
    TopDown,
    /// Ground-truth coarse label selects the branch (perfect router).
    Oracle,
    /// Flat prediction's coarse parent selects the branch for re-evaluation.
    BottomUp,
    /// Single flat model over all fine classes.
    Flat,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::TopDown, Mode::Oracle, Mode::BottomUp, Mode::Flat];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TopDown => "topdown",
            Mode::Oracle => "oracle",
            Mode::BottomUp => "bottomup",
            Mode::Flat => "flat",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// Outcome of classifying one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedPrediction {
    /// Final fine class (global id).
    pub fine: FineId,
    /// Branch the prediction came from (for `flat`, the parent of the output).
    pub coarse_used: CoarseId,
    /// Maximum predictive probability of the routing step. 1.0 under oracle
    /// routing; the flat model's MPP when that model did the routing.
    pub coarse_mpp: f64,
    /// Maximum predictive probability of the model that produced `fine`.
    pub fine_mpp: f64,
    pub mode: Mode,
}

/// Contention-safe per-node call counters.
#[derive(Debug, Default)]
pub struct CallCounters {
    first: AtomicU64,
    second: Vec<AtomicU64>,
    flat: AtomicU64,
}

/// A snapshot of the counters at one point in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub first: u64,
    pub second: Vec<u64>,
    pub flat: u64,
}

impl CounterSnapshot {
    pub fn second_total(&self) -> u64 {
        self.second.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.first + self.flat + self.second_total()
    }
}

/// First-level model, one second-level model per coarse category, and an
/// optional flat model. Immutable after assembly; all classify operations
/// take `&self` and are safe to call concurrently.
#[derive(Debug)]
pub struct HierarchyEnsemble {
    taxonomy: Taxonomy,
    first: TrainedModel,
    second: Vec<TrainedModel>,
    flat: Option<TrainedModel>,
    counters: CallCounters,
}

impl HierarchyEnsemble {
    pub fn new(
        taxonomy: Taxonomy,
        first: TrainedModel,
        second: Vec<TrainedModel>,
        flat: Option<TrainedModel>,
    ) -> Result<Self, RoutingError> {
        let c = taxonomy.num_coarse();
        check_node(&first, "first", LabelSpace::Coarse, c)?;
        if second.len() != c {
            return Err(RoutingError::MissingSecond(second.len()));
        }
        for (cid, model) in second.iter().enumerate() {
            let expected = taxonomy.fine_set(cid)?.len();
            check_node(
                model,
                &format!("second[{}]", taxonomy.coarse_name(cid)),
                LabelSpace::FineWithin(cid),
                expected,
            )?;
        }
        if let Some(ref flat_model) = flat {
            check_node(flat_model, "flat", LabelSpace::Fine, taxonomy.num_fine())?;
        }
        let counters = CallCounters {
            first: AtomicU64::new(0),
            second: (0..c).map(|_| AtomicU64::new(0)).collect(),
            flat: AtomicU64::new(0),
        };
        Ok(HierarchyEnsemble {
            taxonomy,
            first,
            second,
            flat,
            counters,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn first(&self) -> &TrainedModel {
        &self.first
    }

    pub fn second(&self, c: CoarseId) -> Result<&TrainedModel, RoutingError> {
        self.second.get(c).ok_or(RoutingError::MissingSecond(c))
    }

    pub fn flat(&self) -> Result<&TrainedModel, RoutingError> {
        self.flat.as_ref().ok_or(RoutingError::MissingFlat)
    }

    pub fn has_flat(&self) -> bool {
        self.flat.is_some()
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            first: self.counters.first.load(Ordering::Relaxed),
            second: self
                .counters
                .second
                .iter()
                .map(|c| c.load(Ordering::Relaxed))
                .collect(),
            flat: self.counters.flat.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.first.store(0, Ordering::Relaxed);
        for c in &self.counters.second {
            c.store(0, Ordering::Relaxed);
        }
        self.counters.flat.store(0, Ordering::Relaxed);
    }

    /// First-level argmax picks the branch; only that branch is evaluated.
    pub fn classify_topdown(&self, x: &FeatureVector) -> Result<RoutedPrediction, RoutingError> {
        let first_pv = self.first.predict_proba(x)?;
        self.counters.first.fetch_add(1, Ordering::Relaxed);
        let coarse = first_pv.argmax();
        let (fine, fine_mpp) = self.branch_predict(coarse, x)?;
        Ok(RoutedPrediction {
            fine,
            coarse_used: coarse,
            coarse_mpp: first_pv.mpp(),
            fine_mpp,
            mode: Mode::TopDown,
        })
    }

    /// Route by the ground-truth coarse label, modeling a perfect router.
    pub fn classify_oracle(
        &self,
        x: &FeatureVector,
        true_coarse: CoarseId,
    ) -> Result<RoutedPrediction, RoutingError> {
        if true_coarse >= self.taxonomy.num_coarse() {
            return Err(TaxonomyError::CoarseOutOfRange(true_coarse, self.taxonomy.num_coarse()).into());
        }
        let (fine, fine_mpp) = self.branch_predict(true_coarse, x)?;
        Ok(RoutedPrediction {
            fine,
            coarse_used: true_coarse,
            coarse_mpp: 1.0,
            fine_mpp,
            mode: Mode::Oracle,
        })
    }

    /// Flat prediction maps to its coarse parent; the branch model then
    /// re-evaluates the input and always overrides the flat prediction.
    pub fn classify_bottomup(&self, x: &FeatureVector) -> Result<RoutedPrediction, RoutingError> {
        let flat_model = self.flat()?;
        let flat_pv = flat_model.predict_proba(x)?;
        self.counters.flat.fetch_add(1, Ordering::Relaxed);
        let coarse = self.taxonomy.coarse_of(flat_pv.argmax())?;
        let (fine, fine_mpp) = self.branch_predict(coarse, x)?;
        Ok(RoutedPrediction {
            fine,
            coarse_used: coarse,
            coarse_mpp: flat_pv.mpp(),
            fine_mpp,
            mode: Mode::BottomUp,
        })
    }

    /// Single flat model call.
    pub fn classify_flat(&self, x: &FeatureVector) -> Result<RoutedPrediction, RoutingError> {
        let flat_model = self.flat()?;
        let pv = flat_model.predict_proba(x)?;
        self.counters.flat.fetch_add(1, Ordering::Relaxed);
        let fine = pv.argmax();
        Ok(RoutedPrediction {
            fine,
            coarse_used: self.taxonomy.coarse_of(fine)?,
            coarse_mpp: pv.mpp(),
            fine_mpp: pv.mpp(),
            mode: Mode::Flat,
        })
    }

    fn branch_predict(
        &self,
        coarse: CoarseId,
        x: &FeatureVector,
    ) -> Result<(FineId, f64), RoutingError> {
        let model = self.second(coarse)?;
        let pv = model.predict_proba(x)?;
        self.counters.second[coarse].fetch_add(1, Ordering::Relaxed);
        let local = pv.argmax();
        Ok((self.taxonomy.fine_set(coarse)?[local], pv.mpp()))
    }

    /// Classify a batch in one mode; oracle routing reads each sample's true
    /// coarse label from the taxonomy.
    pub fn classify_batch(
        &self,
        mode: Mode,
        samples: &[Sample],
    ) -> Result<Vec<RoutedPrediction>, RoutingError> {
        samples
            .iter()
            .map(|s| match mode {
                Mode::TopDown => self.classify_topdown(&s.features),
                Mode::Oracle => self.classify_oracle(&s.features, self.taxonomy.coarse_of(s.fine)?),
                Mode::BottomUp => self.classify_bottomup(&s.features),
                Mode::Flat => self.classify_flat(&s.features),
            })
            .collect()
    }

    /// Fraction of samples whose final fine prediction is correct.
    pub fn accuracy(&self, mode: Mode, samples: &[Sample]) -> Result<f64, RoutingError> {
        let preds = self.classify_batch(mode, samples)?;
        let hits = preds
            .iter()
            .zip(samples)
            .filter(|(p, s)| p.fine == s.fine)
            .count();
        Ok(hits as f64 / samples.len().max(1) as f64)
    }
}

fn check_node(
    model: &TrainedModel,
    node: &str,
    expected_space: LabelSpace,
    expected_classes: usize,
) -> Result<(), RoutingError> {
    if model.space != expected_space {
        return Err(RoutingError::SpaceMismatch {
            node: node.to_string(),
            expected: expected_space,
            got: model.space,
        });
    }
    if model.num_classes() != expected_classes {
        return Err(RoutingError::ClassCountMismatch {
            node: node.to_string(),
            expected: expected_classes,
            got: model.num_classes(),
        });
    }
    Ok(())
}

/// Map samples into one node's training examples: coarse targets for the
/// first-level model, local branch indices for a second-level model (samples
/// outside the branch are dropped), fine ids for the flat model.
pub fn node_examples(
    taxonomy: &Taxonomy,
    samples: &[Sample],
    space: LabelSpace,
) -> Result<Vec<LabeledExample>, TaxonomyError> {
    let mut out = Vec::new();
    for s in samples {
        let target = match space {
            LabelSpace::Coarse => Some(taxonomy.coarse_of(s.fine)?),
            LabelSpace::Fine => Some(s.fine),
            LabelSpace::FineWithin(c) => {
                if taxonomy.coarse_of(s.fine)? == c {
                    Some(taxonomy.local_index(s.fine)?)
                } else {
                    None
                }
            }
        };
        if let Some(target) = target {
            out.push(LabeledExample {
                features: s.features.clone(),
                target,
            });
        }
    }
    Ok(out)
}

/// Train every node of a hierarchy with one shared spec: the first-level
/// model on coarse targets, each second-level model on its own category's
/// samples only, and the flat model on all fine targets. Node seeds derive
/// deterministically from `seed`.
pub fn train_ensemble(
    taxonomy: &Taxonomy,
    spec: &ClassifierSpec,
    train: &[Sample],
    val: &[Sample],
    seed: u64,
) -> Result<HierarchyEnsemble, RoutingError> {
    let c_count = taxonomy.num_coarse();
    let mut spaces = vec![LabelSpace::Coarse];
    spaces.extend((0..c_count).map(LabelSpace::FineWithin));
    spaces.push(LabelSpace::Fine);

    let mut models = Vec::with_capacity(spaces.len());
    for (node_index, space) in spaces.iter().enumerate() {
        let train_ex = node_examples(taxonomy, train, *space)?;
        let val_ex = node_examples(taxonomy, val, *space)?;
        let n_classes = match space {
            LabelSpace::Coarse => c_count,
            LabelSpace::FineWithin(c) => taxonomy.fine_set(*c)?.len(),
            LabelSpace::Fine => taxonomy.num_fine(),
        };
        let mut node_spec = spec.clone();
        node_spec.seed = seed::derive2(seed, "node", node_index as u64, 0);
        models.push(fit(&node_spec, *space, n_classes, &train_ex, &val_ex)?);
    }
    let flat = models.pop().expect("flat model trained");
    let first = models.remove(0);
    HierarchyEnsemble::new(taxonomy.clone(), first, models, Some(flat))
}

/// Assemble an all-table ensemble: one stochastic matrix for the first level,
/// one per branch, and optionally one for the flat model. The matrices fix
/// exact, independent per-stage error rates.
pub fn table_ensemble(
    taxonomy: &Taxonomy,
    first_rows: Vec<Vec<f64>>,
    second_rows: Vec<Vec<Vec<f64>>>,
    flat_rows: Option<Vec<Vec<f64>>>,
    seed: u64,
) -> Result<HierarchyEnsemble, RoutingError> {
    let first = make_table_backend_in_space(
        first_rows,
        seed::derive(seed, "table-first"),
        LabelSpace::Coarse,
        taxonomy,
    )?;
    let mut second = Vec::with_capacity(second_rows.len());
    for (c, rows) in second_rows.into_iter().enumerate() {
        second.push(make_table_backend_in_space(
            rows,
            seed::derive2(seed, "table-second", c as u64, 0),
            LabelSpace::FineWithin(c),
            taxonomy,
        )?);
    }
    let flat = flat_rows
        .map(|rows| {
            make_table_backend_in_space(rows, seed::derive(seed, "table-flat"), LabelSpace::Fine, taxonomy)
        })
        .transpose()?;
    HierarchyEnsemble::new(taxonomy.clone(), first, second, flat)
}

/// On-disk description of an ensemble: model file paths per node, relative
/// to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub taxonomy: String,
    pub first: String,
    pub second: BTreeMap<CoarseId, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat: Option<String>,
}

impl EnsembleManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RoutingError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path.as_ref(), text).map_err(|e| RoutingError::Manifest {
            op: "write",
            path: path.as_ref().display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RoutingError> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| RoutingError::Manifest {
                op: "read",
                path: path.as_ref().display().to_string(),
                msg: e.to_string(),
            })?;
        serde_json::from_str(&text).map_err(|e| RoutingError::Manifest {
            op: "parse",
            path: path.as_ref().display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// Load a full ensemble from a manifest file.
pub fn load_ensemble(manifest_path: impl AsRef<Path>) -> Result<HierarchyEnsemble, RoutingError> {
    let manifest_path = manifest_path.as_ref();
    let manifest = EnsembleManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let taxonomy = if manifest.taxonomy == "nw45" {
        Taxonomy::nw45()
    } else {
        Taxonomy::load(base.join(&manifest.taxonomy))?
    };
    let first = TrainedModel::load(base.join(&manifest.first))?;
    let mut second = Vec::new();
    for c in 0..taxonomy.num_coarse() {
        let path = manifest
            .second
            .get(&c)
            .ok_or(RoutingError::MissingSecond(c))?;
        second.push(TrainedModel::load(base.join(path))?);
    }
    let flat = manifest
        .flat
        .as_ref()
        .map(|p| TrainedModel::load(base.join(p)))
        .transpose()?;
    HierarchyEnsemble::new(taxonomy, first, second, flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::diagonal_table;
    use crate::dataset::carrier_samples;
    use proptest::prelude::*;

    fn tax() -> Taxonomy {
        Taxonomy::new(&[
            ("A", vec!["a0", "a1"]),
            ("B", vec!["b0", "b1", "b2"]),
        ])
        .unwrap()
    }

    fn perfect_ensemble(t: &Taxonomy, seed: u64) -> HierarchyEnsemble {
        let second = (0..t.num_coarse())
            .map(|c| diagonal_table(t.fine_set(c).unwrap().len(), 1.0))
            .collect();
        table_ensemble(
            t,
            diagonal_table(t.num_coarse(), 1.0),
            second,
            Some(diagonal_table(t.num_fine(), 1.0)),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn perfect_tables_always_recover_the_true_label() {
        let t = tax();
        let e = perfect_ensemble(&t, 3);
        let samples = carrier_samples(&t, 10);
        for mode in Mode::ALL {
            for (p, s) in e.classify_batch(mode, &samples).unwrap().iter().zip(&samples) {
                assert_eq!(p.fine, s.fine, "mode {mode}");
            }
        }
    }

    #[test]
    fn misroute_confines_prediction_to_the_wrong_branch() {
        let t = tax();
        // First level always swaps A and B.
        let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let second = vec![diagonal_table(2, 1.0), diagonal_table(3, 1.0)];
        let e = table_ensemble(&t, swap, second, None, 5).unwrap();
        for s in carrier_samples(&t, 5) {
            let p = e.classify_topdown(&s.features).unwrap();
            let true_coarse = t.coarse_of(s.fine).unwrap();
            assert_ne!(p.coarse_used, true_coarse);
            assert!(t.fine_set(p.coarse_used).unwrap().contains(&p.fine));
            assert_ne!(p.fine, s.fine, "wrong branch excludes the true label");
        }
    }

    #[test]
    fn pruning_arithmetic_via_invocation_counters() {
        let t = tax();
        let e = perfect_ensemble(&t, 7);
        let samples = carrier_samples(&t, 8);
        let n = samples.len() as u64;

        e.classify_batch(Mode::TopDown, &samples).unwrap();
        let snap = e.counters();
        assert_eq!(snap.first, n);
        assert_eq!(snap.second_total(), n);
        assert_eq!(snap.flat, 0);

        e.reset_counters();
        e.classify_batch(Mode::BottomUp, &samples).unwrap();
        let snap = e.counters();
        assert_eq!(snap.flat, n);
        assert_eq!(snap.second_total(), n);
        assert_eq!(snap.first, 0);

        e.reset_counters();
        e.classify_batch(Mode::Flat, &samples).unwrap();
        let snap = e.counters();
        assert_eq!(snap.total(), n);
        assert_eq!(snap.flat, n);
    }

    #[test]
    fn oracle_agrees_with_topdown_when_router_is_right() {
        let t = tax();
        let e = table_ensemble(
            &t,
            diagonal_table(2, 1.0),
            vec![diagonal_table(2, 0.7), diagonal_table(3, 0.7)],
            None,
            11,
        )
        .unwrap();
        for s in carrier_samples(&t, 20) {
            let td = e.classify_topdown(&s.features).unwrap();
            let or = e
                .classify_oracle(&s.features, t.coarse_of(s.fine).unwrap())
                .unwrap();
            // Router is perfect here, so the same branch model sees the same
            // input in both modes and must emit the same prediction.
            assert_eq!(td.fine, or.fine);
        }
    }

    #[test]
    fn oracle_dominates_topdown_exhaustively() {
        // 50-sample fixture with an imperfect router and imperfect branches:
        // per sample, a correct topdown prediction implies correct routing,
        // and with correct routing oracle runs the identical branch model on
        // the identical input.
        let t = tax();
        let e = table_ensemble(
            &t,
            diagonal_table(2, 0.7),
            vec![diagonal_table(2, 0.8), diagonal_table(3, 0.8)],
            None,
            13,
        )
        .unwrap();
        let samples = carrier_samples(&t, 10);
        assert_eq!(samples.len(), 50);
        let mut td_hits = 0;
        let mut or_hits = 0;
        for s in &samples {
            let td = e.classify_topdown(&s.features).unwrap();
            let or = e
                .classify_oracle(&s.features, t.coarse_of(s.fine).unwrap())
                .unwrap();
            if td.fine == s.fine {
                assert_eq!(or.fine, s.fine, "topdown-correct implies oracle-correct");
                td_hits += 1;
            }
            if or.fine == s.fine {
                or_hits += 1;
            }
        }
        assert!(or_hits >= td_hits);
    }

    #[test]
    fn bottomup_reroutes_flat_misreads_within_the_right_branch() {
        let t = tax();
        // Flat always predicts a0 for everything; its parent is A, so the
        // branch model for A re-evaluates and can fix a1, but B samples are
        // stuck in the wrong branch.
        let mut flat_rows = vec![vec![0.0; 5]; 5];
        for row in &mut flat_rows {
            row[0] = 1.0;
        }
        let e = table_ensemble(
            &t,
            diagonal_table(2, 1.0),
            vec![diagonal_table(2, 1.0), diagonal_table(3, 1.0)],
            Some(flat_rows),
            17,
        )
        .unwrap();
        let a1 = 1;
        let b0 = 2;
        let x_a1 = vec![a1 as f64, 0.0];
        let p = e.classify_bottomup(&x_a1).unwrap();
        assert_eq!(p.fine, a1, "corrected inside the right branch");
        let x_b0 = vec![b0 as f64, 1.0];
        let p = e.classify_bottomup(&x_b0).unwrap();
        assert_eq!(p.coarse_used, 0, "flat misread routes to the wrong branch");
        assert_ne!(p.fine, b0);
    }

    #[test]
    fn ensemble_validation_rejects_mismatched_nodes() {
        let t = tax();
        let first = make_table_backend_in_space(
            diagonal_table(2, 1.0),
            1,
            LabelSpace::Coarse,
            &t,
        )
        .unwrap();
        // Branch model built for the wrong coarse id.
        let wrong = make_table_backend_in_space(
            diagonal_table(2, 1.0),
            2,
            LabelSpace::FineWithin(0),
            &t,
        )
        .unwrap();
        let err = HierarchyEnsemble::new(t.clone(), first.clone(), vec![wrong.clone(), wrong], None)
            .unwrap_err();
        assert!(matches!(err, RoutingError::SpaceMismatch { .. } | RoutingError::ClassCountMismatch { .. }));

        let second_ok = vec![
            make_table_backend_in_space(diagonal_table(2, 1.0), 3, LabelSpace::FineWithin(0), &t)
                .unwrap(),
            make_table_backend_in_space(diagonal_table(3, 1.0), 4, LabelSpace::FineWithin(1), &t)
                .unwrap(),
        ];
        let e = HierarchyEnsemble::new(t, first, second_ok, None).unwrap();
        assert!(matches!(
            e.classify_flat(&vec![0.0, 0.0]),
            Err(RoutingError::MissingFlat)
        ));
    }

    #[test]
    fn node_examples_map_labels_per_space() {
        let t = tax();
        let samples = carrier_samples(&t, 1);
        let coarse = node_examples(&t, &samples, LabelSpace::Coarse).unwrap();
        assert_eq!(coarse.iter().map(|e| e.target).collect::<Vec<_>>(), vec![0, 0, 1, 1, 1]);
        let within_b = node_examples(&t, &samples, LabelSpace::FineWithin(1)).unwrap();
        assert_eq!(within_b.len(), 3);
        assert_eq!(within_b.iter().map(|e| e.target).collect::<Vec<_>>(), vec![0, 1, 2]);
        let fine = node_examples(&t, &samples, LabelSpace::Fine).unwrap();
        assert_eq!(fine.len(), 5);
    }

    #[test]
    fn concurrent_classification_keeps_counters_consistent() {
        let t = tax();
        let e = std::sync::Arc::new(perfect_ensemble(&t, 29));
        let samples = std::sync::Arc::new(carrier_samples(&t, 20));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let e = e.clone();
                let samples = samples.clone();
                std::thread::spawn(move || {
                    e.classify_batch(Mode::TopDown, &samples).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let n = 4 * samples.len() as u64;
        let snap = e.counters();
        assert_eq!(snap.first, n);
        assert_eq!(snap.second_total(), n);
    }

    #[test]
    fn manifest_round_trip_loads_an_equivalent_ensemble() {
        let t = tax();
        let e = perfect_ensemble(&t, 23);
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path().join("tax.json")).unwrap();
        e.first().save(dir.path().join("first.json")).unwrap();
        let mut second = BTreeMap::new();
        for c in 0..t.num_coarse() {
            let name = format!("second{c}.json");
            e.second(c).unwrap().save(dir.path().join(&name)).unwrap();
            second.insert(c, name);
        }
        e.flat().unwrap().save(dir.path().join("flat.json")).unwrap();
        let manifest = EnsembleManifest {
            taxonomy: "tax.json".into(),
            first: "first.json".into(),
            second,
            flat: Some("flat.json".into()),
        };
        let mpath = dir.path().join("manifest.json");
        manifest.save(&mpath).unwrap();
        let loaded = load_ensemble(&mpath).unwrap();
        let samples = carrier_samples(&t, 4);
        for mode in Mode::ALL {
            assert_eq!(
                loaded.accuracy(mode, &samples).unwrap(),
                e.accuracy(mode, &samples).unwrap()
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Random table ensembles obey the structural routing invariants:
        /// branch containment, the oracle/topdown dominance, and the
        /// first-level ceiling on topdown accuracy.
        #[test]
        fn routing_invariants_hold_for_random_tables(
            seed in 0u64..10_000,
            route_diag in 0.2f64..1.0,
            fine_diag in 0.2f64..1.0,
        ) {
            let t = tax();
            let e = table_ensemble(
                &t,
                diagonal_table(2, route_diag),
                vec![diagonal_table(2, fine_diag), diagonal_table(3, fine_diag)],
                Some(diagonal_table(5, fine_diag)),
                seed,
            ).unwrap();
            let samples = carrier_samples(&t, 12);
            let mut td = 0usize;
            let mut or = 0usize;
            let mut routed = 0usize;
            for s in &samples {
                let tc = t.coarse_of(s.fine).unwrap();
                let p_td = e.classify_topdown(&s.features).unwrap();
                let p_or = e.classify_oracle(&s.features, tc).unwrap();
                let p_bu = e.classify_bottomup(&s.features).unwrap();
                for p in [&p_td, &p_or, &p_bu] {
                    prop_assert!(t.fine_set(p.coarse_used).unwrap().contains(&p.fine));
                    prop_assert!((0.0..=1.0).contains(&p.coarse_mpp));
                    prop_assert!((0.0..=1.0).contains(&p.fine_mpp));
                }
                if p_td.fine == s.fine { td += 1; }
                if p_or.fine == s.fine { or += 1; }
                if p_td.coarse_used == tc { routed += 1; }
            }
            prop_assert!(or >= td, "oracle {or} < topdown {td}");
            prop_assert!(routed >= td, "fine-correct implies coarse-correct");
        }
    }
}
