//! Pluggable probability-emitting classifiers.
//!
//! Three kinds exist. `softmax` is multinomial logistic regression; `mlp`
//! adds tanh hidden layers whose widths halve under the `half` capacity
//! preset. Both train by mini-batch gradient descent on cross-entropy with
//! early stopping on validation loss, deterministically for a fixed seed.
//!
//! The third kind, the `table` backend, is a pseudo-classifier defined by a
//! row-stochastic matrix: given an input that carries its true label in
//! feature 0, it emits a one-hot prediction drawn from that label's row.
//! Each draw is keyed by the input's bit pattern, so repeated calls on one
//! input agree while distinct inputs draw independently. It realizes an
//! exact per-stage independence model, which is what the cascade estimator
//! is validated against.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureVector;
use crate::seed;
use crate::taxonomy::{CoarseId, Taxonomy};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid classifier spec: {0}")]
    BadSpec(String),
    #[error("training set is missing label {label} (model has {n_classes} classes)")]
    MissingLabel { label: usize, n_classes: usize },
    #[error("training diverged at epoch {0}: non-finite loss")]
    Diverged(usize),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("table row {0} is not a probability distribution")]
    NotStochastic(usize),
    #[error("table matrix must be square and non-empty")]
    NotSquare,
    #[error("input does not carry a valid label in feature 0: {0}")]
    BadLabelCarrier(f64),
    #[error("table backends are constructed from a matrix, not fitted")]
    TableNotFit,
    #[error("cannot {op} model file {path}: {msg}")]
    ModelFile {
        op: &'static str,
        path: String,
        msg: String,
    },
}

/// Which label set a model's outputs range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "coarse", rename_all = "snake_case")]
pub enum LabelSpace {
    /// All coarse categories.
    Coarse,
    /// All fine classes (global ids).
    Fine,
    /// The fine classes under one coarse category (local indices).
    FineWithin(CoarseId),
}

/// A classifier's output distribution over its label space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    pub probs: Vec<f64>,
    pub space: LabelSpace,
}

impl ProbVector {
    /// Entries must be non-negative and sum to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> bool {
        !self.probs.is_empty()
            && self.probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// Maximum predictive probability: the largest entry.
    pub fn mpp(&self) -> f64 {
        self.probs.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Index of the maximum entry; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Softmax,
    Mlp,
    Table,
}

/// Capacity preset; `half` trains hidden layers at half the full width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Full,
    Half,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: BackendKind,
    pub capacity: Capacity,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hidden widths at full capacity; ignored by `softmax`.
    pub hidden: Vec<usize>,
    pub l2: f64,
    /// Early-stopping patience, in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn softmax(seed: u64) -> Self {
        ClassifierSpec {
            kind: BackendKind::Softmax,
            capacity: Capacity::Full,
            learning_rate: 0.5,
            epochs: 150,
            batch_size: 32,
            hidden: Vec::new(),
            l2: 1e-4,
            patience: 10,
            seed,
        }
    }

    pub fn mlp(seed: u64) -> Self {
        ClassifierSpec {
            kind: BackendKind::Mlp,
            capacity: Capacity::Full,
            learning_rate: 0.3,
            epochs: 250,
            batch_size: 32,
            hidden: vec![32],
            l2: 1e-5,
            patience: 15,
            seed,
        }
    }

    pub fn with_capacity(mut self, capacity: Capacity) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Effective hidden widths after applying the capacity preset.
    pub fn hidden_widths(&self) -> Vec<usize> {
        match self.kind {
            BackendKind::Softmax | BackendKind::Table => Vec::new(),
            BackendKind::Mlp => self
                .hidden
                .iter()
                .map(|&w| match self.capacity {
                    Capacity::Full => w,
                    Capacity::Half => (w / 2).max(1),
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.epochs == 0 {
            return Err(BackendError::BadSpec("epochs must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(BackendError::BadSpec("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(BackendError::BadSpec("batch size must be positive".into()));
        }
        if self.l2 < 0.0 {
            return Err(BackendError::BadSpec("l2 must be non-negative".into()));
        }
        if self.kind == BackendKind::Mlp && (self.hidden.is_empty() || self.hidden.contains(&0)) {
            return Err(BackendError::BadSpec("mlp needs non-empty, positive hidden widths".into()));
        }
        Ok(())
    }
}

/// One training example in a model's own label space.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub target: usize,
}

/// Dense feed-forward network: tanh hidden layers, linear output logits.
/// `softmax` models are the zero-hidden-layer special case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    /// Layer sizes, input first, classes last.
    pub dims: Vec<usize>,
    /// Per layer: row-major `out x in` weights.
    weights: Vec<Vec<f64>>,
    /// Per layer: biases of length `out`.
    biases: Vec<Vec<f64>>,
    l2: f64,
}

impl NeuralNet {
    /// Freshly initialized network with seeded random weights.
    pub fn random(dims: Vec<usize>, l2: f64, seed_value: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output layers");
        let mut rng = seed::rng(seed::derive(seed_value, "net-init"));
        Self::init(dims, l2, &mut rng)
    }

    fn init(dims: Vec<usize>, l2: f64, rng: &mut impl Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in dims.windows(2) {
            let (fan_in, fan_out) = (layer[0], layer[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * scale)
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        NeuralNet {
            dims,
            weights,
            biases,
            l2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Forward pass returning all layer activations (input first, logits last).
    fn forward_full(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = acts.last().unwrap();
            let fan_in = self.dims[l];
            let fan_out = self.dims[l + 1];
            let mut out = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut z = b[o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                out[o] = if l == last { z } else { z.tanh() };
            }
            acts.push(out);
        }
        acts
    }

    /// Output logits for one input.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_full(x).pop().unwrap()
    }

    /// Mean cross-entropy over the batch plus the l2 penalty.
    pub fn loss(&self, batch: &[LabeledExample]) -> f64 {
        let mut total = 0.0;
        for ex in batch {
            let logits = self.logits(&ex.features);
            total += cross_entropy(&logits, ex.target);
        }
        total / batch.len() as f64 + 0.5 * self.l2 * self.weight_sq_norm()
    }

    fn weight_sq_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .map(|w| w * w)
            .sum()
    }

    /// Analytic gradient of [`Self::loss`] in flat parameter order.
    pub fn grad(&self, batch: &[LabeledExample]) -> Vec<f64> {
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let inv_n = 1.0 / batch.len() as f64;

        for ex in batch {
            let acts = self.forward_full(&ex.features);
            let logits = acts.last().unwrap();
            let mut delta = softmax(logits);
            delta[ex.target] -= 1.0;

            for l in (0..self.weights.len()).rev() {
                let fan_in = self.dims[l];
                let fan_out = self.dims[l + 1];
                let input = &acts[l];
                for o in 0..fan_out {
                    gb[l][o] += delta[o] * inv_n;
                    let row = &mut gw[l][o * fan_in..(o + 1) * fan_in];
                    for (gi, xi) in row.iter_mut().zip(input) {
                        *gi += delta[o] * xi * inv_n;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; fan_in];
                    for (i, p) in prev.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (o, d) in delta.iter().enumerate() {
                            acc += self.weights[l][o * fan_in + i] * d;
                        }
                        // tanh'(z) expressed through the activation value
                        *p = acc * (1.0 - input[i] * input[i]);
                    }
                    delta = prev;
                }
            }
        }

        for (gwl, wl) in gw.iter_mut().zip(&self.weights) {
            for (g, w) in gwl.iter_mut().zip(wl) {
                *g += self.l2 * w;
            }
        }

        flatten_params(&gw, &gb)
    }

    /// All parameters (weights then biases, per layer) as one flat vector.
    pub fn params(&self) -> Vec<f64> {
        flatten_params(&self.weights, &self.biases)
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for l in 0..self.weights.len() {
            for w in self.weights[l].iter_mut() {
                *w = *it.next().expect("parameter count matches");
            }
            for b in self.biases[l].iter_mut() {
                *b = *it.next().expect("parameter count matches");
            }
        }
        assert!(it.next().is_none(), "parameter count matches");
    }

    fn sgd_step(&mut self, batch: &[LabeledExample], lr: f64) {
        let grad = self.grad(batch);
        let mut it = grad.iter();
        for l in 0..self.weights.len() {
            for w in self.weights[l].iter_mut() {
                *w -= lr * it.next().unwrap();
            }
            for b in self.biases[l].iter_mut() {
                *b -= lr * it.next().unwrap();
            }
        }
    }
}

fn flatten_params(weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Vec<f64> {
    let mut flat = Vec::new();
    for (w, b) in weights.iter().zip(biases) {
        flat.extend_from_slice(w);
        flat.extend_from_slice(b);
    }
    flat
}

fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[target]
}

/// Row-stochastic pseudo-classifier. `label_map` translates the global label
/// carried in feature 0 into a row index; inputs whose label falls outside
/// the model's space draw uniformly (any such draw is wrong by construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableModel {
    rows: Vec<Vec<f64>>,
    seed: u64,
    label_map: Vec<Option<usize>>,
}

impl TableModel {
    fn new(
        rows: Vec<Vec<f64>>,
        seed: u64,
        label_map: Vec<Option<usize>>,
    ) -> Result<Self, BackendError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(BackendError::NotSquare);
        }
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(BackendError::NotStochastic(i));
            }
        }
        Ok(TableModel {
            rows,
            seed,
            label_map,
        })
    }

    fn draw(&self, x: &[f64]) -> Result<usize, BackendError> {
        let raw = *x.first().ok_or(BackendError::DimMismatch { expected: 1, got: 0 })?;
        if !raw.is_finite() || raw < 0.0 || raw.fract() != 0.0 || raw >= self.label_map.len() as f64 {
            return Err(BackendError::BadLabelCarrier(raw));
        }
        let mut rng = seed::rng(seed::hash_features(self.seed, x));
        let l = self.rows.len();
        let u: f64 = rng.random();
        match self.label_map[raw as usize] {
            Some(row) => {
                let mut acc = 0.0;
                for (j, p) in self.rows[row].iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Ok(j);
                    }
                }
                Ok(l - 1)
            }
            // True label outside this model's space: uniform draw.
            None => Ok(((u * l as f64) as usize).min(l - 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum ModelImpl {
    Net(NeuralNet),
    Table(TableModel),
}

/// Bookkeeping from a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub final_train_loss: f64,
    pub best_val_loss: Option<f64>,
    pub epochs_run: usize,
}

/// An immutable trained classifier; safe to share across threads for
/// concurrent prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ClassifierSpec,
    pub space: LabelSpace,
    pub meta: TrainMeta,
    inner: ModelImpl,
}

impl TrainedModel {
    pub fn num_classes(&self) -> usize {
        match &self.inner {
            ModelImpl::Net(net) => net.num_classes(),
            ModelImpl::Table(t) => t.rows.len(),
        }
    }

    /// Input dimension, when the model constrains it.
    pub fn input_dim(&self) -> Option<usize> {
        match &self.inner {
            ModelImpl::Net(net) => Some(net.input_dim()),
            ModelImpl::Table(_) => None,
        }
    }

    /// Access to network internals (parameter vector, loss, gradient).
    pub fn as_net(&self) -> Option<&NeuralNet> {
        match &self.inner {
            ModelImpl::Net(net) => Some(net),
            ModelImpl::Table(_) => None,
        }
    }

    /// Output distribution for one input.
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<ProbVector, BackendError> {
        match &self.inner {
            ModelImpl::Net(net) => {
                if x.len() != net.input_dim() {
                    return Err(BackendError::DimMismatch {
                        expected: net.input_dim(),
                        got: x.len(),
                    });
                }
                Ok(ProbVector {
                    probs: softmax(&net.logits(x)),
                    space: self.space,
                })
            }
            ModelImpl::Table(t) => {
                let drawn = t.draw(x)?;
                let mut probs = vec![0.0; t.rows.len()];
                probs[drawn] = 1.0;
                Ok(ProbVector {
                    probs,
                    space: self.space,
                })
            }
        }
    }

    /// Argmax of [`Self::predict_proba`]; ties break to the lowest label id.
    pub fn predict(&self, x: &FeatureVector) -> Result<usize, BackendError> {
        Ok(self.predict_proba(x)?.argmax())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| BackendError::ModelFile {
            op: "serialize",
            path: path.as_ref().display().to_string(),
            msg: e.to_string(),
        })?;
        std::fs::write(path.as_ref(), text).map_err(|e| BackendError::ModelFile {
            op: "write",
            path: path.as_ref().display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| BackendError::ModelFile {
            op: "read",
            path: path.as_ref().display().to_string(),
            msg: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| BackendError::ModelFile {
            op: "parse",
            path: path.as_ref().display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// Train a classifier on examples in its own label space. Mini-batch gradient
/// descent on cross-entropy; early-stops when validation loss fails to improve
/// for `patience` epochs and restores the best parameters seen.
pub fn fit(
    spec: &ClassifierSpec,
    space: LabelSpace,
    n_classes: usize,
    train: &[LabeledExample],
    val: &[LabeledExample],
) -> Result<TrainedModel, BackendError> {
    spec.validate()?;
    if spec.kind == BackendKind::Table {
        return Err(BackendError::TableNotFit);
    }
    if train.is_empty() {
        return Err(BackendError::BadSpec("empty training set".into()));
    }
    let dim = train[0].features.len();
    for ex in train.iter().chain(val) {
        if ex.features.len() != dim {
            return Err(BackendError::DimMismatch {
                expected: dim,
                got: ex.features.len(),
            });
        }
    }
    let mut present = vec![false; n_classes];
    for ex in train {
        if ex.target >= n_classes {
            return Err(BackendError::MissingLabel {
                label: ex.target,
                n_classes,
            });
        }
        present[ex.target] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(BackendError::MissingLabel {
            label: missing,
            n_classes,
        });
    }

    let mut dims = vec![dim];
    dims.extend(spec.hidden_widths());
    dims.push(n_classes);

    let mut rng = seed::rng(seed::derive(spec.seed, "fit"));
    let mut net = NeuralNet::init(dims, spec.l2, &mut rng);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..spec.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<LabeledExample> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            net.sgd_step(&batch, spec.learning_rate);
        }
        epochs_run = epoch + 1;

        let train_loss = net.loss(train);
        if !train_loss.is_finite() {
            return Err(BackendError::Diverged(epoch));
        }
        if !val.is_empty() {
            let val_loss = net.loss(val);
            if !val_loss.is_finite() {
                return Err(BackendError::Diverged(epoch));
            }
            if val_loss + 1e-12 < best_val {
                best_val = val_loss;
                best_params = Some(net.params());
                stale = 0;
            } else {
                stale += 1;
                if stale >= spec.patience {
                    break;
                }
            }
        }
    }

    if let Some(params) = best_params {
        net.set_params(&params);
    }
    let meta = TrainMeta {
        final_train_loss: net.loss(train),
        best_val_loss: if val.is_empty() { None } else { Some(best_val) },
        epochs_run,
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        space,
        meta,
        inner: ModelImpl::Net(net),
    })
}

/// Build a table backend over its own label space: the input's feature 0 is
/// taken directly as the row index.
pub fn make_table_backend(rows: Vec<Vec<f64>>, seed: u64) -> Result<TrainedModel, BackendError> {
    let n = rows.len();
    table_model(rows, seed, (0..n).map(Some).collect(), LabelSpace::Fine)
}

/// Build a table backend for one node of a hierarchy: the input carries a
/// global fine id in feature 0, and the taxonomy translates it into this
/// model's row space (coarse parent, local branch index, or identity).
pub fn make_table_backend_in_space(
    rows: Vec<Vec<f64>>,
    seed: u64,
    space: LabelSpace,
    taxonomy: &Taxonomy,
) -> Result<TrainedModel, BackendError> {
    let f = taxonomy.num_fine();
    let map: Vec<Option<usize>> = match space {
        LabelSpace::Fine => (0..f).map(Some).collect(),
        LabelSpace::Coarse => (0..f)
            .map(|g| Some(taxonomy.coarse_of(g).expect("fine id in range")))
            .collect(),
        LabelSpace::FineWithin(c) => {
            let set = taxonomy
                .fine_set(c)
                .map_err(|e| BackendError::BadSpec(e.to_string()))?;
            (0..f).map(|g| set.iter().position(|&x| x == g)).collect()
        }
    };
    let expected = match space {
        LabelSpace::Fine => f,
        LabelSpace::Coarse => taxonomy.num_coarse(),
        LabelSpace::FineWithin(c) => taxonomy.fine_set(c).map(<[usize]>::len).unwrap_or(0),
    };
    if rows.len() != expected {
        return Err(BackendError::BadSpec(format!(
            "table has {} rows but the label space holds {} labels",
            rows.len(),
            expected
        )));
    }
    table_model(rows, seed, map, space)
}

fn table_model(
    rows: Vec<Vec<f64>>,
    seed: u64,
    map: Vec<Option<usize>>,
    space: LabelSpace,
) -> Result<TrainedModel, BackendError> {
    let table = TableModel::new(rows, seed, map)?;
    Ok(TrainedModel {
        spec: ClassifierSpec {
            kind: BackendKind::Table,
            capacity: Capacity::Full,
            learning_rate: 1.0,
            epochs: 1,
            batch_size: 1,
            hidden: Vec::new(),
            l2: 0.0,
            patience: 0,
            seed,
        },
        space,
        meta: TrainMeta::default(),
        inner: ModelImpl::Table(table),
    })
}

/// Diagonal-dominant stochastic matrix: `diag` on the diagonal, the rest
/// spread evenly. The usual way to write down a per-stage accuracy.
pub fn diagonal_table(n: usize, diag: f64) -> Vec<Vec<f64>> {
    assert!(n > 0 && (0.0..=1.0).contains(&diag));
    if n == 1 {
        return vec![vec![1.0]];
    }
    let off = (1.0 - diag) / (n - 1) as f64;
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { diag } else { off }).collect())
        .collect()
}

/// Empirical error structure of one classifier: `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, n_classes: usize) -> Self {
        let mut m = Self::new(n_classes);
        for (t, p) in pairs {
            m.record(t, p);
        }
        m
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn add(&mut self, truth: usize, predicted: usize, count: u64) {
        self.counts[truth][predicted] += count;
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// trace / total.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    /// Row-normalize into a stochastic matrix, e.g. to seed a table backend
    /// from measured behavior. Rows with no observations become uniform.
    pub fn row_stochastic(&self) -> Vec<Vec<f64>> {
        let n = self.counts.len();
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                if sum == 0 {
                    vec![1.0 / n as f64; n]
                } else {
                    row.iter().map(|&c| c as f64 / sum as f64).collect()
                }
            })
            .collect()
    }
}
