//! Score heads, judge panel, and the probit preference link.
//!
//! An [`EvaluatorModel`] owns one [`QualityHead`] per rated dimension plus a
//! [`JudgePanel`] of per-judge reliability parameters. A head maps an item
//! embedding to a scalar quality score; [`preference_probability`] turns a
//! score difference into the probability that the second item wins a pairwise
//! comparison, via the normal CDF:
//!
//! ```text
//! P(B wins | A, B) = Phi((f(B) - f(A)) / (sqrt(2) * sigma))
//! ```
//!
//! `sigma` is a fixed per-head comparison-noise scale, not a trained
//! parameter; the score function carries all learned structure.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The ten rated dialogue dimensions, in canonical sheet order.
pub const DIMENSION_HEADS: [&str; 10] = [
    "Accuracy",
    "Logicality",
    "Conversationality",
    "Relevance",
    "Personalization",
    "Creativity",
    "Interactivity",
    "Emotionality",
    "Informativeness",
    "Safety",
];

/// The aggregate head every model carries.
pub const OVERALL_HEAD: &str = "Overall";

/// Probabilities produced by [`preference_probability`] are clamped into
/// `[PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR]` so downstream logs stay finite.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// True if `name` is a head this crate knows how to train and serialize.
pub fn is_known_head(name: &str) -> bool {
    name == OVERALL_HEAD || DIMENSION_HEADS.contains(&name)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embedding for item `{id}` has dimension {got}, expected {want}")]
    DimensionMismatch { id: String, got: usize, want: usize },
    #[error("embedding for item `{id}` has a non-finite value at index {index}")]
    NonFiniteEmbedding { id: String, index: usize },
    #[error("embedding for item `{id}` is empty")]
    EmptyEmbedding { id: String },
    #[error("item `{id}` already present in store")]
    DuplicateItem { id: String },
    #[error("item `{id}` not present in store")]
    UnknownItem { id: String },
    #[error("layer dims must be [input_dim, ..., 1] with positive entries, got {0:?}")]
    BadLayerDims(String),
    #[error("sigma must be finite and positive, got {0}")]
    BadSigma(f64),
    #[error("non-finite input to normal_cdf: {0}")]
    NonFiniteCdfInput(f64),
    #[error("non-finite score passed to preference_probability: ({0}, {1})")]
    NonFiniteScore(f64, f64),
    #[error("head `{0}` not present in model")]
    UnknownHead(String),
    #[error("head name `{0}` is not Overall or one of the ten dimension heads")]
    UnrecognizedHead(String),
    #[error("model has no {} head", OVERALL_HEAD)]
    MissingOverallHead,
    #[error("judge `{judge}` has no reliability entry for head `{head}`")]
    UnknownJudgeHead { judge: String, head: String },
    #[error("record `{pair_id}` compares an item with itself (`{item}`)")]
    SelfComparison { pair_id: String, item: String },
    #[error(
        "record `{pair_id}`: judge `{judge}` is missing the {} label",
        OVERALL_HEAD
    )]
    JudgeMissingOverall { pair_id: String, judge: String },
    #[error("record `{pair_id}` carries no judge labels")]
    NoLabels { pair_id: String },
}

/// One side of a pairwise comparison by a judge: first item wins, second item
/// wins, or the judge declines to pick a winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JudgeLabel {
    #[serde(rename = "A")]
    WinA,
    #[serde(rename = "B")]
    WinB,
    Fair,
}

impl JudgeLabel {
    /// The label this judge would have given with the items presented in the
    /// opposite order. `Fair` is its own mirror.
    pub fn mirror(self) -> Self {
        match self {
            JudgeLabel::WinA => JudgeLabel::WinB,
            JudgeLabel::WinB => JudgeLabel::WinA,
            JudgeLabel::Fair => JudgeLabel::Fair,
        }
    }
}

/// An item id together with its embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedItem {
    pub id: String,
    pub embedding: Vec<f64>,
}

impl EmbeddedItem {
    /// Build an item, rejecting empty or non-finite embeddings.
    pub fn new(id: impl Into<String>, embedding: Vec<f64>) -> Result<Self, ModelError> {
        let id = id.into();
        if embedding.is_empty() {
            return Err(ModelError::EmptyEmbedding { id });
        }
        if let Some(index) = embedding.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding { id, index });
        }
        Ok(Self { id, embedding })
    }
}

/// In-memory map from item id to a validated fixed-dimension embedding.
#[derive(Debug, Clone, Default)]
pub struct ItemStore {
    dim: usize,
    items: BTreeMap<String, Vec<f64>>,
}

impl ItemStore {
    pub fn new(dim: usize) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::BadLayerDims(
                "embedding dim must be >= 1".into(),
            ));
        }
        Ok(Self {
            dim,
            items: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Insert a validated item. Duplicate ids and dimension mismatches are
    /// rejected rather than silently overwritten.
    pub fn insert(&mut self, item: EmbeddedItem) -> Result<(), ModelError> {
        if item.embedding.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                id: item.id,
                got: item.embedding.len(),
                want: self.dim,
            });
        }
        if self.items.contains_key(&item.id) {
            return Err(ModelError::DuplicateItem { id: item.id });
        }
        self.items.insert(item.id, item.embedding);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.items.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f64], ModelError> {
        self.get(id)
            .ok_or_else(|| ModelError::UnknownItem { id: id.to_string() })
    }

    /// Item ids in sorted order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }
}

/// One pairwise comparison with the labels every judge gave it, keyed
/// `judge id -> head name -> label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: String,
    pub item_a: String,
    pub item_b: String,
    pub labels: BTreeMap<String, BTreeMap<String, JudgeLabel>>,
}

impl PreferenceRecord {
    /// Check structural invariants: the two items differ, at least one judge
    /// is present, and every judge carries the Overall label.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.item_a == self.item_b {
            return Err(ModelError::SelfComparison {
                pair_id: self.pair_id.clone(),
                item: self.item_a.clone(),
            });
        }
        if self.labels.is_empty() {
            return Err(ModelError::NoLabels {
                pair_id: self.pair_id.clone(),
            });
        }
        for (judge, heads) in &self.labels {
            if !heads.contains_key(OVERALL_HEAD) {
                return Err(ModelError::JudgeMissingOverall {
                    pair_id: self.pair_id.clone(),
                    judge: judge.clone(),
                });
            }
        }
        Ok(())
    }

    /// Labels cast for `head`, in sorted judge order. Judges that did not rate
    /// this head are absent.
    pub fn labels_for_head<'a>(
        &'a self,
        head: &'a str,
    ) -> impl Iterator<Item = (&'a str, JudgeLabel)> + 'a {
        self.labels
            .iter()
            .filter_map(move |(judge, heads)| heads.get(head).map(|l| (judge.as_str(), *l)))
    }

    /// Number of judges that rated `head` with a non-Fair label.
    pub fn non_fair_count(&self, head: &str) -> usize {
        self.labels_for_head(head)
            .filter(|(_, l)| *l != JudgeLabel::Fair)
            .count()
    }
}

/// Standard logistic function `1 / (1 + exp(-x))`.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standard normal CDF, computed via the complementary error function.
///
/// # Errors
/// Rejects non-finite inputs.
pub fn normal_cdf(z: f64) -> Result<f64, ModelError> {
    if !z.is_finite() {
        return Err(ModelError::NonFiniteCdfInput(z));
    }
    Ok(phi(z))
}

/// Unchecked standard normal CDF for internal hot paths; callers guarantee a
/// finite argument (NaN propagates and is caught by the loss guard upstream).
#[inline]
pub(crate) fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density, the derivative of [`normal_cdf`].
#[inline]
pub(crate) fn phi_density(z: f64) -> f64 {
    const INV_SQRT_TWO_PI: f64 = 0.3989422804014327;
    INV_SQRT_TWO_PI * (-0.5 * z * z).exp()
}

/// Probability that the item scored `score_b` beats the item scored
/// `score_a`, given comparison noise `sigma`.
///
/// The result is clamped into `[PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR]`.
///
/// # Errors
/// Rejects non-finite scores and non-positive or non-finite `sigma`.
pub fn preference_probability(score_a: f64, score_b: f64, sigma: f64) -> Result<f64, ModelError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(ModelError::BadSigma(sigma));
    }
    if !score_a.is_finite() || !score_b.is_finite() {
        return Err(ModelError::NonFiniteScore(score_a, score_b));
    }
    let z = (score_b - score_a) / (std::f64::consts::SQRT_2 * sigma);
    Ok(phi(z).clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR))
}

/// A multilayer perceptron scoring head: tanh hidden layers, identity output,
/// plus the fixed comparison-noise scale `sigma` used by the preference link.
///
/// Weights are stored row-major per layer (`rows = out_dim`, `cols = in_dim`).
/// Evaluation order is fixed, so identical inputs give bit-identical scores.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityHead {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    sigma: f64,
}

/// Post-activation values per layer from [`QualityHead::forward_trace`];
/// consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` the output of
    /// layer `l` (tanh for hidden layers, identity for the last).
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> f64 {
        self.activations.last().expect("trace has layers")[0]
    }
}

fn check_layer_dims(layer_dims: &[usize]) -> Result<(), ModelError> {
    let bad = |msg: String| Err(ModelError::BadLayerDims(msg));
    if layer_dims.len() < 2 {
        return bad(format!("need at least [input_dim, 1], got {layer_dims:?}"));
    }
    if layer_dims.contains(&0) {
        return bad(format!("zero-width layer in {layer_dims:?}"));
    }
    if *layer_dims.last().unwrap() != 1 {
        return bad(format!("output width must be 1, got {layer_dims:?}"));
    }
    Ok(())
}

impl QualityHead {
    /// A head with every weight and bias at zero. Scores everything 0.
    pub fn zeroed(layer_dims: Vec<usize>, sigma: f64) -> Result<Self, ModelError> {
        check_layer_dims(&layer_dims)?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ModelError::BadSigma(sigma));
        }
        let n_layers = layer_dims.len() - 1;
        let weights = (0..n_layers)
            .map(|l| vec![0.0; layer_dims[l + 1] * layer_dims[l]])
            .collect();
        let biases = (0..n_layers)
            .map(|l| vec![0.0; layer_dims[l + 1]])
            .collect();
        Ok(Self {
            layer_dims,
            weights,
            biases,
            sigma,
        })
    }

    /// Training initialization: hidden-layer weights drawn from a normal with
    /// std `1 / sqrt(fan_in)`, zero biases, and an all-zero output layer so
    /// initial scores are exactly 0 (putting the preference probability at
    /// exactly 1/2 before the first step).
    pub fn with_training_init<R: Rng>(
        layer_dims: Vec<usize>,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut head = Self::zeroed(layer_dims, sigma)?;
        let hidden_layers = head.n_layers().saturating_sub(1);
        for l in 0..hidden_layers {
            let std = 1.0 / (head.layer_dims[l] as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            for w in head.weights[l].iter_mut() {
                *w = dist.sample(rng);
            }
        }
        Ok(head)
    }

    /// Every layer (output included) randomized; for gradient checks and
    /// diagnostics where a nonzero score surface is needed straight away.
    pub fn with_random_weights<R: Rng>(
        layer_dims: Vec<usize>,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut head = Self::zeroed(layer_dims, sigma)?;
        for l in 0..head.n_layers() {
            let std = 1.0 / (head.layer_dims[l] as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            for w in head.weights[l].iter_mut() {
                *w = dist.sample(rng);
            }
            for b in head.biases[l].iter_mut() {
                *b = 0.1 * dist.sample(rng);
            }
        }
        Ok(head)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub(crate) fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        sigma: f64,
    ) -> Result<Self, ModelError> {
        let mut head = Self::zeroed(layer_dims, sigma)?;
        for l in 0..head.n_layers() {
            if weights[l].len() != head.weights[l].len() || biases[l].len() != head.biases[l].len()
            {
                return Err(ModelError::BadLayerDims("parameter shape mismatch".into()));
            }
        }
        head.weights = weights;
        head.biases = biases;
        Ok(head)
    }

    /// Total number of scalar parameters (weights and biases of all layers).
    pub fn param_len(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Read parameter `i` in flat order: layer 0 weights row-major, layer 0
    /// biases, layer 1 weights, ... The optimizer and the finite-difference
    /// harness share this indexing.
    pub fn param_get(&self, mut i: usize) -> f64 {
        for l in 0..self.n_layers() {
            if i < self.weights[l].len() {
                return self.weights[l][i];
            }
            i -= self.weights[l].len();
            if i < self.biases[l].len() {
                return self.biases[l][i];
            }
            i -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    /// Write parameter `i` in flat order (see [`Self::param_get`]).
    pub fn param_set(&mut self, mut i: usize, value: f64) {
        for l in 0..self.n_layers() {
            if i < self.weights[l].len() {
                self.weights[l][i] = value;
                return;
            }
            i -= self.weights[l].len();
            if i < self.biases[l].len() {
                self.biases[l][i] = value;
                return;
            }
            i -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, id: &str, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                id: id.to_string(),
                got: x.len(),
                want: self.input_dim(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding {
                id: id.to_string(),
                index,
            });
        }
        Ok(())
    }

    /// Score a validated item.
    ///
    /// # Errors
    /// Rejects embeddings whose dimension does not match the head input, and
    /// embeddings containing NaN or infinities.
    pub fn score(&self, item: &EmbeddedItem) -> Result<f64, ModelError> {
        self.check_input(&item.id, &item.embedding)?;
        Ok(self.forward(&item.embedding))
    }

    /// Raw forward pass; `x` must already have the right dimension.
    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            a = self.layer_forward(l, &a);
        }
        a[0]
    }

    /// Forward pass that keeps per-layer activations for backprop.
    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut activations = Vec::with_capacity(self.n_layers() + 1);
        activations.push(x.to_vec());
        for l in 0..self.n_layers() {
            let next = self.layer_forward(l, activations.last().unwrap());
            activations.push(next);
        }
        ForwardTrace { activations }
    }

    fn layer_forward(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.layer_dims[l + 1], self.layer_dims[l]);
        let last = l == self.n_layers() - 1;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.weights[l][r * cols..(r + 1) * cols];
            let mut z = self.biases[l][r];
            for (w, v) in row.iter().zip(input) {
                z += w * v;
            }
            out.push(if last { z } else { z.tanh() });
        }
        out
    }

    /// Accumulate `upstream * d(score)/d(param)` into `grad` (flat parameter
    /// order) for the input recorded in `trace`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.param_len());
        let mut delta = vec![upstream];
        // Flat offset of layer l's weights: sum of earlier layers' params.
        let mut offsets = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for l in 0..self.n_layers() {
            offsets.push(off);
            off += self.weights[l].len() + self.biases[l].len();
        }
        for l in (0..self.n_layers()).rev() {
            let (rows, cols) = (self.layer_dims[l + 1], self.layer_dims[l]);
            let input = &trace.activations[l];
            let w_off = offsets[l];
            let b_off = w_off + self.weights[l].len();
            for r in 0..rows {
                let d = delta[r];
                let g_row = &mut grad[w_off + r * cols..w_off + (r + 1) * cols];
                for (g, v) in g_row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[b_off + r] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; cols];
                for r in 0..rows {
                    let d = delta[r];
                    let row = &self.weights[l][r * cols..(r + 1) * cols];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                // The producing layer is tanh; fold in its derivative.
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
}

/// Reliability of one judge on one head, stored as unconstrained logits.
///
/// `alpha = logistic(alpha_logit)` is the hit rate: the probability the judge
/// votes for the second item when the second item truly wins. `beta` is the
/// correct-rejection rate: the probability the judge votes for the first item
/// when the first item truly wins. Both therefore stay in (0, 1) under any
/// gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeReliability {
    pub alpha_logit: f64,
    pub beta_logit: f64,
}

impl JudgeReliability {
    pub fn from_rates(alpha: f64, beta: f64) -> Self {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        Self {
            alpha_logit: logit(alpha),
            beta_logit: logit(beta),
        }
    }

    pub fn alpha(&self) -> f64 {
        logistic(self.alpha_logit)
    }

    pub fn beta(&self) -> f64 {
        logistic(self.beta_logit)
    }

    /// `(alpha, beta)` as probabilities.
    pub fn values(&self) -> (f64, f64) {
        (self.alpha(), self.beta())
    }
}

/// Per-judge, per-head reliability parameters. Judges are kept in sorted-id
/// order, so panels built from the same label set are identical regardless of
/// record order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgePanel {
    by_judge: BTreeMap<String, BTreeMap<String, JudgeReliability>>,
}

impl JudgePanel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Judge ids in panel order (sorted).
    pub fn judges(&self) -> impl Iterator<Item = &str> {
        self.by_judge.keys().map(String::as_str)
    }

    pub fn judge_count(&self) -> usize {
        self.by_judge.len()
    }

    pub fn heads_for(&self, judge: &str) -> Option<impl Iterator<Item = &str>> {
        self.by_judge
            .get(judge)
            .map(|m| m.keys().map(String::as_str))
    }

    pub fn set(&mut self, judge: &str, head: &str, reliability: JudgeReliability) {
        self.by_judge
            .entry(judge.to_string())
            .or_default()
            .insert(head.to_string(), reliability);
    }

    pub fn get(&self, judge: &str, head: &str) -> Result<JudgeReliability, ModelError> {
        self.by_judge
            .get(judge)
            .and_then(|m| m.get(head))
            .copied()
            .ok_or_else(|| ModelError::UnknownJudgeHead {
                judge: judge.to_string(),
                head: head.to_string(),
            })
    }

    /// `(alpha, beta)` for one judge on one head.
    pub fn reliability_values(&self, judge: &str, head: &str) -> Result<(f64, f64), ModelError> {
        Ok(self.get(judge, head)?.values())
    }
}

/// Run metadata carried on the in-memory model. The binary model format has
/// no metadata section (a timestamp would break byte-identical reruns), so
/// this is not persisted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMetadata {
    /// SHA-256 hex digest of the resolved training configuration.
    pub config_digest: String,
    pub seed: u64,
    pub created_unix: u64,
}

/// A trained evaluator: one score head per rated dimension plus the panel of
/// judge reliabilities estimated alongside them.
#[derive(Debug, Clone)]
pub struct EvaluatorModel {
    pub embedding_dim: usize,
    pub heads: BTreeMap<String, QualityHead>,
    pub panel: JudgePanel,
    pub metadata: ModelMetadata,
}

impl EvaluatorModel {
    /// Structural checks: an Overall head exists, all head names are known,
    /// and every head consumes `embedding_dim` inputs.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.heads.contains_key(OVERALL_HEAD) {
            return Err(ModelError::MissingOverallHead);
        }
        for (name, head) in &self.heads {
            if !is_known_head(name) {
                return Err(ModelError::UnrecognizedHead(name.clone()));
            }
            if head.input_dim() != self.embedding_dim {
                return Err(ModelError::DimensionMismatch {
                    id: format!("head {name}"),
                    got: head.input_dim(),
                    want: self.embedding_dim,
                });
            }
        }
        Ok(())
    }

    pub fn head(&self, name: &str) -> Result<&QualityHead, ModelError> {
        self.heads
            .get(name)
            .ok_or_else(|| ModelError::UnknownHead(name.to_string()))
    }

    /// Quality score of `item` under head `name`.
    pub fn score(&self, name: &str, item: &EmbeddedItem) -> Result<f64, ModelError> {
        self.head(name)?.score(item)
    }

    /// Probability that `item_b` beats `item_a` under head `name`.
    pub fn preference(
        &self,
        name: &str,
        item_a: &EmbeddedItem,
        item_b: &EmbeddedItem,
    ) -> Result<f64, ModelError> {
        let head = self.head(name)?;
        let fa = head.score(item_a)?;
        let fb = head.score(item_b)?;
        preference_probability(fa, fb, head.sigma())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn item(id: &str, e: &[f64]) -> EmbeddedItem {
        EmbeddedItem::new(id, e.to_vec()).unwrap()
    }

    /// Straight-line forward pass kept deliberately independent of the
    /// implementation under test: explicit index arithmetic, no shared
    /// helpers.
    fn oracle_forward(head: &QualityHead, x: &[f64]) -> f64 {
        let dims = head.layer_dims();
        let mut current = x.to_vec();
        for l in 0..dims.len() - 1 {
            let rows = dims[l + 1];
            let cols = dims[l];
            let mut next = vec![0.0f64; rows];
            for r in 0..rows {
                let mut acc = head.biases(l)[r];
                for c in 0..cols {
                    acc += head.weights(l)[r * cols + c] * current[c];
                }
                next[r] = acc;
            }
            if l + 1 < dims.len() - 1 {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            current = next;
        }
        current[0]
    }

    /// Simpson's-rule integral of the standard normal density from 0 to z.
    fn oracle_cdf(z: f64) -> f64 {
        let n = 20_000; // even
        let h = z / n as f64;
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = density(0.0) + density(z);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * density(k as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = stream(11, "test/forward-oracle");
        for trial in 0..20 {
            let dims = vec![6, 9, 4, 1];
            let head = QualityHead::with_random_weights(dims, 1.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..6)
                .map(|i| ((trial * 7 + i) as f64 * 0.37).sin())
                .collect();
            let got = head.forward(&x);
            let want = oracle_forward(&head, &x);
            assert!(
                (got - want).abs() <= 1e-12,
                "trial {trial}: forward {got} vs oracle {want}"
            );
        }
    }

    #[test]
    fn score_checks_dimensions_and_finiteness() {
        let head = QualityHead::zeroed(vec![3, 1], 1.0).unwrap();
        let short = item("short", &[1.0, 2.0]);
        assert!(matches!(
            head.score(&short),
            Err(ModelError::DimensionMismatch {
                got: 2,
                want: 3,
                ..
            })
        ));
        assert!(EmbeddedItem::new("nan", vec![1.0, f64::NAN, 0.0]).is_err());
        assert!(EmbeddedItem::new("empty", vec![]).is_err());
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(normal_cdf(0.0).unwrap(), 0.5);
        assert!((normal_cdf(1.0).unwrap() - 0.8413447).abs() < 1e-6);
        assert!((normal_cdf(-2.0).unwrap() - 0.0227501).abs() < 1e-6);
        assert!(normal_cdf(f64::NAN).is_err());
        assert!(normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn normal_cdf_matches_quadrature() {
        for &z in &[-3.0, -2.0, -1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 2.0, 3.0] {
            let got = normal_cdf(z).unwrap();
            let want = oracle_cdf(z);
            assert!(
                (got - want).abs() < 1e-9,
                "z = {z}: {got} vs quadrature {want}"
            );
        }
    }

    #[test]
    fn normal_cdf_is_monotone() {
        let mut prev = 0.0;
        let mut z = -8.0;
        while z <= 8.0 {
            let p = normal_cdf(z).unwrap();
            assert!(p >= prev, "not monotone at z = {z}");
            assert!((0.0..=1.0).contains(&p));
            prev = p;
            z += 0.01;
        }
    }

    #[test]
    fn preference_probability_reference_points() {
        // Equal scores: exactly one half.
        assert_eq!(preference_probability(0.7, 0.7, 2.0).unwrap(), 0.5);
        // Score gap sqrt(2) at sigma 1 reduces to Phi(1).
        let p = preference_probability(0.0, std::f64::consts::SQRT_2, 1.0).unwrap();
        assert_eq!(p, normal_cdf(1.0).unwrap());
        // Guards.
        assert!(preference_probability(0.0, 1.0, 0.0).is_err());
        assert!(preference_probability(0.0, 1.0, -1.0).is_err());
        assert!(preference_probability(f64::NAN, 1.0, 1.0).is_err());
        // Extreme gaps stay inside the clamp.
        let p = preference_probability(0.0, 1e6, 1.0).unwrap();
        assert!(p <= 1.0 - PROBABILITY_FLOOR);
        let p = preference_probability(1e6, 0.0, 1.0).unwrap();
        assert!(p >= PROBABILITY_FLOOR);
    }

    #[test]
    fn translation_of_output_bias_shifts_scores_and_preserves_preference() {
        let mut rng = stream(5, "test/translation");
        let head = QualityHead::with_random_weights(vec![4, 8, 1], 1.0, &mut rng).unwrap();
        let mut shifted = head.clone();
        let last = shifted.n_layers() - 1;
        let bias_index = shifted.param_len() - 1;
        let c = 3.25;
        let _ = last;
        shifted.param_set(bias_index, shifted.param_get(bias_index) + c);

        let xa = [0.3, -0.8, 1.2, 0.05];
        let xb = [-0.9, 0.4, 0.7, -1.3];
        let (fa, fb) = (head.forward(&xa), head.forward(&xb));
        let (ga, gb) = (shifted.forward(&xa), shifted.forward(&xb));
        assert!((ga - (fa + c)).abs() <= 1e-12);
        assert!((gb - (fb + c)).abs() <= 1e-12);
        let p0 = preference_probability(fa, fb, 1.0).unwrap();
        let p1 = preference_probability(ga, gb, 1.0).unwrap();
        assert!((p0 - p1).abs() <= 1e-12);
    }

    #[test]
    fn scaling_scores_and_sigma_together_preserves_preference() {
        let mut rng = stream(6, "test/scale");
        let head = QualityHead::with_random_weights(vec![3, 6, 1], 1.0, &mut rng).unwrap();
        let xa = [0.2, -1.4, 0.9];
        let xb = [1.1, 0.3, -0.6];
        let (fa, fb) = (head.forward(&xa), head.forward(&xb));
        for &k in &[0.5, 2.0, 7.5] {
            let p0 = preference_probability(fa, fb, 1.0).unwrap();
            let p1 = preference_probability(k * fa, k * fb, k).unwrap();
            assert!((p0 - p1).abs() <= 1e-10, "k = {k}: {p0} vs {p1}");
        }
    }

    #[test]
    fn zeroed_head_scores_zero_and_training_init_does_too() {
        let mut rng = stream(7, "test/init");
        let zero = QualityHead::zeroed(vec![5, 4, 1], 1.0).unwrap();
        let warm = QualityHead::with_training_init(vec![5, 4, 1], 1.0, &mut rng).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(zero.forward(&x), 0.0);
        // Hidden layers are random but the output layer is zero.
        assert_eq!(warm.forward(&x), 0.0);
        assert!(warm.weights(0).iter().any(|&w| w != 0.0));
        assert!(warm.weights(1).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn flat_param_indexing_round_trips() {
        let mut rng = stream(8, "test/flat");
        let mut head = QualityHead::with_random_weights(vec![3, 4, 1], 1.0, &mut rng).unwrap();
        let n = head.param_len();
        assert_eq!(n, 3 * 4 + 4 + 4 + 1);
        let snapshot: Vec<f64> = (0..n).map(|i| head.param_get(i)).collect();
        for i in 0..n {
            head.param_set(i, i as f64);
        }
        for i in 0..n {
            assert_eq!(head.param_get(i), i as f64);
        }
        for (i, v) in snapshot.iter().enumerate() {
            head.param_set(i, *v);
        }
        assert_eq!(head.weights(0)[0], snapshot[0]);
    }

    #[test]
    fn reliability_values_from_logits() {
        let r = JudgeReliability {
            alpha_logit: 0.0,
            beta_logit: 0.0,
        };
        assert_eq!(r.values(), (0.5, 0.5));
        let r = JudgeReliability {
            alpha_logit: 9.0f64.ln(),
            beta_logit: 4.0f64.ln(),
        };
        let (a, b) = r.values();
        assert!((a - 0.9).abs() <= 1e-12);
        assert!((b - 0.8).abs() <= 1e-12);
        let r = JudgeReliability::from_rates(0.9, 0.8);
        let (a, b) = r.values();
        assert!((a - 0.9).abs() <= 1e-12);
        assert!((b - 0.8).abs() <= 1e-12);
    }

    #[test]
    fn panel_lookup_and_ordering() {
        let mut panel = JudgePanel::new();
        panel.set("zeta", OVERALL_HEAD, JudgeReliability::from_rates(0.6, 0.7));
        panel.set(
            "alpha",
            OVERALL_HEAD,
            JudgeReliability::from_rates(0.8, 0.9),
        );
        let order: Vec<&str> = panel.judges().collect();
        assert_eq!(order, ["alpha", "zeta"]);
        let (a, _) = panel.reliability_values("alpha", OVERALL_HEAD).unwrap();
        assert!((a - 0.8).abs() < 1e-12);
        assert!(panel.reliability_values("alpha", "Safety").is_err());
        assert!(panel.reliability_values("missing", OVERALL_HEAD).is_err());
    }

    #[test]
    fn record_validation() {
        let mut labels: BTreeMap<String, BTreeMap<String, JudgeLabel>> = BTreeMap::new();
        labels.insert(
            "j0".into(),
            [(OVERALL_HEAD.to_string(), JudgeLabel::WinA)]
                .into_iter()
                .collect(),
        );
        let good = PreferenceRecord {
            pair_id: "p0".into(),
            item_a: "x".into(),
            item_b: "y".into(),
            labels: labels.clone(),
        };
        good.validate().unwrap();
        assert_eq!(good.non_fair_count(OVERALL_HEAD), 1);

        let selfcmp = PreferenceRecord {
            item_b: "x".into(),
            ..good.clone()
        };
        assert!(matches!(
            selfcmp.validate(),
            Err(ModelError::SelfComparison { .. })
        ));

        let mut no_overall = good.clone();
        no_overall
            .labels
            .get_mut("j0")
            .unwrap()
            .remove(OVERALL_HEAD);
        no_overall
            .labels
            .get_mut("j0")
            .unwrap()
            .insert("Safety".into(), JudgeLabel::Fair);
        assert!(matches!(
            no_overall.validate(),
            Err(ModelError::JudgeMissingOverall { .. })
        ));

        let empty = PreferenceRecord {
            labels: BTreeMap::new(),
            ..good
        };
        assert!(matches!(empty.validate(), Err(ModelError::NoLabels { .. })));
    }

    #[test]
    fn item_store_guards() {
        let mut store = ItemStore::new(2).unwrap();
        store.insert(item("a", &[1.0, 2.0])).unwrap();
        assert!(matches!(
            store.insert(item("a", &[3.0, 4.0])),
            Err(ModelError::DuplicateItem { .. })
        ));
        assert!(matches!(
            store.insert(item("b", &[1.0, 2.0, 3.0])),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(store.require("a").is_ok());
        assert!(matches!(
            store.require("zz"),
            Err(ModelError::UnknownItem { .. })
        ));
    }

    #[test]
    fn evaluator_model_validation() {
        let head = QualityHead::zeroed(vec![2, 1], 1.0).unwrap();
        let mut heads = BTreeMap::new();
        heads.insert(OVERALL_HEAD.to_string(), head.clone());
        let model = EvaluatorModel {
            embedding_dim: 2,
            heads: heads.clone(),
            panel: JudgePanel::new(),
            metadata: ModelMetadata::default(),
        };
        model.validate().unwrap();

        let mut bad = model.clone();
        bad.heads.insert("Sparkle".into(), head.clone());
        assert!(matches!(
            bad.validate(),
            Err(ModelError::UnrecognizedHead(_))
        ));

        let mut no_overall = model.clone();
        no_overall.heads.remove(OVERALL_HEAD);
        no_overall.heads.insert("Safety".into(), head.clone());
        assert!(matches!(
            no_overall.validate(),
            Err(ModelError::MissingOverallHead)
        ));

        let mut wrong_dim = model;
        wrong_dim.embedding_dim = 3;
        assert!(matches!(
            wrong_dim.validate(),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn mirror_is_an_involution(label in prop_oneof![
            Just(JudgeLabel::WinA), Just(JudgeLabel::WinB), Just(JudgeLabel::Fair)
        ]) {
            prop_assert_eq!(label.mirror().mirror(), label);
        }

        #[test]
        fn preference_antisymmetry(
            fa in -40.0f64..40.0,
            fb in -40.0f64..40.0,
            sigma in 0.05f64..20.0,
        ) {
            let p = preference_probability(fa, fb, sigma).unwrap();
            let q = preference_probability(fb, fa, sigma).unwrap();
            prop_assert!((p + q - 1.0).abs() <= 1e-12, "p = {p}, q = {q}");
        }

        #[test]
        fn scores_are_deterministic(seed in 0u64..1000) {
            let mut rng = stream(seed, "test/det");
            let head = QualityHead::with_random_weights(vec![3, 5, 1], 1.0, &mut rng).unwrap();
            let x = [0.25, -0.75, 1.5];
            prop_assert_eq!(head.forward(&x).to_bits(), head.forward(&x).to_bits());
        }
    }
}
