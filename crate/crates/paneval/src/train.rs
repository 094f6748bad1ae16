//! AdamW training loop for quality heads and judge reliabilities.
//!
//! Each selected head is fit independently (heads share no parameters): its
//! MLP starts from small random hidden layers with a zeroed output layer, the
//! panel logits start at `logit(init_reliability)`, and both parameter groups
//! are updated by decoupled-weight-decay Adam with separate learning rates.
//! Weight decay touches head parameters only — decaying reliability logits
//! would drag every judge back toward coin-flip behavior.
//!
//! The learning-rate schedule is a linear warmup over the first
//! `warmup_fraction` of total optimizer steps followed by a half-cosine decay
//! toward zero. Shuffling, init, and batching all draw from labeled child
//! streams of the config seed, so a rerun with the same data and config
//! reproduces the model bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mle::{record_grad, MleError, PanelSlice};
use crate::model::{
    logistic, EvaluatorModel, ItemStore, JudgePanel, JudgeReliability, ModelError, ModelMetadata,
    PreferenceRecord, QualityHead, OVERALL_HEAD,
};
use crate::rng::stream;

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("training requires at least one preference record")]
    EmptyDataset,
    #[error("non-finite loss at optimizer step {step} (records: {})", record_ids.join(", "))]
    NonFiniteLoss {
        step: usize,
        record_ids: Vec<String>,
    },
    #[error("no judge labeled head `{head}` anywhere in the dataset")]
    NoJudgesForHead { head: String },
    #[error(transparent)]
    Mle(#[from] MleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Knobs for the optimizer, the schedule, and head construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak per-step learning rate for head weights and biases.
    pub lr_model: f64,
    /// Peak per-step learning rate for reliability logits.
    pub lr_reliability: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Decoupled weight decay, applied to head parameters only.
    pub weight_decay: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Initial alpha and beta for every judge, strictly inside (0, 1).
    pub init_reliability: f64,
    /// Fixed noise scale for every trained head.
    pub sigma: f64,
    /// Hidden layer widths; the full architecture is
    /// `[embedding_dim, hidden_dims..., 1]`.
    pub hidden_dims: Vec<usize>,
    /// Heads to train. Must include "Overall".
    pub head_selection: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_model: 5e-5,
            lr_reliability: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            weight_decay: 0.1,
            warmup_fraction: 0.10,
            epochs: 3,
            batch_size: 32,
            seed: 0,
            init_reliability: 0.5,
            sigma: 1.0,
            hidden_dims: vec![256, 64],
            head_selection: vec![OVERALL_HEAD.to_string()],
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.to_string()));
        if !(self.lr_model > 0.0) || !(self.lr_reliability > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
        {
            return bad("adam betas must lie strictly between 0 and 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.warmup_fraction >= 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.init_reliability > 0.0 && self.init_reliability < 1.0) {
            return bad("init_reliability must lie strictly inside (0, 1)");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive and finite");
        }
        Ok(())
    }
}

/// What a training run reported: per-epoch mean NLL, the learned
/// reliabilities, and bookkeeping.
///
/// Serializes to the trace JSON consumed by downstream reporting:
/// `{"epochs": [{"mean_nll": …}], "reliabilities": {head: {judge:
/// {"alpha": …, "beta": …}}}, "seed": …, "wall_seconds": …}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochTrace>,
    pub reliabilities: BTreeMap<String, BTreeMap<String, ReliabilityReport>>,
    pub seed: u64,
    pub wall_seconds: f64,
    /// Effective head learning rate at each optimizer step (one schedule is
    /// shared by every head). Diagnostic only; not part of the trace JSON.
    #[serde(skip)]
    pub step_lrs: Vec<f64>,
}

/// Mean per-record NLL for one epoch, averaged over records and trained
/// heads. All-Fair records count in the denominator with a zero contribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochTrace {
    pub mean_nll: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub alpha: f64,
    pub beta: f64,
}

/// Schedule multiplier in [0, 1] for optimizer step `step` out of
/// `total_steps`: linear ramp over the first `floor(warmup_fraction *
/// total_steps)` steps, then `0.5 * (1 + cos(pi * progress))` over the rest.
pub fn schedule_multiplier(step: usize, total_steps: usize, warmup_fraction: f64) -> f64 {
    assert!(step < total_steps, "step {step} out of range {total_steps}");
    let warmup = (warmup_fraction * total_steps as f64).floor() as usize;
    if step < warmup {
        (step + 1) as f64 / warmup as f64
    } else {
        let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
        0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// First-moment / second-moment buffers for one parameter vector.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One decoupled-weight-decay Adam step with bias correction. `t` is the
    /// 1-based step count; `decay` is applied directly to the parameter,
    /// scaled by `lr` but not by the moment estimates.
    #[allow(clippy::too_many_arguments)]
    fn apply(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        decay: f64,
        t: i32,
    ) {
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + decay * params[i]);
        }
    }
}

/// Mutable view of everything being fit for one head.
struct HeadState {
    head: QualityHead,
    judges: Vec<String>,
    alpha_logits: Vec<f64>,
    beta_logits: Vec<f64>,
}

fn judges_for_head(records: &[PreferenceRecord], head_name: &str) -> Vec<String> {
    let mut judges = BTreeSet::new();
    for record in records {
        for (judge, _) in record.labels_for_head(head_name) {
            judges.insert(judge.to_string());
        }
    }
    judges.into_iter().collect()
}

/// Fit the selected heads and the per-judge reliabilities by maximum
/// likelihood.
///
/// `head_names` picks which heads to train (it must include "Overall", which
/// every model carries). Every record must carry at least one label — Fair
/// included — for each trained head.
///
/// Reruns with identical records, items, config, and head list produce a
/// bit-identical model.
pub fn train(
    records: &[PreferenceRecord],
    items: &ItemStore,
    config: &TrainConfig,
    head_names: &[String],
) -> Result<(EvaluatorModel, TrainTrace), TrainError> {
    let started = Instant::now();
    config.check()?;
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if head_names.is_empty() {
        return Err(TrainError::BadConfig(
            "head_selection must name at least one head".into(),
        ));
    }
    if !head_names.iter().any(|h| h == OVERALL_HEAD) {
        return Err(TrainError::BadConfig(format!(
            "head_selection must include `{OVERALL_HEAD}`"
        )));
    }
    {
        let unique: BTreeSet<&str> = head_names.iter().map(String::as_str).collect();
        if unique.len() != head_names.len() {
            return Err(TrainError::BadConfig(
                "head_selection repeats a head".into(),
            ));
        }
    }
    for record in records {
        record.validate().map_err(MleError::from)?;
    }

    let n = records.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let init_logit = JudgeReliability::from_rates(config.init_reliability, config.init_reliability);

    let mut layer_dims = Vec::with_capacity(config.hidden_dims.len() + 2);
    layer_dims.push(items.dim());
    layer_dims.extend_from_slice(&config.hidden_dims);
    layer_dims.push(1);

    // Per-(record, head) epoch NLL sums, combined across heads afterwards.
    let mut epoch_nll_sums = vec![0.0; config.epochs];
    let mut step_lrs = Vec::with_capacity(total_steps);
    let mut states: Vec<(String, HeadState)> = Vec::with_capacity(head_names.len());

    for head_name in head_names {
        let judges = judges_for_head(records, head_name);
        if judges.is_empty() {
            return Err(TrainError::NoJudgesForHead {
                head: head_name.clone(),
            });
        }
        let mut init_rng = stream(config.seed, &format!("init/{head_name}"));
        let head =
            QualityHead::with_training_init(layer_dims.clone(), config.sigma, &mut init_rng)?;
        let mut state = HeadState {
            head,
            alpha_logits: vec![init_logit.alpha_logit; judges.len()],
            beta_logits: vec![init_logit.beta_logit; judges.len()],
            judges,
        };

        let n_params = state.head.param_len();
        let n_judges = state.judges.len();
        let mut adam_head = AdamState::new(n_params);
        let mut adam_alpha = AdamState::new(n_judges);
        let mut adam_beta = AdamState::new(n_judges);
        let mut params = vec![0.0; n_params];
        for i in 0..n_params {
            params[i] = state.head.param_get(i);
        }

        let mut grad_head = vec![0.0; n_params];
        let mut grad_alpha = vec![0.0; n_judges];
        let mut grad_beta = vec![0.0; n_judges];
        let mut alpha = vec![0.0; n_judges];
        let mut beta = vec![0.0; n_judges];
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0usize;
        // 1-based Adam step count; only batches that performed an update
        // advance it, keeping bias correction aligned with the moments.
        let mut updates = 0i32;

        for epoch in 0..config.epochs {
            let mut shuffle_rng = stream(config.seed, &format!("shuffle/{head_name}/{epoch}"));
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
            let mut epoch_nll = 0.0;

            for batch in order.chunks(config.batch_size) {
                grad_head.fill(0.0);
                grad_alpha.fill(0.0);
                grad_beta.fill(0.0);
                for k in 0..n_judges {
                    alpha[k] = logistic(state.alpha_logits[k]);
                    beta[k] = logistic(state.beta_logits[k]);
                }
                let panel = PanelSlice {
                    judges: &state.judges,
                    alpha: &alpha,
                    beta: &beta,
                };
                let mut batch_nll = 0.0;
                let mut signal = false;
                for &idx in batch {
                    let record = &records[idx];
                    signal |= record.non_fair_count(head_name) > 0;
                    batch_nll -= record_grad(
                        record,
                        items,
                        &state.head,
                        &panel,
                        head_name,
                        &mut grad_head,
                        &mut grad_alpha,
                        &mut grad_beta,
                    )?;
                }
                if !batch_nll.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        step,
                        record_ids: batch
                            .iter()
                            .map(|&idx| records[idx].pair_id.clone())
                            .collect(),
                    });
                }
                epoch_nll += batch_nll;

                let factor = schedule_multiplier(step, total_steps, config.warmup_fraction);
                let lr_head = config.lr_model * factor;
                if states.is_empty() {
                    // The schedule is identical for every head; record it once.
                    step_lrs.push(lr_head);
                }
                step += 1;
                // A batch with no informative label carries no signal at all:
                // it advances the schedule but performs no update (in
                // particular, no weight decay), so an all-Fair dataset leaves
                // every parameter exactly at its initialization.
                if !signal {
                    continue;
                }
                let lr_rel = config.lr_reliability * factor;
                updates += 1;
                adam_head.apply(
                    &mut params,
                    &grad_head,
                    lr_head,
                    config.adam_beta1,
                    config.adam_beta2,
                    config.weight_decay,
                    updates,
                );
                for (i, &p) in params.iter().enumerate() {
                    state.head.param_set(i, p);
                }
                adam_alpha.apply(
                    &mut state.alpha_logits,
                    &grad_alpha,
                    lr_rel,
                    config.adam_beta1,
                    config.adam_beta2,
                    0.0,
                    updates,
                );
                adam_beta.apply(
                    &mut state.beta_logits,
                    &grad_beta,
                    lr_rel,
                    config.adam_beta1,
                    config.adam_beta2,
                    0.0,
                    updates,
                );
            }
            epoch_nll_sums[epoch] += epoch_nll;
        }
        states.push((head_name.clone(), state));
    }

    let mut heads = BTreeMap::new();
    let mut panel = JudgePanel::new();
    let mut reliabilities = BTreeMap::new();
    for (head_name, state) in states {
        let mut report = BTreeMap::new();
        for (k, judge) in state.judges.iter().enumerate() {
            let r = JudgeReliability {
                alpha_logit: state.alpha_logits[k],
                beta_logit: state.beta_logits[k],
            };
            panel.set(judge, &head_name, r);
            report.insert(
                judge.clone(),
                ReliabilityReport {
                    alpha: r.alpha(),
                    beta: r.beta(),
                },
            );
        }
        reliabilities.insert(head_name.clone(), report);
        heads.insert(head_name, state.head);
    }

    let model = EvaluatorModel {
        embedding_dim: items.dim(),
        heads,
        panel,
        metadata: ModelMetadata {
            seed: config.seed,
            ..ModelMetadata::default()
        },
    };
    model.validate()?;

    let denom = (n * head_names.len()) as f64;
    let trace = TrainTrace {
        epochs: epoch_nll_sums
            .into_iter()
            .map(|total| EpochTrace {
                mean_nll: total / denom,
            })
            .collect(),
        reliabilities,
        seed: config.seed,
        wall_seconds: started.elapsed().as_secs_f64(),
        step_lrs,
    };
    Ok((model, trace))
}
