//! Marginal likelihood of panel labels and its exact gradients.
//!
//! For one comparison the latent outcome `r` (1 = second item truly wins) has
//! prior `P = preference_probability(f(A), f(B), sigma)`. Each non-Fair judge
//! label is a noisy observation of `r` through that judge's reliability
//! channel, so the marginal likelihood of the labels is
//!
//! ```text
//! L = P * prod_j alpha_j^{r_j} (1 - alpha_j)^{1 - r_j}
//!   + (1 - P) * prod_j beta_j^{1 - r_j} (1 - beta_j)^{r_j}
//! ```
//!
//! with `r_j = 1` when judge j voted for the second item, and the products
//! running over the judges whose label is not Fair. Fair labels carry no
//! information about `r` and are excluded entirely: a record whose labels are
//! all Fair contributes exactly 0 to the log-likelihood and exactly zero
//! gradient.
//!
//! Everything is evaluated in log space (two-term log-sum-exp), and gradients
//! are analytic: the score function is differentiated through the normal CDF,
//! and reliability gradients reduce to posterior-weighted Bernoulli residuals
//! against the latent-outcome responsibilities.

use thiserror::Error;

use crate::model::{
    phi, phi_density, EvaluatorModel, ItemStore, JudgeLabel, ModelError, PreferenceRecord,
    QualityHead, PROBABILITY_FLOOR,
};

#[derive(Debug, Error)]
pub enum MleError {
    #[error("record `{pair_id}`: {source}")]
    Record {
        pair_id: String,
        #[source]
        source: ModelError,
    },
    #[error("record `{pair_id}` has no `{head}` label from any judge")]
    MissingHeadLabel { pair_id: String, head: String },
    #[error("record `{pair_id}`: judge `{judge}` is not in the panel for head `{head}`")]
    JudgeNotInPanel {
        pair_id: String,
        judge: String,
        head: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gradients for one head and the panel entries attached to it, aligned with
/// the model's parameter layout.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Panel judges in sorted order; the logit gradients below align to this.
    pub judges: Vec<String>,
    /// Head parameter gradients in flat order (see [`QualityHead::param_get`]).
    pub head: Vec<f64>,
    pub alpha_logits: Vec<f64>,
    pub beta_logits: Vec<f64>,
    /// Negative log-likelihood of the batch the gradients were taken at.
    pub nll: f64,
}

/// Reliability probabilities for one head, aligned to a sorted judge list.
pub(crate) struct PanelSlice<'a> {
    pub judges: &'a [String],
    pub alpha: &'a [f64],
    pub beta: &'a [f64],
}

impl<'a> PanelSlice<'a> {
    fn index_of(&self, judge: &str) -> Option<usize> {
        self.judges.binary_search_by(|j| j.as_str().cmp(judge)).ok()
    }
}

fn two_term_lse(u: f64, v: f64) -> f64 {
    let (hi, lo) = if u >= v { (u, v) } else { (v, u) };
    hi + (lo - hi).exp().ln_1p()
}

/// Per-record quantities shared by the likelihood and gradient paths.
struct RecordTerms {
    /// Clamped probability that the second item wins.
    p: f64,
    /// Standardized score difference fed to the normal CDF.
    z: f64,
    log_a: f64,
    log_b: f64,
    log_l: f64,
    /// Non-Fair labels as (panel index, voted-for-second-item).
    votes: Vec<(usize, bool)>,
}

fn record_terms(
    record: &PreferenceRecord,
    score_a: f64,
    score_b: f64,
    sigma: f64,
    panel: &PanelSlice,
    head_name: &str,
) -> Result<Option<RecordTerms>, MleError> {
    let mut saw_label = false;
    let mut votes = Vec::new();
    let mut log_a = 0.0;
    let mut log_b = 0.0;
    for (judge, label) in record.labels_for_head(head_name) {
        saw_label = true;
        if label == JudgeLabel::Fair {
            continue;
        }
        let k = panel
            .index_of(judge)
            .ok_or_else(|| MleError::JudgeNotInPanel {
                pair_id: record.pair_id.clone(),
                judge: judge.to_string(),
                head: head_name.to_string(),
            })?;
        let (alpha, beta) = (panel.alpha[k], panel.beta[k]);
        let says_b = label == JudgeLabel::WinB;
        if says_b {
            log_a += alpha.ln();
            log_b += (1.0 - beta).ln();
        } else {
            log_a += (1.0 - alpha).ln();
            log_b += beta.ln();
        }
        votes.push((k, says_b));
    }
    if !saw_label {
        return Err(MleError::MissingHeadLabel {
            pair_id: record.pair_id.clone(),
            head: head_name.to_string(),
        });
    }
    if votes.is_empty() {
        // All labels Fair: exact zero contribution, no gradient.
        return Ok(None);
    }
    let z = (score_b - score_a) / (std::f64::consts::SQRT_2 * sigma);
    let p = phi(z).clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
    let log_l = two_term_lse(log_a + p.ln(), log_b + (1.0 - p).ln());
    Ok(Some(RecordTerms {
        p,
        z,
        log_a,
        log_b,
        log_l,
        votes,
    }))
}

fn scores_for(
    record: &PreferenceRecord,
    items: &ItemStore,
    head: &QualityHead,
) -> Result<(f64, f64), MleError> {
    let wrap = |source: ModelError| MleError::Record {
        pair_id: record.pair_id.clone(),
        source,
    };
    let xa = items.require(&record.item_a).map_err(wrap)?;
    let xb = items.require(&record.item_b).map_err(wrap)?;
    if xa.len() != head.input_dim() {
        return Err(wrap(ModelError::DimensionMismatch {
            id: record.item_a.clone(),
            got: xa.len(),
            want: head.input_dim(),
        }));
    }
    Ok((head.forward(xa), head.forward(xb)))
}

pub(crate) fn record_log_likelihood(
    record: &PreferenceRecord,
    items: &ItemStore,
    head: &QualityHead,
    panel: &PanelSlice,
    head_name: &str,
) -> Result<f64, MleError> {
    let (fa, fb) = scores_for(record, items, head)?;
    match record_terms(record, fa, fb, head.sigma(), panel, head_name)? {
        None => Ok(0.0),
        Some(t) => Ok(t.log_l),
    }
}

fn panel_vectors(
    model: &EvaluatorModel,
    head_name: &str,
) -> Result<(Vec<String>, Vec<f64>, Vec<f64>), MleError> {
    let judges: Vec<String> = model.panel.judges().map(str::to_string).collect();
    let mut alpha = Vec::with_capacity(judges.len());
    let mut beta = Vec::with_capacity(judges.len());
    for judge in &judges {
        let (a, b) = model.panel.reliability_values(judge, head_name)?;
        alpha.push(a);
        beta.push(b);
    }
    Ok((judges, alpha, beta))
}

/// Log-likelihood of one record's labels for `head_name` under `model`.
///
/// A record whose labels for the head are all Fair contributes exactly `0.0`.
///
/// # Errors
/// Fails if an item id is missing from `items`, if no judge labeled the head,
/// or if a labeling judge has no panel entry.
pub fn pair_log_likelihood(
    record: &PreferenceRecord,
    items: &ItemStore,
    model: &EvaluatorModel,
    head_name: &str,
) -> Result<f64, MleError> {
    let head = model.head(head_name)?;
    let (judges, alpha, beta) = panel_vectors(model, head_name)?;
    let panel = PanelSlice {
        judges: &judges,
        alpha: &alpha,
        beta: &beta,
    };
    record_log_likelihood(record, items, head, &panel, head_name)
}

/// Negative log-likelihood of a batch, summed in record-index order.
/// Always `>= 0`.
pub fn batch_nll(
    records: &[PreferenceRecord],
    items: &ItemStore,
    model: &EvaluatorModel,
    head_name: &str,
) -> Result<f64, MleError> {
    let head = model.head(head_name)?;
    let (judges, alpha, beta) = panel_vectors(model, head_name)?;
    let panel = PanelSlice {
        judges: &judges,
        alpha: &alpha,
        beta: &beta,
    };
    let mut nll = 0.0;
    for record in records {
        nll -= record_log_likelihood(record, items, head, &panel, head_name)?;
    }
    Ok(nll)
}

/// Accumulate the gradient of one record's NLL contribution into flat output
/// buffers. Returns the record's NLL contribution.
pub(crate) fn record_grad(
    record: &PreferenceRecord,
    items: &ItemStore,
    head: &QualityHead,
    panel: &PanelSlice,
    head_name: &str,
    out_head: &mut [f64],
    out_alpha: &mut [f64],
    out_beta: &mut [f64],
) -> Result<f64, MleError> {
    let wrap = |source: ModelError| MleError::Record {
        pair_id: record.pair_id.clone(),
        source,
    };
    let xa = items.require(&record.item_a).map_err(wrap)?;
    let xb = items.require(&record.item_b).map_err(wrap)?;
    if xa.len() != head.input_dim() {
        return Err(wrap(ModelError::DimensionMismatch {
            id: record.item_a.clone(),
            got: xa.len(),
            want: head.input_dim(),
        }));
    }
    let trace_a = head.forward_trace(xa);
    let trace_b = head.forward_trace(xb);
    let (fa, fb) = (trace_a.output(), trace_b.output());
    let terms = match record_terms(record, fa, fb, head.sigma(), panel, head_name)? {
        None => return Ok(0.0),
        Some(t) => t,
    };

    // Responsibilities of the two latent branches, and d(nll)/dP.
    // w1 + w0 == 1 up to rounding; each is exp of a nonpositive quantity.
    let w1 = (terms.log_a + terms.p.ln() - terms.log_l).exp();
    let w0 = (terms.log_b + (1.0 - terms.p).ln() - terms.log_l).exp();
    let dnll_dp = -((terms.log_a - terms.log_l).exp() - (terms.log_b - terms.log_l).exp());

    // Chain through the probit link. The clamp on P is treated as identity
    // here; it only binds at |z| beyond ~7 where the density is ~1e-12 anyway.
    let dp_dfb = phi_density(terms.z) / (std::f64::consts::SQRT_2 * head.sigma());
    let upstream_b = dnll_dp * dp_dfb;
    head.backward(&trace_a, -upstream_b, out_head);
    head.backward(&trace_b, upstream_b, out_head);

    // Reliability logits: posterior-weighted Bernoulli residuals.
    for &(k, says_b) in &terms.votes {
        let r = if says_b { 1.0 } else { 0.0 };
        out_alpha[k] -= w1 * (r - panel.alpha[k]);
        out_beta[k] -= w0 * ((1.0 - r) - panel.beta[k]);
    }
    Ok(terms.log_l)
}

/// Gradients of the batch NLL with respect to every head parameter and every
/// panel logit for `head_name`.
///
/// Records are accumulated in index order (first item then second within each
/// record), so results are bit-reproducible for a fixed batch.
pub fn compute_gradients(
    records: &[PreferenceRecord],
    items: &ItemStore,
    model: &EvaluatorModel,
    head_name: &str,
) -> Result<GradientBundle, MleError> {
    let head = model.head(head_name)?;
    let (judges, alpha, beta) = panel_vectors(model, head_name)?;
    let panel = PanelSlice {
        judges: &judges,
        alpha: &alpha,
        beta: &beta,
    };
    let mut out_head = vec![0.0; head.param_len()];
    let mut out_alpha = vec![0.0; judges.len()];
    let mut out_beta = vec![0.0; judges.len()];
    let mut nll = 0.0;
    for record in records {
        nll -= record_grad(
            record,
            items,
            head,
            &panel,
            head_name,
            &mut out_head,
            &mut out_alpha,
            &mut out_beta,
        )?;
    }
    Ok(GradientBundle {
        judges,
        head: out_head,
        alpha_logits: out_alpha,
        beta_logits: out_beta,
        nll,
    })
}
