//! Synthetic corpora with known ground truth, and brute-force oracles.
//!
//! The generator mirrors the model's own generative story: items get
//! independent standard-normal embeddings, a fixed random map assigns each
//! item a true quality, each sampled pair draws its latent winner through the
//! probit preference probability, and every simulated judge passes that
//! latent outcome through an abstain-then-corrupt channel. Because the true
//! qualities, reliabilities, and latent outcomes are all retained, tests can
//! measure exactly how much of the truth training recovered.
//!
//! [`oracle_nll`] re-evaluates the panel likelihood directly in product space
//! (no log-sum-exp), deliberately sharing no code with the training path, so
//! the two implementations check each other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{
    preference_probability, EmbeddedItem, EvaluatorModel, ItemStore, JudgeLabel, JudgePanel,
    JudgeReliability, ModelError, PreferenceRecord, OVERALL_HEAD,
};
use crate::rng::stream;

/// Most judges the product-space oracle will accept before precision and
/// underflow concerns bite.
pub const ORACLE_MAX_JUDGES: usize = 10;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic-data spec: {0}")]
    BadSpec(String),
    #[error(
        "oracle likelihood supports at most {ORACLE_MAX_JUDGES} non-Fair judges per record, \
         record `{pair_id}` has {count}"
    )]
    OracleTooManyJudges { pair_id: String, count: usize },
    #[error(
        "oracle likelihood underflowed to zero on record `{pair_id}`; \
         use a smaller or less extreme instance"
    )]
    OracleUnderflow { pair_id: String },
    #[error("record `{pair_id}` has no `{head}` label from any judge")]
    MissingHeadLabel { pair_id: String, head: String },
    #[error("panels disagree on the judge set for head `{head}`")]
    JudgeSetMismatch { head: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// True reliability channel of one simulated judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSpec {
    /// P(vote for the true winner when the second item truly wins).
    pub alpha: f64,
    /// P(vote for the true winner when the first item truly wins).
    pub beta: f64,
    /// P(abstain with Fair), drawn before the win channel.
    #[serde(default)]
    pub fair_rate: f64,
}

impl JudgeSpec {
    fn check(&self, index: usize) -> Result<(), SynthError> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !(ok(self.alpha) && ok(self.beta) && ok(self.fair_rate)) {
            return Err(SynthError::BadSpec(format!(
                "judge {index}: alpha, beta, fair_rate must lie in [0, 1]"
            )));
        }
        Ok(())
    }
}

/// How true quality depends on the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityMap {
    /// `q(x) = w · x` for a fixed standard-normal vector `w`.
    Linear,
    /// A standardized quadratic along a fixed random direction:
    /// `q(x) = ((w · x)^2 − |w|^2) / (|w| · sqrt(2))`, which has roughly the
    /// same spread as the linear map but cannot be fit by any linear scorer.
    Quadratic,
}

impl QualityMap {
    /// Ground-truth quality of an embedding under direction `w`.
    pub fn evaluate(&self, w: &[f64], x: &[f64]) -> f64 {
        let dot: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
        match self {
            QualityMap::Linear => dot,
            QualityMap::Quadratic => {
                let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                (dot * dot - w_norm * w_norm) / (w_norm * std::f64::consts::SQRT_2)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_items: usize,
    pub dim: usize,
    pub n_pairs: usize,
    pub judges: Vec<JudgeSpec>,
    pub quality_map: QualityMap,
    pub sigma_true: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_items: 200,
            dim: 16,
            n_pairs: 2000,
            judges: [0.65, 0.72, 0.80, 0.88, 0.95]
                .iter()
                .map(|&r| JudgeSpec {
                    alpha: r,
                    beta: r,
                    fair_rate: 0.1,
                })
                .collect(),
            quality_map: QualityMap::Linear,
            sigma_true: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn check(&self) -> Result<(), SynthError> {
        if self.n_items < 2 {
            return Err(SynthError::BadSpec("need at least two items".into()));
        }
        if self.dim == 0 {
            return Err(SynthError::BadSpec("dim must be positive".into()));
        }
        if self.judges.is_empty() {
            return Err(SynthError::BadSpec("need at least one judge".into()));
        }
        for (i, judge) in self.judges.iter().enumerate() {
            judge.check(i)?;
        }
        if !(self.sigma_true > 0.0 && self.sigma_true.is_finite()) {
            return Err(SynthError::BadSpec(
                "sigma_true must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// A generated corpus together with every piece of ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub items: ItemStore,
    pub records: Vec<PreferenceRecord>,
    /// True quality per item id.
    pub qualities: BTreeMap<String, f64>,
    /// Latent outcome per record (true = second item wins), aligned with
    /// `records`.
    pub latent: Vec<bool>,
    /// The fixed direction behind the quality map.
    pub w_star: Vec<f64>,
    /// True reliabilities as a panel (logits of the spec rates, clamped into
    /// (0,1) so they stay finite; exact rates live in `judge_specs`).
    pub truth: JudgePanel,
    /// Exact channel parameters per judge name.
    pub judge_specs: BTreeMap<String, JudgeSpec>,
}

fn zero_pad_width(n: usize) -> usize {
    std::cmp::max(4, n.saturating_sub(1).to_string().len())
}

/// One judge's label for a pair whose latent outcome is `r` (true = second
/// item wins): abstain with `fair_rate` first, then vote through the
/// hit-rate / correct-rejection channel.
pub fn simulate_judge<R: Rng>(
    r: bool,
    alpha: f64,
    beta: f64,
    fair_rate: f64,
    rng: &mut R,
) -> JudgeLabel {
    if rng.random_bool(fair_rate) {
        return JudgeLabel::Fair;
    }
    if r {
        if rng.random_bool(alpha) {
            JudgeLabel::WinB
        } else {
            JudgeLabel::WinA
        }
    } else if rng.random_bool(beta) {
        JudgeLabel::WinA
    } else {
        JudgeLabel::WinB
    }
}

/// Generate a corpus. Labels are attached to the "Overall" head.
///
/// Embedding coordinates are drawn standard normal and rounded through f32,
/// so writing them to the single-precision on-disk store and reading them
/// back reproduces scores bit for bit. The same seed always yields the same
/// corpus; items, the quality map, and pair sampling draw from separate
/// labeled streams.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.check()?;

    let item_width = zero_pad_width(spec.n_items);
    let mut item_rng = stream(spec.seed, "synth/items");
    let mut items = ItemStore::new(spec.dim)?;
    let mut ids = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        let id = format!("item{i:0item_width$}");
        let embedding: Vec<f64> = (0..spec.dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut item_rng);
                v as f32 as f64
            })
            .collect();
        items.insert(EmbeddedItem::new(id.clone(), embedding)?)?;
        ids.push(id);
    }

    let mut quality_rng = stream(spec.seed, "synth/quality");
    let w_star: Vec<f64> = (0..spec.dim)
        .map(|_| StandardNormal.sample(&mut quality_rng))
        .collect();
    let mut qualities = BTreeMap::new();
    for id in &ids {
        let item = items.require(id)?;
        qualities.insert(id.clone(), spec.quality_map.evaluate(&w_star, item));
    }

    let judge_width = std::cmp::max(2, spec.judges.len().saturating_sub(1).to_string().len());
    let judge_names: Vec<String> = (0..spec.judges.len())
        .map(|j| format!("judge{j:0judge_width$}"))
        .collect();

    let mut pair_rng = stream(spec.seed, "synth/pairs");
    let pair_width = zero_pad_width(spec.n_pairs);
    let mut records = Vec::with_capacity(spec.n_pairs);
    let mut latent = Vec::with_capacity(spec.n_pairs);
    for p in 0..spec.n_pairs {
        let a = pair_rng.random_range(0..spec.n_items);
        let b = loop {
            let b = pair_rng.random_range(0..spec.n_items);
            if b != a {
                break b;
            }
        };
        let (id_a, id_b) = (&ids[a], &ids[b]);
        let p_b = preference_probability(qualities[id_a], qualities[id_b], spec.sigma_true)?;
        let r = pair_rng.random_bool(p_b);
        let mut labels: BTreeMap<String, BTreeMap<String, JudgeLabel>> = BTreeMap::new();
        for (name, judge) in judge_names.iter().zip(&spec.judges) {
            let label = simulate_judge(r, judge.alpha, judge.beta, judge.fair_rate, &mut pair_rng);
            labels
                .entry(name.clone())
                .or_default()
                .insert(OVERALL_HEAD.to_string(), label);
        }
        records.push(PreferenceRecord {
            pair_id: format!("pair{p:0pair_width$}"),
            item_a: id_a.clone(),
            item_b: id_b.clone(),
            labels,
        });
        latent.push(r);
    }

    let mut truth = JudgePanel::new();
    let mut judge_specs = BTreeMap::new();
    for (name, judge) in judge_names.iter().zip(&spec.judges) {
        let clamp = |v: f64| v.clamp(1e-9, 1.0 - 1e-9);
        truth.set(
            name,
            OVERALL_HEAD,
            JudgeReliability::from_rates(clamp(judge.alpha), clamp(judge.beta)),
        );
        judge_specs.insert(name.clone(), *judge);
    }

    Ok(SynthData {
        items,
        records,
        qualities,
        latent,
        w_star,
        truth,
        judge_specs,
    })
}

/// Brute-force batch NLL: per record, evaluate
/// `A * P + B * (1 - P)` directly in product space and sum `-ln` across
/// records with compensated (Neumaier) summation. Shares no code with the
/// training-path implementation.
///
/// # Errors
/// Rejects records with more than [`ORACLE_MAX_JUDGES`] non-Fair labels and
/// products that underflow to zero.
pub fn oracle_nll(
    records: &[PreferenceRecord],
    items: &ItemStore,
    model: &EvaluatorModel,
    head_name: &str,
) -> Result<f64, SynthError> {
    let head = model.head(head_name)?;
    let mut sum = 0.0f64;
    let mut compensation = 0.0f64;
    for record in records {
        let xa = items.require(&record.item_a)?;
        let xb = items.require(&record.item_b)?;
        let p = preference_probability(head.forward(xa), head.forward(xb), head.sigma())?;

        let mut prod_a = 1.0f64;
        let mut prod_b = 1.0f64;
        let mut non_fair = 0usize;
        let mut saw_label = false;
        for (judge, label) in record.labels_for_head(head_name) {
            saw_label = true;
            if label == JudgeLabel::Fair {
                continue;
            }
            non_fair += 1;
            let (alpha, beta) = model.panel.reliability_values(judge, head_name)?;
            if label == JudgeLabel::WinB {
                prod_a *= alpha;
                prod_b *= 1.0 - beta;
            } else {
                prod_a *= 1.0 - alpha;
                prod_b *= beta;
            }
        }
        if !saw_label {
            return Err(SynthError::MissingHeadLabel {
                pair_id: record.pair_id.clone(),
                head: head_name.to_string(),
            });
        }
        if non_fair > ORACLE_MAX_JUDGES {
            return Err(SynthError::OracleTooManyJudges {
                pair_id: record.pair_id.clone(),
                count: non_fair,
            });
        }
        if non_fair == 0 {
            continue;
        }
        let likelihood = prod_a * p + prod_b * (1.0 - p);
        if likelihood == 0.0 {
            return Err(SynthError::OracleUnderflow {
                pair_id: record.pair_id.clone(),
            });
        }

        // Neumaier-compensated accumulation of -ln(likelihood).
        let term = -likelihood.ln();
        let t = sum + term;
        compensation += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    Ok(sum + compensation)
}

/// Resolve the label-flip ambiguity of a learned panel against ground truth.
///
/// The likelihood is invariant under jointly negating all scores and mapping
/// every judge's `(alpha, beta)` to `(1 - beta, 1 - alpha)`, so training may
/// converge to the mirrored solution. This compares the learned panel and its
/// mirror to the true panel by mean `|alpha - alpha*| + |beta - beta*|` and
/// returns whichever is closer, plus whether the mirror won. When the mirror
/// is returned, downstream score comparisons should negate the head's scores
/// to stay consistent.
pub fn flip_correct(
    learned: &JudgePanel,
    truth: &JudgePanel,
    head_name: &str,
) -> Result<(JudgePanel, bool), SynthError> {
    let judges: Vec<&str> = learned.judges().collect();
    let truth_judges: Vec<&str> = truth.judges().collect();
    if judges != truth_judges {
        return Err(SynthError::JudgeSetMismatch {
            head: head_name.to_string(),
        });
    }

    let mut raw_err = 0.0;
    let mut flip_err = 0.0;
    let mut flipped = JudgePanel::new();
    for judge in &judges {
        let r = learned.get(judge, head_name)?;
        let (alpha, beta) = r.values();
        let (talpha, tbeta) = truth.reliability_values(judge, head_name)?;
        raw_err += (alpha - talpha).abs() + (beta - tbeta).abs();
        // The mirror is exact on logits: (a, b) -> (-b, -a).
        let mirror = JudgeReliability {
            alpha_logit: -r.beta_logit,
            beta_logit: -r.alpha_logit,
        };
        let (malpha, mbeta) = mirror.values();
        flip_err += (malpha - talpha).abs() + (mbeta - tbeta).abs();
        flipped.set(judge, head_name, mirror);
    }
    if flip_err < raw_err {
        Ok((flipped, true))
    } else {
        Ok((learned.clone(), false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mle::batch_nll;
    use crate::model::{ModelMetadata, QualityHead};
    use crate::rng::stream;

    fn spec(n_pairs: usize, judges: Vec<JudgeSpec>, seed: u64) -> SynthSpec {
        SynthSpec {
            n_items: 40,
            dim: 6,
            n_pairs,
            judges,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_judges_echo_the_latent_outcome() {
        let data = generate(&spec(
            300,
            vec![
                JudgeSpec {
                    alpha: 1.0,
                    beta: 1.0,
                    fair_rate: 0.0
                };
                2
            ],
            5,
        ))
        .unwrap();
        for (record, &r) in data.records.iter().zip(&data.latent) {
            let expect = if r {
                JudgeLabel::WinB
            } else {
                JudgeLabel::WinA
            };
            for (_, label) in record.labels_for_head(OVERALL_HEAD) {
                assert_eq!(label, expect);
            }
        }
    }

    #[test]
    fn always_fair_judges_only_abstain() {
        let data = generate(&spec(
            100,
            vec![JudgeSpec {
                alpha: 0.9,
                beta: 0.9,
                fair_rate: 1.0,
            }],
            6,
        ))
        .unwrap();
        for record in &data.records {
            for (_, label) in record.labels_for_head(OVERALL_HEAD) {
                assert_eq!(label, JudgeLabel::Fair);
            }
        }
    }

    #[test]
    fn uninformative_judges_agree_with_latent_about_half_the_time() {
        let data = generate(&spec(
            5000,
            vec![JudgeSpec {
                alpha: 0.5,
                beta: 0.5,
                fair_rate: 0.0,
            }],
            7,
        ))
        .unwrap();
        let mut agree = 0usize;
        for (record, &r) in data.records.iter().zip(&data.latent) {
            let (_, label) = record.labels_for_head(OVERALL_HEAD).next().unwrap();
            let said_b = label == JudgeLabel::WinB;
            if said_b == r {
                agree += 1;
            }
        }
        let frac = agree as f64 / data.records.len() as f64;
        assert!((frac - 0.5).abs() <= 0.03, "agreement {frac}");
    }

    #[test]
    fn judge_channel_frequencies_match_parameters() {
        // r = 0, beta = 0.8: expect WinA 80% of the time over 10000 draws.
        let mut rng = stream(11, "test/channel");
        let mut win_a = 0usize;
        let n = 10_000;
        for _ in 0..n {
            if simulate_judge(false, 0.9, 0.8, 0.0, &mut rng) == JudgeLabel::WinA {
                win_a += 1;
            }
        }
        let frac = win_a as f64 / n as f64;
        assert!((frac - 0.8).abs() <= 0.02, "correct-rejection rate {frac}");

        // Fair channel: fair_rate = 0.3 over both latent outcomes.
        let mut fair = 0usize;
        for i in 0..n {
            if simulate_judge(i % 2 == 0, 0.7, 0.7, 0.3, &mut rng) == JudgeLabel::Fair {
                fair += 1;
            }
        }
        let frac = fair as f64 / n as f64;
        assert!((frac - 0.3).abs() <= 0.02, "fair rate {frac}");
    }

    #[test]
    fn latent_rate_matches_mean_preference_probability() {
        let data = generate(&spec(
            4000,
            vec![JudgeSpec {
                alpha: 0.8,
                beta: 0.8,
                fair_rate: 0.1,
            }],
            13,
        ))
        .unwrap();
        let mut mean_p = 0.0;
        let mut variance = 0.0;
        for record in &data.records {
            let p = preference_probability(
                data.qualities[&record.item_a],
                data.qualities[&record.item_b],
                1.0,
            )
            .unwrap();
            mean_p += p;
            variance += p * (1.0 - p);
        }
        let n = data.records.len() as f64;
        mean_p /= n;
        let frac = data.latent.iter().filter(|&&r| r).count() as f64 / n;
        let three_sigma = 3.0 * variance.sqrt() / n;
        assert!(
            (frac - mean_p).abs() <= three_sigma + 1e-9,
            "latent rate {frac} vs mean probability {mean_p} (3-sigma {three_sigma})"
        );
    }

    #[test]
    fn same_seed_reproduces_the_corpus_exactly() {
        let s = spec(
            50,
            vec![JudgeSpec {
                alpha: 0.8,
                beta: 0.7,
                fair_rate: 0.2,
            }],
            17,
        );
        let d0 = generate(&s).unwrap();
        let d1 = generate(&s).unwrap();
        assert_eq!(
            serde_json::to_string(&d0.records).unwrap(),
            serde_json::to_string(&d1.records).unwrap()
        );
        assert_eq!(d0.latent, d1.latent);
        for id in d0.qualities.keys() {
            assert_eq!(d0.items.require(id).unwrap(), d1.items.require(id).unwrap());
            assert_eq!(d0.qualities[id].to_bits(), d1.qualities[id].to_bits());
        }
        let other = generate(&SynthSpec { seed: 18, ..s }).unwrap();
        assert_ne!(
            serde_json::to_string(&d0.records).unwrap(),
            serde_json::to_string(&other.records).unwrap()
        );
    }

    #[test]
    fn quadratic_map_is_not_linear_in_the_embedding() {
        let s = SynthSpec {
            quality_map: QualityMap::Quadratic,
            ..spec(
                10,
                vec![JudgeSpec {
                    alpha: 0.9,
                    beta: 0.9,
                    fair_rate: 0.0,
                }],
                19,
            )
        };
        let data = generate(&s).unwrap();
        // A quadratic along w has q(x) = q(-x); flipping an item's embedding
        // must preserve its quality, which no nonzero linear map does.
        let (id, &q) = data.qualities.iter().next().unwrap();
        let x = data.items.require(id).unwrap();
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        let dot: f64 = data.w_star.iter().zip(&flipped).map(|(w, v)| w * v).sum();
        let norm = data.w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q_flipped = (dot * dot - norm * norm) / (norm * std::f64::consts::SQRT_2);
        assert!((q - q_flipped).abs() <= 1e-12);
    }

    #[test]
    fn oracle_matches_the_log_space_implementation() {
        let data = generate(&SynthSpec {
            n_items: 30,
            dim: 5,
            n_pairs: 100,
            judges: vec![
                JudgeSpec {
                    alpha: 0.9,
                    beta: 0.75,
                    fair_rate: 0.15,
                },
                JudgeSpec {
                    alpha: 0.6,
                    beta: 0.95,
                    fair_rate: 0.0,
                },
                JudgeSpec {
                    alpha: 0.55,
                    beta: 0.55,
                    fair_rate: 0.4,
                },
            ],
            quality_map: QualityMap::Linear,
            sigma_true: 1.0,
            seed: 23,
        })
        .unwrap();
        let mut rng = stream(29, "test/oracle-model");
        let head = QualityHead::with_random_weights(vec![5, 6, 1], 1.0, &mut rng).unwrap();
        let mut heads = BTreeMap::new();
        heads.insert(OVERALL_HEAD.to_string(), head);
        let mut panel = JudgePanel::new();
        for (k, judge) in data.judge_specs.keys().enumerate() {
            let r = 0.55 + 0.1 * k as f64;
            panel.set(
                judge,
                OVERALL_HEAD,
                JudgeReliability::from_rates(r, 1.02 - r),
            );
        }
        let model = EvaluatorModel {
            embedding_dim: 5,
            heads,
            panel,
            metadata: ModelMetadata::default(),
        };
        let fast = batch_nll(&data.records, &data.items, &model, OVERALL_HEAD).unwrap();
        let slow = oracle_nll(&data.records, &data.items, &model, OVERALL_HEAD).unwrap();
        assert!(
            (fast - slow).abs() / slow.abs().max(1e-300) <= 1e-9,
            "fast {fast} vs oracle {slow}"
        );

        assert_eq!(
            oracle_nll(&[], &data.items, &model, OVERALL_HEAD).unwrap(),
            0.0
        );
    }

    #[test]
    fn oracle_guards_fire() {
        let mut items = ItemStore::new(1).unwrap();
        items
            .insert(EmbeddedItem::new("a", vec![0.0]).unwrap())
            .unwrap();
        items
            .insert(EmbeddedItem::new("b", vec![1.0]).unwrap())
            .unwrap();
        let head =
            QualityHead::from_parts(vec![1, 1], vec![vec![1.0]], vec![vec![0.0]], 1.0).unwrap();
        let mut heads = BTreeMap::new();
        heads.insert(OVERALL_HEAD.to_string(), head);

        // alpha -> 0 and beta -> 1 drive both branch products to exactly zero.
        let mut panel = JudgePanel::new();
        panel.set(
            "j0",
            OVERALL_HEAD,
            JudgeReliability {
                alpha_logit: -800.0,
                beta_logit: 800.0,
            },
        );
        let model = EvaluatorModel {
            embedding_dim: 1,
            heads,
            panel,
            metadata: ModelMetadata::default(),
        };
        let mut labels: BTreeMap<String, BTreeMap<String, JudgeLabel>> = BTreeMap::new();
        labels
            .entry("j0".into())
            .or_default()
            .insert(OVERALL_HEAD.to_string(), JudgeLabel::WinB);
        let record = PreferenceRecord {
            pair_id: "p0".into(),
            item_a: "a".into(),
            item_b: "b".into(),
            labels,
        };
        assert!(matches!(
            oracle_nll(&[record], &items, &model, OVERALL_HEAD),
            Err(SynthError::OracleUnderflow { .. })
        ));
    }

    #[test]
    fn flip_correction_picks_the_closer_interpretation() {
        let mut truth = JudgePanel::new();
        for (j, r) in [(0, 0.9), (1, 0.7), (2, 0.8)] {
            truth.set(
                &format!("judge{j}"),
                OVERALL_HEAD,
                JudgeReliability::from_rates(r, r - 0.05),
            );
        }

        // Exactly right: keep raw.
        let (kept, was_flipped) = flip_correct(&truth, &truth, OVERALL_HEAD).unwrap();
        assert!(!was_flipped);
        for judge in ["judge0", "judge1", "judge2"] {
            assert_eq!(
                kept.reliability_values(judge, OVERALL_HEAD).unwrap(),
                truth.reliability_values(judge, OVERALL_HEAD).unwrap()
            );
        }

        // Exactly mirrored: flip back onto the truth.
        let mut mirrored = JudgePanel::new();
        for judge in ["judge0", "judge1", "judge2"] {
            let r = truth.get(judge, OVERALL_HEAD).unwrap();
            mirrored.set(
                judge,
                OVERALL_HEAD,
                JudgeReliability {
                    alpha_logit: -r.beta_logit,
                    beta_logit: -r.alpha_logit,
                },
            );
        }
        let (recovered, was_flipped) = flip_correct(&mirrored, &truth, OVERALL_HEAD).unwrap();
        assert!(was_flipped);
        for judge in ["judge0", "judge1", "judge2"] {
            let (a, b) = recovered.reliability_values(judge, OVERALL_HEAD).unwrap();
            let (ta, tb) = truth.reliability_values(judge, OVERALL_HEAD).unwrap();
            assert!((a - ta).abs() <= 1e-12 && (b - tb).abs() <= 1e-12);
        }

        // Small perturbations of the truth stay unflipped.
        let mut noisy = JudgePanel::new();
        for (k, judge) in ["judge0", "judge1", "judge2"].iter().enumerate() {
            let (ta, tb) = truth.reliability_values(judge, OVERALL_HEAD).unwrap();
            let eps = if k % 2 == 0 { 0.02 } else { -0.02 };
            noisy.set(
                judge,
                OVERALL_HEAD,
                JudgeReliability::from_rates(ta + eps, tb - eps),
            );
        }
        let (_, was_flipped) = flip_correct(&noisy, &truth, OVERALL_HEAD).unwrap();
        assert!(!was_flipped);

        // Mismatched judge sets are rejected.
        let mut alien = JudgePanel::new();
        alien.set("zz", OVERALL_HEAD, JudgeReliability::from_rates(0.6, 0.6));
        assert!(matches!(
            flip_correct(&alien, &truth, OVERALL_HEAD),
            Err(SynthError::JudgeSetMismatch { .. })
        ));
    }

    #[test]
    fn zero_pairs_is_a_valid_empty_corpus() {
        let data = generate(&spec(
            0,
            vec![JudgeSpec {
                alpha: 0.9,
                beta: 0.9,
                fair_rate: 0.0,
            }],
            3,
        ))
        .unwrap();
        assert!(data.records.is_empty());
        assert!(data.latent.is_empty());
        assert_eq!(data.items.len(), 40);
        assert_eq!(data.qualities.len(), 40);
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        let base = SynthSpec::default();
        for bad in [
            SynthSpec {
                n_items: 1,
                ..base.clone()
            },
            SynthSpec {
                dim: 0,
                ..base.clone()
            },
            SynthSpec {
                judges: vec![],
                ..base.clone()
            },
            SynthSpec {
                judges: vec![JudgeSpec {
                    alpha: 1.2,
                    beta: 0.5,
                    fair_rate: 0.0,
                }],
                ..base.clone()
            },
            SynthSpec {
                sigma_true: 0.0,
                ..base.clone()
            },
        ] {
            assert!(matches!(generate(&bad), Err(SynthError::BadSpec(_))));
        }
    }
}
