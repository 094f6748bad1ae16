//! Evaluation protocols: correlations for single-rating scores, the pairwise
//! decision rule with its tie threshold, and per-dimension accuracies.
//!
//! Raw head scores live on an unbounded scale; [`normalize_score`] squashes
//! them into (0,1) for presentation. The default pairwise decision thresholds
//! the gap between *normalized* scores (the tie threshold 0.01 is quoted
//! against that scale), with a raw-difference variant available for callers
//! who want exact translation invariance instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{logistic, JudgeLabel, OVERALL_HEAD};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input lengths differ: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("need at least {want} values, got {got}")]
    TooShort { got: usize, want: usize },
    #[error("{side} input has zero variance; correlation is undefined")]
    ZeroVariance { side: &'static str },
    #[error("no records remain after dropping Fair golds")]
    EmptyAfterExclusion,
    #[error("prediction and gold maps cover different heads")]
    HeadSetMismatch,
    #[error("no dimension heads to average over")]
    NoDimensionHeads,
}

/// Verdict for one ordered pair of scored items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairDecision {
    #[serde(rename = "A")]
    WinA,
    #[serde(rename = "B")]
    WinB,
    Fair,
}

impl PairDecision {
    /// The decision seen from the swapped argument order.
    pub fn mirror(self) -> Self {
        match self {
            PairDecision::WinA => PairDecision::WinB,
            PairDecision::WinB => PairDecision::WinA,
            PairDecision::Fair => PairDecision::Fair,
        }
    }
}

impl From<JudgeLabel> for PairDecision {
    fn from(label: JudgeLabel) -> Self {
        match label {
            JudgeLabel::WinA => PairDecision::WinA,
            JudgeLabel::WinB => PairDecision::WinB,
            JudgeLabel::Fair => PairDecision::Fair,
        }
    }
}

/// Which scale the tie threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionMode {
    /// Threshold the gap between normalized scores (the documented default;
    /// a 0.01 threshold matches score printouts like 0.723 vs 0.674).
    #[default]
    Normalized,
    /// Threshold the raw score difference. Exactly translation invariant.
    RawDiff,
}

/// Squash a raw score into (0,1): `logistic(raw / sqrt(2))`.
///
/// Strictly increasing, so it preserves every ordering; it exists purely for
/// presentation and reporting.
pub fn normalize_score(raw: f64) -> f64 {
    assert!(
        raw.is_finite(),
        "normalize_score requires a finite score, got {raw}"
    );
    logistic(raw / std::f64::consts::SQRT_2)
}

/// Decide a pair from two raw scores.
///
/// Fair when the gap (on the scale picked by `mode`) is below
/// `tie_threshold`, and always on exact equality — so the rule stays
/// symmetric even at `tie_threshold = 0`, where it is a pure argmax.
pub fn decide_pairwise(
    score_a: f64,
    score_b: f64,
    tie_threshold: f64,
    mode: DecisionMode,
) -> PairDecision {
    assert!(
        score_a.is_finite() && score_b.is_finite(),
        "decide_pairwise requires finite scores, got ({score_a}, {score_b})"
    );
    assert!(
        tie_threshold >= 0.0 && tie_threshold.is_finite(),
        "tie_threshold must be a finite nonnegative number, got {tie_threshold}"
    );
    let gap = match mode {
        DecisionMode::Normalized => normalize_score(score_a) - normalize_score(score_b),
        DecisionMode::RawDiff => score_a - score_b,
    };
    if gap == 0.0 || gap.abs() < tie_threshold {
        PairDecision::Fair
    } else if gap > 0.0 {
        PairDecision::WinA
    } else {
        PairDecision::WinB
    }
}

fn check_paired(xs: &[f64], ys: &[f64]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooShort {
            got: xs.len(),
            want: 2,
        });
    }
    Ok(())
}

/// Sample Pearson correlation. Rejects zero-variance inputs instead of
/// returning NaN.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_paired(xs, ys)?;
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(MetricsError::ZeroVariance { side: "first" });
    }
    if var_y == 0.0 {
        return Err(MetricsError::ZeroVariance { side: "second" });
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks (1-based); a block of equal values shares the mean of the
/// ranks it spans. Equality is exact f64 equality.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end, averaged over the tie block.
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean_rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_paired(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// How pairwise accuracy treats ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Ternary exact-match rate over every record.
    WithTie,
    /// Drop records whose gold is Fair, score the rest against argmax
    /// predictions; a prediction that is still Fair (exact score equality)
    /// earns half credit.
    WithoutTie,
}

/// Percentage agreement between predicted and gold decisions.
///
/// For [`AccuracyMode::WithoutTie`] the predictions must come from
/// `decide_pairwise` with `tie_threshold = 0`, so Fair appears only on exact
/// score equality (worth 0.5).
pub fn pairwise_accuracy(
    preds: &[PairDecision],
    golds: &[PairDecision],
    mode: AccuracyMode,
) -> Result<f64, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            xs: preds.len(),
            ys: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::TooShort { got: 0, want: 1 });
    }
    match mode {
        AccuracyMode::WithTie => {
            let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
            Ok(100.0 * hits as f64 / preds.len() as f64)
        }
        AccuracyMode::WithoutTie => {
            let mut kept = 0usize;
            let mut credit = 0.0f64;
            for (p, g) in preds.iter().zip(golds) {
                if *g == PairDecision::Fair {
                    continue;
                }
                kept += 1;
                credit += match p {
                    PairDecision::Fair => 0.5,
                    _ if p == g => 1.0,
                    _ => 0.0,
                };
            }
            if kept == 0 {
                return Err(MetricsError::EmptyAfterExclusion);
            }
            Ok(100.0 * credit / kept as f64)
        }
    }
}

/// Ternary accuracy per head plus the macro average across dimension heads.
///
/// The returned map carries one entry per input head and an `"average"` entry
/// over every head except "Overall" (the overall verdict is not a dimension).
pub fn dimension_accuracy(
    preds: &BTreeMap<String, Vec<PairDecision>>,
    golds: &BTreeMap<String, Vec<PairDecision>>,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    if preds.keys().ne(golds.keys()) {
        return Err(MetricsError::HeadSetMismatch);
    }
    let mut out = BTreeMap::new();
    let mut sum = 0.0;
    let mut dims = 0usize;
    for (head, p) in preds {
        let acc = pairwise_accuracy(p, &golds[head], AccuracyMode::WithTie)?;
        if head != OVERALL_HEAD {
            sum += acc;
            dims += 1;
        }
        out.insert(head.clone(), acc);
    }
    if dims == 0 {
        return Err(MetricsError::NoDimensionHeads);
    }
    out.insert("average".to_string(), sum / dims as f64);
    Ok(out)
}

/// Correlations of predicted scores against gold single ratings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SingleRatingReport {
    pub pearson: f64,
    pub spearman: f64,
}

/// Both pairwise accuracies plus the decision rule that produced them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub with_tie: f64,
    pub without_tie: f64,
    pub tie_threshold: f64,
    pub mode: DecisionMode,
}

/// Decide and score a batch of raw score pairs against gold decisions,
/// producing both accuracy variants under one decision rule.
pub fn pairwise_report(
    scores: &[(f64, f64)],
    golds: &[PairDecision],
    tie_threshold: f64,
    mode: DecisionMode,
) -> Result<PairwiseReport, MetricsError> {
    if scores.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            xs: scores.len(),
            ys: golds.len(),
        });
    }
    let with: Vec<PairDecision> = scores
        .iter()
        .map(|&(a, b)| decide_pairwise(a, b, tie_threshold, mode))
        .collect();
    let argmax: Vec<PairDecision> = scores
        .iter()
        .map(|&(a, b)| decide_pairwise(a, b, 0.0, mode))
        .collect();
    Ok(PairwiseReport {
        with_tie: pairwise_accuracy(&with, golds, AccuracyMode::WithTie)?,
        without_tie: pairwise_accuracy(&argmax, golds, AccuracyMode::WithoutTie)?,
        tie_threshold,
        mode,
    })
}

/// Top-level evaluation report; sections are present only when the
/// corresponding inputs were evaluated.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_rating: Option<SingleRatingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairwise: Option<PairwiseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<BTreeMap<String, f64>>,
}
