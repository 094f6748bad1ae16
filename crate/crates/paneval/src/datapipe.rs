//! Dataset schemas, the judge-annotation parser, and the corpus-construction
//! filters.
//!
//! Dialogues are alternating Human/Assistant transcripts. Judges return
//! eleven single-key JSON lines (ten dimensions plus Overall); the parser
//! accepts exactly that shape in strict mode and fishes the same objects out
//! of surrounding prose in lenient mode. The filters reproduce the dataset
//! construction pipeline: consistency across position-swapped duplicates,
//! label-ratio balancing, and a cap on response-length mismatch.
//!
//! Preference labels travel as JSON lines, one object per pair:
//! `{"pair_id": …, "item_a": …, "item_b": …, "labels": {judge: {head:
//! "A"|"B"|"Fair"}}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{JudgeLabel, ModelError, PreferenceRecord, DIMENSION_HEADS, OVERALL_HEAD};
use crate::rng::stream;
use crate::store::{read_embedding_store, EmbeddingStore, StoreError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dialogue `{id}`: {reason}")]
    BadDialogue { id: String, reason: String },
    #[error("expected exactly 11 annotation lines, found {got}")]
    WrongLineCount { got: usize },
    #[error("annotation line {line}: not a JSON object ({message})")]
    BadLine { line: usize, message: String },
    #[error("annotation line {line}: expected exactly one key")]
    NotSingleKey { line: usize },
    #[error("annotation line {line}: `{name}` is not a rated dimension")]
    UnknownDimension { line: usize, name: String },
    #[error("annotation line {line}: `{name}` has illegal value `{value}` (want A, B, or Fair)")]
    IllegalValue {
        line: usize,
        name: String,
        value: String,
    },
    #[error("annotation line {line}: duplicate entry for `{name}`")]
    DuplicateDimension { line: usize, name: String },
    #[error("annotation is missing {}: {}", if .names.len() == 1 { "a dimension" } else { "dimensions" }, .names.join(", "))]
    MissingDimensions { names: Vec<String> },
    #[error("sheet must cover exactly the ten dimensions plus Overall")]
    WrongHeadSet,
    #[error("records without a swapped counterpart: {}", .ids.join(", "))]
    SwapOrphans { ids: Vec<String> },
    #[error("invalid balance ratios: {0}")]
    BadRatios(String),
    #[error("record `{pair_id}` has no `{head}` label to balance on")]
    NoHeadLabel { pair_id: String, head: String },
    #[error("labels line {line}: {message}")]
    LabelsLine { line: usize, message: String },
    #[error("labels line {line}: duplicate pair id `{pair_id}`")]
    DuplicatePairId { line: usize, pair_id: String },
    #[error("record `{pair_id}` references item `{item}` with no embedding")]
    MissingEmbedding { pair_id: String, item: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// A multi-turn transcript: strictly alternating speakers starting with
/// Human, with 2 to 10 human turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl DialogueRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |reason: &str| {
            Err(DataError::BadDialogue {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Speaker::Human
            } else {
                Speaker::Assistant
            };
            if turn.speaker != expected {
                return fail("turns must alternate Human/Assistant starting with Human");
            }
        }
        let humans = self
            .turns
            .iter()
            .filter(|t| t.speaker == Speaker::Human)
            .count();
        if !(2..=10).contains(&humans) {
            return fail("must contain between 2 and 10 human turns");
        }
        Ok(())
    }
}

/// Whitespace-separated tokens summed over every assistant turn.
pub fn assistant_word_count(dialogue: &DialogueRecord) -> usize {
    dialogue
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::Assistant)
        .map(|t| t.text.split_whitespace().count())
        .sum()
}

/// Heads in their canonical presentation order: the ten dimensions, then
/// Overall.
pub fn canonical_heads() -> impl Iterator<Item = &'static str> {
    DIMENSION_HEADS
        .iter()
        .copied()
        .chain(std::iter::once(OVERALL_HEAD))
}

/// One judge's verdict sheet: a label for every dimension plus Overall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSheet {
    labels: BTreeMap<String, JudgeLabel>,
}

impl AnnotationSheet {
    /// Requires exactly the eleven canonical heads.
    pub fn new(labels: BTreeMap<String, JudgeLabel>) -> Result<Self, DataError> {
        if labels.len() != 11 || !canonical_heads().all(|h| labels.contains_key(h)) {
            return Err(DataError::WrongHeadSet);
        }
        Ok(AnnotationSheet { labels })
    }

    pub fn label(&self, head: &str) -> Option<JudgeLabel> {
        self.labels.get(head).copied()
    }

    pub fn labels(&self) -> &BTreeMap<String, JudgeLabel> {
        &self.labels
    }

    pub fn into_labels(self) -> BTreeMap<String, JudgeLabel> {
        self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Exactly 11 single-key JSON lines, nothing else.
    Strict,
    /// Scan the whole text for the 11 objects; first occurrence per head
    /// wins. Tolerates judge prose around and between them.
    Lenient,
}

fn label_str(label: JudgeLabel) -> &'static str {
    match label {
        JudgeLabel::WinA => "A",
        JudgeLabel::WinB => "B",
        JudgeLabel::Fair => "Fair",
    }
}

fn label_from_str(value: &str) -> Option<JudgeLabel> {
    match value {
        "A" => Some(JudgeLabel::WinA),
        "B" => Some(JudgeLabel::WinB),
        "Fair" => Some(JudgeLabel::Fair),
        _ => None,
    }
}

fn missing_heads(found: &BTreeMap<String, JudgeLabel>) -> Vec<String> {
    canonical_heads()
        .filter(|h| !found.contains_key(*h))
        .map(str::to_string)
        .collect()
}

fn parse_strict(text: &str) -> Result<AnnotationSheet, DataError> {
    let mut found: BTreeMap<String, JudgeLabel> = BTreeMap::new();
    let mut object_lines = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        object_lines += 1;
        if object_lines > 11 {
            return Err(DataError::WrongLineCount {
                got: object_lines
                    + text
                        .lines()
                        .skip(idx + 1)
                        .filter(|l| !l.trim().is_empty())
                        .count(),
            });
        }
        let object: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(trimmed).map_err(|e| DataError::BadLine {
                line,
                message: e.to_string(),
            })?;
        if object.len() != 1 {
            return Err(DataError::NotSingleKey { line });
        }
        let (name, value) = object.into_iter().next().unwrap();
        if !canonical_heads().any(|h| h == name) {
            return Err(DataError::UnknownDimension { line, name });
        }
        let value_str = value
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| value.to_string());
        let label = label_from_str(&value_str).ok_or_else(|| DataError::IllegalValue {
            line,
            name: name.clone(),
            value: value_str,
        })?;
        if found.insert(name.clone(), label).is_some() {
            return Err(DataError::DuplicateDimension { line, name });
        }
    }
    if object_lines != 11 {
        return Err(DataError::WrongLineCount { got: object_lines });
    }
    let names = missing_heads(&found);
    if !names.is_empty() {
        return Err(DataError::MissingDimensions { names });
    }
    AnnotationSheet::new(found)
}

fn annotation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let heads = canonical_heads().collect::<Vec<_>>().join("|");
        Regex::new(&format!(
            r#"\{{\s*"(?P<head>{heads})"\s*:\s*"(?P<value>A|B|Fair)"\s*\}}"#
        ))
        .expect("static annotation pattern compiles")
    })
}

fn parse_lenient(text: &str) -> Result<AnnotationSheet, DataError> {
    let mut found: BTreeMap<String, JudgeLabel> = BTreeMap::new();
    for capture in annotation_regex().captures_iter(text) {
        let head = capture.name("head").unwrap().as_str();
        let value = capture.name("value").unwrap().as_str();
        // First occurrence per head wins.
        found
            .entry(head.to_string())
            .or_insert_with(|| label_from_str(value).expect("pattern admits only legal values"));
    }
    let names = missing_heads(&found);
    if !names.is_empty() {
        return Err(DataError::MissingDimensions { names });
    }
    AnnotationSheet::new(found)
}

/// Parse one judge's raw output into a sheet.
pub fn parse_annotation(text: &str, mode: ParseMode) -> Result<AnnotationSheet, DataError> {
    match mode {
        ParseMode::Strict => parse_strict(text),
        ParseMode::Lenient => parse_lenient(text),
    }
}

/// The canonical 11-line rendering; `parse_annotation` inverts it in either
/// mode.
pub fn render_annotation(sheet: &AnnotationSheet) -> String {
    let mut out = String::new();
    for head in canonical_heads() {
        let label = sheet
            .label(head)
            .expect("sheet is validated to cover every head");
        out.push_str(&format!("{{\"{head}\": \"{}\"}}\n", label_str(label)));
    }
    out
}

/// Suffix linking a record to its order-swapped duplicate.
pub const SWAP_SUFFIX: &str = "/swap";

fn labels_mirror(original: &PreferenceRecord, swapped: &PreferenceRecord) -> bool {
    if swapped.item_a != original.item_b || swapped.item_b != original.item_a {
        return false;
    }
    if original.labels.keys().ne(swapped.labels.keys()) {
        return false;
    }
    for (judge, heads) in &original.labels {
        let counterpart = &swapped.labels[judge];
        if heads.keys().ne(counterpart.keys()) {
            return false;
        }
        if heads
            .iter()
            .any(|(head, label)| counterpart[head] != label.mirror())
        {
            return false;
        }
    }
    true
}

/// Keep only records whose swapped duplicate (`pair_id` + "/swap") voted the
/// exact mirror on every judge and head. Returns the surviving originals in
/// input order; the duplicates themselves are consumed.
///
/// # Errors
/// Every record must arrive with its counterpart; unmatched ids on either
/// side are reported together.
pub fn position_swap_filter(
    records: &[PreferenceRecord],
) -> Result<Vec<PreferenceRecord>, DataError> {
    let mut originals: Vec<&PreferenceRecord> = Vec::new();
    let mut swaps: BTreeMap<&str, &PreferenceRecord> = BTreeMap::new();
    for record in records {
        match record.pair_id.strip_suffix(SWAP_SUFFIX) {
            Some(base) => {
                swaps.insert(base, record);
            }
            None => originals.push(record),
        }
    }

    let original_ids: BTreeSet<&str> = originals.iter().map(|r| r.pair_id.as_str()).collect();
    let mut orphans: Vec<String> = originals
        .iter()
        .filter(|r| !swaps.contains_key(r.pair_id.as_str()))
        .map(|r| r.pair_id.clone())
        .collect();
    orphans.extend(
        swaps
            .iter()
            .filter(|(base, _)| !original_ids.contains(*base))
            .map(|(_, r)| r.pair_id.clone()),
    );
    if !orphans.is_empty() {
        orphans.sort();
        return Err(DataError::SwapOrphans { ids: orphans });
    }

    Ok(originals
        .into_iter()
        .filter(|original| labels_mirror(original, swaps[original.pair_id.as_str()]))
        .cloned()
        .collect())
}

/// Majority label across judges for `head`; any tie for the top count is
/// Fair.
pub fn majority_label(record: &PreferenceRecord, head: &str) -> Result<JudgeLabel, DataError> {
    let mut counts = [0usize; 3];
    let mut seen = false;
    for (_, label) in record.labels_for_head(head) {
        seen = true;
        let slot = match label {
            JudgeLabel::WinA => 0,
            JudgeLabel::WinB => 1,
            JudgeLabel::Fair => 2,
        };
        counts[slot] += 1;
    }
    if !seen {
        return Err(DataError::NoHeadLabel {
            pair_id: record.pair_id.clone(),
            head: head.to_string(),
        });
    }
    let top = *counts.iter().max().unwrap();
    let winners = counts.iter().filter(|&&c| c == top).count();
    if winners > 1 {
        return Ok(JudgeLabel::Fair);
    }
    Ok(match counts.iter().position(|&c| c == top).unwrap() {
        0 => JudgeLabel::WinA,
        1 => JudgeLabel::WinB,
        _ => JudgeLabel::Fair,
    })
}

/// Epsilon-guarded floor: `n / 0.4`-style quotients land a hair under the
/// integer they mean.
fn ratio_floor(value: f64) -> usize {
    (value + 1e-9).floor() as usize
}

/// Downsample so the majority-label classes for `head` hit the target
/// proportions (within one record per class), keeping as many records as
/// possible. Selection within each class is uniform under the seed; output
/// preserves input order. A class with a positive target ratio but no records
/// forces an empty result.
pub fn balance_labels(
    records: &[PreferenceRecord],
    head: &str,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<PreferenceRecord>, DataError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(DataError::BadRatios("ratios must be nonnegative".into()));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios("ratios must sum to 1".into()));
    }

    let mut classes: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (idx, record) in records.iter().enumerate() {
        let slot = match majority_label(record, head)? {
            JudgeLabel::WinA => 0,
            JudgeLabel::WinB => 1,
            JudgeLabel::Fair => 2,
        };
        classes[slot].push(idx);
    }

    // Largest total T with floor-compatible class targets: each class with a
    // positive ratio can supply at most n_c / r_c of the total.
    let total = (0..3)
        .filter(|&c| r[c] > 0.0)
        .map(|c| ratio_floor(classes[c].len() as f64 / r[c]))
        .min()
        .unwrap_or(0);

    // Largest-remainder apportionment of `total` across the classes.
    let mut targets = [0usize; 3];
    let mut fractions = [0.0f64; 3];
    for c in 0..3 {
        let ideal = total as f64 * r[c];
        targets[c] = ratio_floor(ideal).min(classes[c].len());
        fractions[c] = ideal - targets[c] as f64;
    }
    let mut remainder = total - targets.iter().sum::<usize>().min(total);
    let mut by_fraction = [0usize, 1, 2];
    by_fraction.sort_by(|&a, &b| fractions[b].total_cmp(&fractions[a]));
    for &c in &by_fraction {
        if remainder == 0 {
            break;
        }
        if r[c] > 0.0 && targets[c] < classes[c].len() {
            targets[c] += 1;
            remainder -= 1;
        }
    }

    let mut rng = stream(seed, "balance");
    let mut keep = vec![false; records.len()];
    for c in 0..3 {
        let chosen = rand::seq::index::sample(&mut rng, classes[c].len(), targets[c]);
        for pick in chosen.iter() {
            keep[classes[c][pick]] = true;
        }
    }
    Ok(records
        .iter()
        .enumerate()
        .filter(|(idx, _)| keep[*idx])
        .map(|(_, record)| record.clone())
        .collect())
}

/// Keep pairs whose assistant-side word counts differ by at most
/// `max_words` (boundary inclusive). Symmetric in the two sides.
pub fn length_diff_filter(
    pairs: &[(DialogueRecord, DialogueRecord)],
    max_words: usize,
) -> Vec<(DialogueRecord, DialogueRecord)> {
    pairs
        .iter()
        .filter(|(a, b)| assistant_word_count(a).abs_diff(assistant_word_count(b)) <= max_words)
        .cloned()
        .collect()
}

/// Serialize records as JSON lines. Every record is validated first.
pub fn write_labels(records: &[PreferenceRecord], path: &Path) -> Result<(), DataError> {
    let mut out = std::fs::File::create(path)?;
    for record in records {
        record.validate()?;
        let line = serde_json::to_string(record)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read JSON-lines preference records, rejecting malformed lines and
/// duplicate pair ids with their line numbers. Blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<PreferenceRecord>, DataError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PreferenceRecord =
            serde_json::from_str(&line).map_err(|e| DataError::LabelsLine {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| DataError::LabelsLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if seen.insert(record.pair_id.clone(), line_no).is_some() {
            return Err(DataError::DuplicatePairId {
                line: line_no,
                pair_id: record.pair_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Load a labels file and its embedding store together, checking that every
/// referenced item has an embedding row.
pub fn load_preference_dataset(
    labels_path: &Path,
    embeddings_path: &Path,
) -> Result<(Vec<PreferenceRecord>, EmbeddingStore), DataError> {
    let records = read_labels(labels_path)?;
    let store = read_embedding_store(embeddings_path)?;
    for record in &records {
        for item in [&record.item_a, &record.item_b] {
            if !store.contains(item) {
                return Err(DataError::MissingEmbedding {
                    pair_id: record.pair_id.clone(),
                    item: item.clone(),
                });
            }
        }
    }
    Ok((records, store))
}
