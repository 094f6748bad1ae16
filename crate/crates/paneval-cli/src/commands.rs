//! The six subcommands, each a thin orchestration over the library.
//!
//! Commands never mutate their inputs: every artifact is written to fresh
//! paths (atomically), progress notes go to stderr, and data outputs go to
//! stdout unless `--out` redirects them to a file with a metadata sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use paneval::datapipe::{
    assistant_word_count, balance_labels, load_preference_dataset, majority_label,
    position_swap_filter, read_labels, write_labels, DialogueRecord, SWAP_SUFFIX,
};
use paneval::embed::fetch_embeddings;
use paneval::metrics::{
    decide_pairwise, dimension_accuracy, normalize_score, pairwise_report, pearson, spearman,
    EvalReport, PairDecision, SingleRatingReport,
};
use paneval::model::{EmbeddedItem, EvaluatorModel, PreferenceRecord};
use paneval::model_file::{read_model, write_model};
use paneval::rng::child_seed;
use paneval::store::{read_embedding_store, write_store_bytes, EmbeddingStore};
use paneval::synth::{generate, JudgeSpec, SynthSpec};
use serde::Serialize;

use crate::config::{ResolvedConfig, RunConfig};
use crate::error::CliError;
use crate::output::{atomic_via, atomic_write, with_suffix, write_meta};
use crate::Protocol;

/// Everything a command needs besides its own file arguments.
pub struct Ctx {
    pub resolved: ResolvedConfig,
    pub quiet: bool,
    pub out: Option<std::path::PathBuf>,
}

impl Ctx {
    fn config(&self) -> &RunConfig {
        &self.resolved.config
    }

    /// Progress note on stderr; silenced by `--quiet`.
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Warnings always print, quiet or not.
    fn warn(&self, msg: impl AsRef<str>) {
        eprintln!("warning: {}", msg.as_ref());
    }

    fn require_out(&self, command: &str) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{command} requires --out PATH")))
    }
}

fn read_dialogues(path: &Path) -> Result<Vec<DialogueRecord>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::Config(format!("cannot read {}: {err}", path.display())))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(line).map_err(|err| {
            CliError::Config(format!(
                "{}:{}: bad dialogue: {err}",
                path.display(),
                idx + 1
            ))
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

fn read_labels_at(path: &Path) -> Result<Vec<PreferenceRecord>, CliError> {
    read_labels(path).map_err(|err| CliError::Config(format!("labels {}: {err}", path.display())))
}

/// Widen one stored row back to the f64 item the model scores.
fn embedded(store: &EmbeddingStore, id: &str) -> Result<EmbeddedItem, CliError> {
    let row = store.require(id)?;
    Ok(EmbeddedItem::new(
        id,
        row.iter().map(|&v| f64::from(v)).collect(),
    )?)
}

fn score_pair(
    model: &EvaluatorModel,
    store: &EmbeddingStore,
    head: &str,
    record: &PreferenceRecord,
) -> Result<(f64, f64), CliError> {
    let a = model.score(head, &embedded(store, &record.item_a)?)?;
    let b = model.score(head, &embedded(store, &record.item_b)?)?;
    Ok((a, b))
}

/// Emit JSON lines to `--out` (plus sidecar) or stdout.
fn deliver_lines(ctx: &Ctx, command: &str, lines: &[String]) -> Result<(), CliError> {
    match &ctx.out {
        Some(out) => {
            let mut bytes = Vec::new();
            for line in lines {
                bytes.extend_from_slice(line.as_bytes());
                bytes.push(b'\n');
            }
            atomic_write(out, &bytes)?;
            write_meta(out, command, &ctx.resolved)?;
            ctx.note(format!("wrote {} lines to {}", lines.len(), out.display()));
        }
        None => {
            for line in lines {
                println!("{line}");
            }
        }
    }
    Ok(())
}

/// Filter and balance preference labels: position-swap consistency (when a
/// swapped rerun is supplied), assistant-length difference (when dialogue
/// texts are supplied), then class balancing. Prints kept/total per stage.
pub fn cmd_prepare(
    ctx: &Ctx,
    labels: &Path,
    swaps: Option<&Path>,
    dialogues: Option<&Path>,
) -> Result<(), CliError> {
    let mut records = read_labels_at(labels)?;

    match swaps {
        Some(path) => {
            let swapped = read_labels(path)
                .map_err(|err| CliError::Config(format!("swaps {}: {err}", path.display())))?;
            let mut combined = records;
            combined.extend(swapped);
            let originals = combined
                .iter()
                .filter(|r| !r.pair_id.ends_with(SWAP_SUFFIX))
                .count();
            records = position_swap_filter(&combined)?;
            ctx.note(format!(
                "position swap: kept {} of {originals} pairs",
                records.len()
            ));
        }
        None => ctx.note("position swap: skipped (no swaps supplied)"),
    }

    match dialogues {
        Some(path) => {
            let texts = read_dialogues(path)?;
            let words: BTreeMap<&str, usize> = texts
                .iter()
                .map(|d| (d.id.as_str(), assistant_word_count(d)))
                .collect();
            let count_of = |record: &PreferenceRecord, id: &str| {
                words.get(id).copied().ok_or_else(|| {
                    CliError::Config(format!(
                        "pair `{}` references dialogue `{id}` missing from {}",
                        record.pair_id,
                        path.display()
                    ))
                })
            };
            let max_diff = ctx.config().prepare.max_word_diff;
            let before = records.len();
            let mut kept = Vec::with_capacity(before);
            for record in records {
                let a = count_of(&record, &record.item_a)?;
                let b = count_of(&record, &record.item_b)?;
                if a.abs_diff(b) <= max_diff {
                    kept.push(record);
                }
            }
            records = kept;
            ctx.note(format!(
                "length filter: kept {} of {before} pairs (max diff {max_diff} words)",
                records.len()
            ));
        }
        None => ctx.note("length filter: skipped (no dialogue texts supplied)"),
    }

    let prep = &ctx.config().prepare;
    let before = records.len();
    let balanced = balance_labels(
        &records,
        &prep.balance_head,
        prep.ratios,
        child_seed(ctx.config().seed, "prepare"),
    )?;
    let (ra, rb, rf) = prep.ratios;
    ctx.note(format!(
        "balance: kept {} of {before} pairs (head {}, ratios {ra}/{rb}/{rf})",
        balanced.len(),
        prep.balance_head
    ));

    match &ctx.out {
        Some(out) => {
            atomic_via(out, |tmp| write_labels(&balanced, tmp).map_err(Into::into))?;
            write_meta(out, "prepare", &ctx.resolved)?;
            ctx.note(format!(
                "wrote {} pairs to {}",
                balanced.len(),
                out.display()
            ));
        }
        None => {
            for record in &balanced {
                println!("{}", serde_json::to_string(record)?);
            }
        }
    }
    Ok(())
}

/// Fetch embeddings for a dialogue corpus into a binary store file.
pub fn cmd_embed(ctx: &Ctx, dialogues: &Path) -> Result<(), CliError> {
    let out = ctx.require_out("embed")?;
    let records = read_dialogues(dialogues)?;
    let outcome = fetch_embeddings(&ctx.config().endpoint, &records)?;
    let hits = outcome.cache_hits;
    let total = records.len();
    let ratio = hits as f64 / total.max(1) as f64;
    ctx.note(format!("cache hits: {hits} of {total} (ratio {ratio:.2})"));
    ctx.note(format!("network calls: {}", outcome.requests));
    atomic_write(out, &write_store_bytes(&outcome.store))?;
    write_meta(out, "embed", &ctx.resolved)?;
    ctx.note(format!(
        "wrote {} embeddings (dim {}) to {}",
        outcome.store.len(),
        outcome.store.dim(),
        out.display()
    ));
    Ok(())
}

/// Fit the selected quality heads and per-judge reliabilities, then write the
/// model file and a JSON training trace next to it.
pub fn cmd_train(ctx: &Ctx, labels: &Path, embeddings: &Path) -> Result<(), CliError> {
    let out = ctx.require_out("train")?;
    let (records, store) = load_preference_dataset(labels, embeddings)?;
    let items = store.to_item_store()?;
    let config = &ctx.config().train;
    ctx.note(format!(
        "training {} heads on {} pairs ({} items, dim {})",
        config.head_selection.len(),
        records.len(),
        items.len(),
        items.dim()
    ));

    let (model, trace) = paneval::train::train(&records, &items, config, &config.head_selection)?;

    if trace.epochs.iter().all(|e| e.mean_nll == 0.0) {
        ctx.warn(
            "the dataset carries no preference signal (every label is Fair); \
             scores and reliabilities keep their initial values",
        );
    }
    for (head, judges) in &trace.reliabilities {
        for (judge, r) in judges {
            ctx.note(format!(
                "{head} / {judge}: alpha {:.3}, beta {:.3}",
                r.alpha, r.beta
            ));
        }
    }
    if let Some(last) = trace.epochs.last() {
        ctx.note(format!(
            "final mean NLL {:.6} after {} epochs in {:.1}s",
            last.mean_nll,
            trace.epochs.len(),
            trace.wall_seconds
        ));
    }

    atomic_via(out, |tmp| write_model(&model, tmp).map_err(Into::into))?;
    let trace_path = with_suffix(out, ".trace.json");
    let mut trace_json = serde_json::to_vec_pretty(&trace)?;
    trace_json.push(b'\n');
    atomic_write(&trace_path, &trace_json)?;
    write_meta(out, "train", &ctx.resolved)?;
    ctx.note(format!(
        "wrote model {} and trace {}",
        out.display(),
        trace_path.display()
    ));
    Ok(())
}

/// Score a model against gold data under one protocol and emit an EvalReport.
pub fn cmd_eval(
    ctx: &Ctx,
    model_path: &Path,
    embeddings: &Path,
    protocol: Protocol,
    gold: &Path,
) -> Result<(), CliError> {
    let model = read_model(model_path)?;
    let store = read_embedding_store(embeddings)?;
    let eval = &ctx.config().eval;

    let report = match protocol {
        Protocol::Rating => {
            let text = fs::read_to_string(gold).map_err(|err| {
                CliError::Config(format!("cannot read {}: {err}", gold.display()))
            })?;
            let truth: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|err| {
                CliError::Config(format!(
                    "rating gold {} must be a JSON object of id to score: {err}",
                    gold.display()
                ))
            })?;
            let mut preds = Vec::with_capacity(truth.len());
            let mut golds = Vec::with_capacity(truth.len());
            for (id, &score) in &truth {
                preds.push(model.score(&eval.head, &embedded(&store, id)?)?);
                golds.push(score);
            }
            EvalReport {
                single_rating: Some(SingleRatingReport {
                    pearson: pearson(&preds, &golds)?,
                    spearman: spearman(&preds, &golds)?,
                }),
                ..Default::default()
            }
        }
        Protocol::Pairwise => {
            let records = read_labels_at(gold)?;
            let mut scores = Vec::with_capacity(records.len());
            let mut golds = Vec::with_capacity(records.len());
            for record in &records {
                golds.push(PairDecision::from(majority_label(record, &eval.head)?));
                scores.push(score_pair(&model, &store, &eval.head, record)?);
            }
            EvalReport {
                pairwise: Some(pairwise_report(
                    &scores,
                    &golds,
                    eval.tie_threshold,
                    eval.decision_mode,
                )?),
                ..Default::default()
            }
        }
        Protocol::Dims => {
            let records = read_labels_at(gold)?;
            let mut preds: BTreeMap<String, Vec<PairDecision>> = BTreeMap::new();
            let mut golds: BTreeMap<String, Vec<PairDecision>> = BTreeMap::new();
            for head in model.heads.keys() {
                let mut p = Vec::with_capacity(records.len());
                let mut g = Vec::with_capacity(records.len());
                for record in &records {
                    g.push(PairDecision::from(majority_label(record, head)?));
                    let (a, b) = score_pair(&model, &store, head, record)?;
                    p.push(decide_pairwise(
                        a,
                        b,
                        eval.tie_threshold,
                        eval.decision_mode,
                    ));
                }
                preds.insert(head.clone(), p);
                golds.insert(head.clone(), g);
            }
            EvalReport {
                dimensions: Some(dimension_accuracy(&preds, &golds)?),
                ..Default::default()
            }
        }
    };

    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    match &ctx.out {
        Some(out) => {
            atomic_write(out, &json)?;
            write_meta(out, "eval", &ctx.resolved)?;
            ctx.note(format!("wrote report to {}", out.display()));
        }
        None => print!("{}", String::from_utf8_lossy(&json)),
    }
    Ok(())
}

#[derive(Serialize)]
struct ItemScoreLine<'a> {
    id: &'a str,
    raw: f64,
    normalized: f64,
}

#[derive(Serialize)]
struct PairScoreLine<'a> {
    pair_id: &'a str,
    decision: PairDecision,
    score_a: f64,
    score_b: f64,
}

/// Emit per-item scores, or per-pair decisions when `--pairs-from` names a
/// labels file. Defaults to every item in the store, in id order.
pub fn cmd_score(
    ctx: &Ctx,
    model_path: &Path,
    embeddings: &Path,
    ids: Option<&str>,
    pairs_from: Option<&Path>,
) -> Result<(), CliError> {
    if ids.is_some() && pairs_from.is_some() {
        return Err(CliError::Config(
            "choose one of --ids or --pairs-from".into(),
        ));
    }
    let model = read_model(model_path)?;
    let store = read_embedding_store(embeddings)?;
    let eval = &ctx.config().eval;

    let mut lines = Vec::new();
    if let Some(path) = pairs_from {
        for record in &read_labels_at(path)? {
            let (score_a, score_b) = score_pair(&model, &store, &eval.head, record)?;
            let decision =
                decide_pairwise(score_a, score_b, eval.tie_threshold, eval.decision_mode);
            lines.push(serde_json::to_string(&PairScoreLine {
                pair_id: &record.pair_id,
                decision,
                score_a,
                score_b,
            })?);
        }
    } else {
        let wanted: Vec<String> = match ids {
            Some(csv) => csv
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            None => store.ids().map(String::from).collect(),
        };
        for id in &wanted {
            let raw = model.score(&eval.head, &embedded(&store, id)?)?;
            lines.push(serde_json::to_string(&ItemScoreLine {
                id,
                raw,
                normalized: normalize_score(raw),
            })?);
        }
    }
    deliver_lines(ctx, "score", &lines)
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    spec: &'a SynthSpec,
    w_star: &'a [f64],
    qualities: &'a BTreeMap<String, f64>,
    /// Latent pair outcome, aligned with the labels file: true means the
    /// second item truly wins.
    latent: &'a [bool],
    judge_specs: &'a BTreeMap<String, JudgeSpec>,
}

/// Generate a synthetic preference corpus with its full ground truth:
/// `labels.jsonl`, `embeddings.bin`, and `truth.json` under the output
/// directory. Byte-identical for a fixed spec.
pub fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let out = ctx.require_out("simulate")?;
    fs::create_dir_all(out)?;
    let spec = &ctx.config().synth;
    let data = generate(spec)?;

    atomic_via(&out.join("labels.jsonl"), |tmp| {
        write_labels(&data.records, tmp).map_err(Into::into)
    })?;
    let store = EmbeddingStore::from_item_store(&data.items)?;
    atomic_write(&out.join("embeddings.bin"), &write_store_bytes(&store))?;
    let truth = TruthSidecar {
        spec,
        w_star: &data.w_star,
        qualities: &data.qualities,
        latent: &data.latent,
        judge_specs: &data.judge_specs,
    };
    let mut truth_json = serde_json::to_vec_pretty(&truth)?;
    truth_json.push(b'\n');
    atomic_write(&out.join("truth.json"), &truth_json)?;
    write_meta(out, "simulate", &ctx.resolved)?;

    ctx.note(format!(
        "simulated {} items (dim {}), {} pairs, {} judges under {}",
        spec.n_items,
        spec.dim,
        data.records.len(),
        spec.judges.len(),
        out.display()
    ));
    Ok(())
}
