//! Run configuration.
//!
//! One JSON file configures everything; any single field can be overridden
//! on the command line with a flag named after its dotted path, e.g.
//! `--train.epochs 12` or `--endpoint.base_url http://localhost:9090`.
//! Precedence is flag > file > built-in default, resolved before any I/O,
//! and the resolved config is echoed (with its digest) into every output's
//! metadata sidecar so a run can be reproduced from its artifacts.
//!
//! Randomness flows from the single root `seed`: unless a subsystem seed is
//! set explicitly, `train.seed` and `synth.seed` are derived from it by
//! fixed labels.

use std::fs;
use std::path::Path;

use paneval::embed::EmbedEndpointConfig;
use paneval::metrics::DecisionMode;
use paneval::rng::child_seed;
use paneval::synth::SynthSpec;
use paneval::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const OVERALL_HEAD: &str = "Overall";

/// Knobs for the `prepare` stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    /// Head whose labels drive class balancing.
    pub balance_head: String,
    /// Target (win-A, win-B, fair) proportions handed to the balancer.
    pub ratios: (f64, f64, f64),
    /// Pairs whose assistant word counts differ by more than this are
    /// dropped when dialogue texts are supplied.
    pub max_word_diff: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            balance_head: OVERALL_HEAD.to_string(),
            ratios: (0.4, 0.4, 0.2),
            max_word_diff: 60,
        }
    }
}

/// Knobs shared by `eval` and `score`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum score gap below which a pair is declared Fair.
    pub tie_threshold: f64,
    /// Scale the threshold applies to.
    pub decision_mode: DecisionMode,
    /// Head used for single-head protocols and item scoring.
    pub head: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tie_threshold: 0.01,
            decision_mode: DecisionMode::default(),
            head: OVERALL_HEAD.to_string(),
        }
    }
}

/// Everything a run can configure, in one place.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every subsystem derives its own stream from it.
    pub seed: u64,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub endpoint: EmbedEndpointConfig,
    pub prepare: PrepareConfig,
    pub eval: EvalConfig,
}

/// A fully merged config plus the digest that names it in run metadata.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    /// SHA-256 over the canonical JSON serialization of `config`.
    pub digest: String,
}

/// Split argv into the part clap should see and the dotted config overrides.
///
/// Any `--a.b.c VALUE` or `--a.b.c=VALUE` token pair is claimed as an
/// override; everything else passes through untouched. Values parse as JSON
/// where possible (numbers, booleans, arrays) and fall back to plain strings,
/// so `--train.epochs 12` and `--eval.head Logicality` both do what they say.
pub fn extract_dotted_flags(
    argv: Vec<String>,
) -> Result<(Vec<String>, Vec<(String, Value)>), CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut overrides = Vec::new();
    let mut it = argv.into_iter();
    while let Some(token) = it.next() {
        let Some(flag) = token.strip_prefix("--") else {
            rest.push(token);
            continue;
        };
        if let Some((name, inline)) = flag.split_once('=') {
            if name.contains('.') {
                overrides.push((name.to_string(), parse_flag_value(inline)));
                continue;
            }
        } else if flag.contains('.') {
            let value = it
                .next()
                .ok_or_else(|| CliError::Config(format!("flag --{flag} is missing its value")))?;
            overrides.push((flag.to_string(), parse_flag_value(&value)));
            continue;
        }
        rest.push(token);
    }
    Ok((rest, overrides))
}

fn parse_flag_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Load, merge, validate, and seed-derive the run configuration.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<ResolvedConfig, CliError> {
    let mut merged = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|err| {
                CliError::Config(format!("cannot read config {}: {err}", path.display()))
            })?;
            let value: Value = serde_json::from_str(&text).map_err(|err| {
                CliError::Config(format!(
                    "config {} is not valid JSON: {err}",
                    path.display()
                ))
            })?;
            if !value.is_object() {
                return Err(CliError::Config(format!(
                    "config {} must be a JSON object",
                    path.display()
                )));
            }
            value
        }
        None => Value::Object(Map::new()),
    };

    for (path, value) in overrides {
        set_path(&mut merged, path, value.clone())?;
    }

    // Whether the subsystem seeds were given explicitly decides whether they
    // get derived from the root seed below.
    let explicit_train_seed = merged.pointer("/train/seed").is_some();
    let explicit_synth_seed = merged.pointer("/synth/seed").is_some();

    let mut config: RunConfig = serde_json::from_value(merged)
        .map_err(|err| CliError::Config(format!("invalid config: {err}")))?;

    if !explicit_train_seed {
        config.train.seed = child_seed(config.seed, "train");
    }
    if !explicit_synth_seed {
        config.synth.seed = child_seed(config.seed, "synth");
    }

    let canonical = serde_json::to_vec(&config)
        .map_err(|err| CliError::Config(format!("cannot serialize config: {err}")))?;
    let digest = hex::encode(Sha256::digest(&canonical));
    Ok(ResolvedConfig { config, digest })
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed config path `{path}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("config path `{path}` descends into a non-object"))
        })?;
        node = map
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node.as_object_mut().ok_or_else(|| {
        CliError::Config(format!("config path `{path}` descends into a non-object"))
    })?;
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
