//! HTTP client for an external embeddings endpoint, with an on-disk cache.
//!
//! Dialogues are rendered to a canonical transcript string, POSTed one per
//! request to `{base_url}/v1/embeddings` in the common
//! `{"model": …, "input": […]}` wire shape, and the returned vectors are
//! collected into an [`EmbeddingStore`] keyed by dialogue id. Every fetched
//! vector is cached on disk under the SHA-256 of (model name, rendered
//! text), so reruns are free and never touch the network. Transient failures
//! (HTTP 429, 5xx, transport errors) are retried with exponential backoff;
//! other 4xx statuses fail immediately.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datapipe::{DataError, DialogueRecord, Speaker};
use crate::store::{EmbeddingStore, StoreError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid endpoint config: {0}")]
    BadConfig(String),
    #[error("api key environment variable `{var}` is not set")]
    MissingApiKey { var: String },
    #[error("duplicate dialogue id `{0}`")]
    DuplicateRecord(String),
    #[error("no dialogues to embed")]
    NoRecords,
    #[error("embedding `{id}` failed with HTTP {status}")]
    Http { id: String, status: u16 },
    #[error("embedding `{id}` failed after {} attempts: {}", .attempts.len(), .attempts.join("; "))]
    ExhaustedRetries { id: String, attempts: Vec<String> },
    #[error("bad response for `{id}`: {message}")]
    BadResponse { id: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_model_name() -> String {
    "local-embed".to_string()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("embed-cache")
}

/// Where and how to reach the embeddings service.
///
/// `api_key_env` names an environment variable; when set, its value is sent
/// as a bearer token. The key itself never appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub cache_dir: PathBuf,
}

impl Default for EmbedEndpointConfig {
    fn default() -> Self {
        EmbedEndpointConfig {
            base_url: String::new(),
            model_name: default_model_name(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            cache_dir: default_cache_dir(),
        }
    }
}

impl EmbedEndpointConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.base_url.is_empty() {
            return Err(EmbedError::BadConfig("base_url must be set".into()));
        }
        if self.model_name.is_empty() {
            return Err(EmbedError::BadConfig("model_name must be set".into()));
        }
        if self.timeout_ms == 0 {
            return Err(EmbedError::BadConfig("timeout_ms must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(EmbedError::BadConfig(
                "max_in_flight must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Canonical transcript rendering: `Human: …` / `Assistant: …` lines joined
/// by single newlines. This exact string is both the embedding input and the
/// cache-key source, so it must never change shape.
pub fn render_dialogue(record: &DialogueRecord) -> String {
    record
        .turns
        .iter()
        .map(|turn| match turn.speaker {
            Speaker::Human => format!("Human: {}", turn.text),
            Speaker::Assistant => format!("Assistant: {}", turn.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache key: SHA-256 over the model name (length-prefixed, so the
/// model/text boundary is unambiguous) and the rendered text.
pub fn cache_key(model_name: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((model_name.len() as u64).to_le_bytes());
    hasher.update(model_name.as_bytes());
    hasher.update(text.as_bytes());
    hex_digest(&hasher.finalize())
}

// Cache entry layout (little-endian):
//   u16 model-name length, model-name bytes, u32 dim, dim * f32, CRC32.
// Anything that fails to parse, fails the checksum, or names a different
// model is treated as a miss and refetched.

fn encode_cache_entry(model_name: &str, vector: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + model_name.len() + 4 + vector.len() * 4 + 4);
    out.extend_from_slice(&(model_name.len() as u16).to_le_bytes());
    out.extend_from_slice(model_name.as_bytes());
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn decode_cache_entry(bytes: &[u8], model_name: &str) -> Option<Vec<f32>> {
    if bytes.len() < 4 {
        return None;
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().ok()?);
    if crc32fast::hash(payload) != stored {
        return None;
    }
    let name_len = u16::from_le_bytes(payload.get(..2)?.try_into().ok()?) as usize;
    let name = payload.get(2..2 + name_len)?;
    if name != model_name.as_bytes() {
        return None;
    }
    let rest = payload.get(2 + name_len..)?;
    let dim = u32::from_le_bytes(rest.get(..4)?.try_into().ok()?) as usize;
    let values = rest.get(4..)?;
    if values.len() != dim * 4 || dim == 0 {
        return None;
    }
    Some(
        values
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    )
}

fn read_cached(dir: &Path, key: &str, model_name: &str) -> Option<Vec<f32>> {
    let bytes = std::fs::read(dir.join(key)).ok()?;
    decode_cache_entry(&bytes, model_name)
}

/// Atomic publish: write a temp file in the same directory, then rename over
/// the final path, so readers never observe a partial entry.
fn write_cached(dir: &Path, key: &str, model_name: &str, vector: &[f32]) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{key}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, encode_cache_entry(model_name, vector))?;
    std::fs::rename(&tmp, dir.join(key))
}

/// What a fetch did: the resulting store plus effort accounting. `requests`
/// counts every HTTP attempt, retries included.
#[derive(Debug)]
pub struct FetchOutcome {
    pub store: EmbeddingStore,
    pub cache_hits: usize,
    pub requests: usize,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    input: [&'a str; 1],
}

#[derive(Deserialize)]
struct WireResponse {
    data: Vec<WireRow>,
}

#[derive(Deserialize)]
struct WireRow {
    index: usize,
    embedding: Vec<f32>,
}

struct Job {
    row: usize,
    id: String,
    text: String,
    key: String,
}

struct Done {
    row: usize,
    key: String,
    vector: Vec<f32>,
}

fn backoff_delay(attempt: u32) -> Duration {
    let base = 250u64.saturating_mul(1u64 << attempt.min(16));
    // Up to 25% jitter so synchronized clients do not stampede in lockstep.
    let jitter = 1.0 + rand::rng().random::<f64>() * 0.25;
    Duration::from_millis((base as f64 * jitter) as u64)
}

fn parse_vector(id: &str, response: WireResponse) -> Result<Vec<f32>, EmbedError> {
    let bad = |message: &str| EmbedError::BadResponse {
        id: id.to_string(),
        message: message.into(),
    };
    if response.data.len() != 1 {
        return Err(bad(&format!(
            "expected 1 data row, got {}",
            response.data.len()
        )));
    }
    let row = response.data.into_iter().next().unwrap();
    if row.index != 0 {
        return Err(bad(&format!("unexpected data index {}", row.index)));
    }
    if row.embedding.is_empty() {
        return Err(bad("empty embedding vector"));
    }
    Ok(row.embedding)
}

fn fetch_one(
    agent: &ureq::Agent,
    url: &str,
    auth: Option<&str>,
    model_name: &str,
    job: &Job,
    max_retries: u32,
    request_counter: &AtomicUsize,
) -> Result<Vec<f32>, EmbedError> {
    let body = WireRequest {
        model: model_name,
        input: [job.text.as_str()],
    };
    let mut attempts: Vec<String> = Vec::new();
    for attempt in 0..=max_retries {
        request_counter.fetch_add(1, Ordering::SeqCst);
        let mut request = agent.post(url);
        if let Some(token) = auth {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(&body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                if (200..300).contains(&status) {
                    let wire: WireResponse =
                        response
                            .body_mut()
                            .read_json()
                            .map_err(|e| EmbedError::BadResponse {
                                id: job.id.clone(),
                                message: e.to_string(),
                            })?;
                    return parse_vector(&job.id, wire);
                }
                if status == 429 || (500..600).contains(&status) {
                    attempts.push(format!("attempt {}: HTTP {status}", attempt + 1));
                } else {
                    // Other 4xx are permanent: retrying a rejected request
                    // only burns quota.
                    return Err(EmbedError::Http {
                        id: job.id.clone(),
                        status,
                    });
                }
            }
            Err(e) => attempts.push(format!("attempt {}: {e}", attempt + 1)),
        }
        if attempt < max_retries {
            std::thread::sleep(backoff_delay(attempt));
        }
    }
    Err(EmbedError::ExhaustedRetries {
        id: job.id.clone(),
        attempts,
    })
}

/// Embed every dialogue, reusing disk-cached vectors where possible, and
/// return them as a store keyed by dialogue id (insertion follows input
/// order). At most `max_in_flight` requests are outstanding at once; cache
/// writes go through this (single) thread.
pub fn fetch_embeddings(
    config: &EmbedEndpointConfig,
    records: &[DialogueRecord],
) -> Result<FetchOutcome, EmbedError> {
    config.validate()?;
    if records.is_empty() {
        return Err(EmbedError::NoRecords);
    }
    let mut ids = BTreeSet::new();
    for record in records {
        record.validate()?;
        if !ids.insert(record.id.as_str()) {
            return Err(EmbedError::DuplicateRecord(record.id.clone()));
        }
    }
    let auth: Option<String> = match &config.api_key_env {
        Some(var) => {
            Some(std::env::var(var).map_err(|_| EmbedError::MissingApiKey { var: var.clone() })?)
        }
        None => None,
    };
    std::fs::create_dir_all(&config.cache_dir)?;

    let mut vectors: Vec<Option<Vec<f32>>> = vec![None; records.len()];
    let mut jobs: Vec<Job> = Vec::new();
    let mut cache_hits = 0usize;
    for (row, record) in records.iter().enumerate() {
        let text = render_dialogue(record);
        let key = cache_key(&config.model_name, &text);
        match read_cached(&config.cache_dir, &key, &config.model_name) {
            Some(vector) => {
                cache_hits += 1;
                vectors[row] = Some(vector);
            }
            None => jobs.push(Job {
                row,
                id: record.id.clone(),
                text,
                key,
            }),
        }
    }

    let request_counter = Arc::new(AtomicUsize::new(0));
    let mut first_error: Option<EmbedError> = None;
    if !jobs.is_empty() {
        let url = format!("{}/v1/embeddings", config.base_url.trim_end_matches('/'));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .new_agent();

        let jobs = Arc::new(jobs);
        let next = Arc::new(AtomicUsize::new(0));
        let abort = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Result<Done, EmbedError>>();
        let workers = config.max_in_flight.min(jobs.len());
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let jobs = Arc::clone(&jobs);
            let next = Arc::clone(&next);
            let abort = Arc::clone(&abort);
            let counter = Arc::clone(&request_counter);
            let tx = tx.clone();
            let agent = agent.clone();
            let url = url.clone();
            let auth = auth.clone();
            let model_name = config.model_name.clone();
            let max_retries = config.max_retries;
            handles.push(std::thread::spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || abort.load(Ordering::SeqCst) {
                    break;
                }
                let job = &jobs[i];
                let outcome = fetch_one(
                    &agent,
                    &url,
                    auth.as_deref(),
                    &model_name,
                    job,
                    max_retries,
                    &counter,
                )
                .map(|vector| Done {
                    row: job.row,
                    key: job.key.clone(),
                    vector,
                });
                if outcome.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send(outcome).is_err() {
                    break;
                }
            }));
        }
        drop(tx);

        for message in rx {
            match message {
                Ok(done) => {
                    write_cached(
                        &config.cache_dir,
                        &done.key,
                        &config.model_name,
                        &done.vector,
                    )?;
                    vectors[done.row] = Some(done.vector);
                }
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
        for handle in handles {
            let _ = handle.join();
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let dim = vectors[0]
        .as_ref()
        .expect("every row is filled on success")
        .len();
    let mut store = EmbeddingStore::new(dim)?;
    for (record, vector) in records.iter().zip(&vectors) {
        store.insert(
            &record.id,
            vector.as_ref().expect("every row is filled on success"),
        )?;
    }
    Ok(FetchOutcome {
        store,
        cache_hits,
        requests: request_counter.load(Ordering::SeqCst),
    })
}
