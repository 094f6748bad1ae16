//! End-to-end acceptance checks for the command-line pipeline: the full
//! simulate -> prepare -> train -> eval -> score round trip on the bundled
//! tiny config, the embed command against a local mock endpoint, exit-code
//! classes, config precedence, rerun determinism, and input immutability.

use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use paneval::datapipe::read_labels;
use paneval::embed::render_dialogue;
use paneval::metrics::{decide_pairwise, DecisionMode, EvalReport, PairDecision};
use paneval::model_file::read_model;
use paneval::store::read_embedding_store;
use sha2::{Digest, Sha256};

fn tiny_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/tiny.json")
        .to_str()
        .unwrap()
        .to_string()
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_paneval"))
        .args(args)
        .output()
        .expect("spawn paneval");
    Run {
        code: output.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

fn run_ok(args: &[&str]) -> Run {
    let result = run(args);
    assert_eq!(
        result.code, 0,
        "paneval {:?} failed:\nstdout: {}\nstderr: {}",
        args, result.stdout, result.stderr
    );
    result
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Materialize the tiny pipeline into `dir`: simulated corpus under `sim/`,
/// balanced labels, and a trained model. Returns (labels, embeddings, model).
fn tiny_pipeline(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let config = tiny_config();
    let sim = dir.join("sim");
    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&sim),
        "--quiet",
        "simulate",
    ]);
    let labels = sim.join("labels.jsonl");
    let embeddings = sim.join("embeddings.bin");
    let prepared = dir.join("prepared.jsonl");
    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&prepared),
        "--quiet",
        "prepare",
        "--labels",
        path_str(&labels),
    ]);
    let model = dir.join("model.bin");
    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&model),
        "--quiet",
        "train",
        "--labels",
        path_str(&prepared),
        "--embeddings",
        path_str(&embeddings),
    ]);
    (prepared, embeddings, model)
}

#[test]
fn a8_end_to_end_cli_round_trip_on_the_tiny_config() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();
    let (prepared, embeddings, model) = tiny_pipeline(dir.path());

    // Rating protocol against the generator's true qualities.
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sim/truth.json")).unwrap())
            .unwrap();
    let gold_ratings = dir.path().join("gold_ratings.json");
    fs::write(
        &gold_ratings,
        serde_json::to_string(&truth["qualities"]).unwrap(),
    )
    .unwrap();
    let rating = run_ok(&[
        "--config",
        &config,
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "rating",
        "--gold",
        path_str(&gold_ratings),
    ]);
    let report: EvalReport = serde_json::from_str(&rating.stdout).expect("schema-valid report");
    let single = report.single_rating.expect("rating section");
    assert!(single.pearson.is_finite() && single.pearson.abs() <= 1.0 + 1e-12);
    assert!(single.spearman.is_finite() && single.spearman.abs() <= 1.0 + 1e-12);
    assert!(report.pairwise.is_none() && report.dimensions.is_none());

    // Pairwise protocol, written to a file this time.
    let report_path = dir.path().join("report.json");
    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&report_path),
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "pairwise",
        "--gold",
        path_str(&prepared),
    ]);
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let pairwise = report.pairwise.expect("pairwise section");
    for acc in [pairwise.with_tie, pairwise.without_tie] {
        assert!((0.0..=100.0).contains(&acc), "accuracy {acc} out of range");
    }
    assert_eq!(pairwise.tie_threshold, 0.01);
    assert!(dir.path().join("report.json.meta.json").exists());

    // Item scores for the whole store.
    let scores = run_ok(&[
        "--config",
        &config,
        "--quiet",
        "score",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
    ]);
    let lines: Vec<&str> = scores.stdout.lines().collect();
    assert_eq!(lines.len(), 40);
    for line in &lines {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        let raw = row["raw"].as_f64().unwrap();
        let normalized = row["normalized"].as_f64().unwrap();
        assert!(row["id"].is_string());
        assert!(raw.is_finite());
        assert!(normalized > 0.0 && normalized < 1.0);
    }

    // Pair decisions agree with the library applied to the same inputs,
    // which ties `score` to the `eval` pairwise protocol.
    let decisions = run_ok(&[
        "--config",
        &config,
        "--quiet",
        "score",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--pairs-from",
        path_str(&prepared),
    ]);
    let records = read_labels(&prepared).unwrap();
    let store = read_embedding_store(&embeddings).unwrap();
    let evaluator = read_model(&model).unwrap();
    let items = store.to_item_store().unwrap();
    for (line, record) in decisions.stdout.lines().zip(&records) {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["pair_id"].as_str().unwrap(), record.pair_id);
        let score = |id: &str| evaluator.heads["Overall"].forward(items.require(id).unwrap());
        let expected = decide_pairwise(
            score(&record.item_a),
            score(&record.item_b),
            0.01,
            DecisionMode::Normalized,
        );
        let got: PairDecision = serde_json::from_value(row["decision"].clone()).unwrap();
        assert_eq!(got, expected, "pair {}", record.pair_id);
    }

    // Gold ratings that are a positive affine map of the model's own scores
    // must correlate perfectly.
    let mut affine = serde_json::Map::new();
    for line in &lines {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = row["id"].as_str().unwrap().to_string();
        affine.insert(
            id,
            serde_json::json!(2.0 * row["raw"].as_f64().unwrap() + 1.0),
        );
    }
    let affine_path = dir.path().join("affine_gold.json");
    fs::write(&affine_path, serde_json::Value::Object(affine).to_string()).unwrap();
    let perfect = run_ok(&[
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "rating",
        "--gold",
        path_str(&affine_path),
    ]);
    let report: EvalReport = serde_json::from_str(&perfect.stdout).unwrap();
    let single = report.single_rating.unwrap();
    assert!(
        (single.pearson - 1.0).abs() < 1e-12,
        "pearson {}",
        single.pearson
    );
    assert!(
        (single.spearman - 1.0).abs() < 1e-12,
        "spearman {}",
        single.spearman
    );

    // Gold pairwise labels built from the model's own decisions must score
    // 100 both ways (decided at threshold zero so no gold labels are Fair).
    let mut gold_lines = String::new();
    for (line, record) in decisions.stdout.lines().zip(&records) {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        let decision = decide_pairwise(
            row["score_a"].as_f64().unwrap(),
            row["score_b"].as_f64().unwrap(),
            0.0,
            DecisionMode::Normalized,
        );
        gold_lines.push_str(
            &serde_json::json!({
                "pair_id": record.pair_id,
                "item_a": record.item_a,
                "item_b": record.item_b,
                "labels": { "selfjudge": { "Overall": decision } },
            })
            .to_string(),
        );
        gold_lines.push('\n');
    }
    let self_gold = dir.path().join("self_gold.jsonl");
    fs::write(&self_gold, gold_lines).unwrap();
    let echo = run_ok(&[
        "--eval.tie_threshold",
        "0",
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "pairwise",
        "--gold",
        path_str(&self_gold),
    ]);
    let report: EvalReport = serde_json::from_str(&echo.stdout).unwrap();
    let pairwise = report.pairwise.unwrap();
    assert_eq!(pairwise.with_tie, 100.0);
    assert_eq!(pairwise.without_tie, 100.0);

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "round trip took {elapsed:.1}s, budget 60s");
    println!("round trip: simulate->prepare->train->eval->score in {elapsed:.1}s");
}

/// Minimal local embedding endpoint: every request succeeds and returns a
/// vector that is a fixed function of the text, so stores are predictable.
fn spawn_endpoint() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&requests);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            let header_end = loop {
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos;
                }
                match stream.read(&mut chunk) {
                    Ok(0) | Err(_) => break usize::MAX,
                    Ok(n) => buf.extend_from_slice(&chunk[..n]),
                }
            };
            if header_end == usize::MAX {
                continue;
            }
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
            let content_length: usize = headers
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse().ok())?
                })
                .unwrap_or(0);
            let mut body = buf[header_end + 4..].to_vec();
            while body.len() < content_length {
                match stream.read(&mut chunk) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => body.extend_from_slice(&chunk[..n]),
                }
            }
            let parsed: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let text = parsed["input"][0].as_str().unwrap();
            let response_body = serde_json::json!({
                "data": [{ "index": 0, "embedding": mock_vector(text) }]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
                response_body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (base_url, requests)
}

fn mock_vector(text: &str) -> Vec<f32> {
    vec![
        text.len() as f32,
        text.bytes().next().unwrap_or(0) as f32,
        0.25,
    ]
}

fn write_dialogues(path: &Path) {
    let mut lines = String::new();
    for (id, reply) in [
        ("d-a", "hello there"),
        ("d-b", "fine thanks"),
        ("d-c", "goodbye now"),
    ] {
        lines.push_str(
            &serde_json::json!({
                "id": id,
                "turns": [
                    { "speaker": "Human", "text": "hi" },
                    { "speaker": "Assistant", "text": reply },
                    { "speaker": "Human", "text": "ok" },
                    { "speaker": "Assistant", "text": "done" },
                ]
            })
            .to_string(),
        );
        lines.push('\n');
    }
    fs::write(path, lines).unwrap();
}

#[test]
fn a8_embed_round_trip_hits_the_endpoint_once_then_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let dialogues = dir.path().join("dialogues.jsonl");
    write_dialogues(&dialogues);
    let (base_url, requests) = spawn_endpoint();
    let cache = dir.path().join("cache");

    let store_path = dir.path().join("first.bin");
    let args = |out: &str| {
        vec![
            "--endpoint.base_url".to_string(),
            base_url.clone(),
            "--endpoint.cache_dir".to_string(),
            path_str(&cache).to_string(),
            "--out".to_string(),
            out.to_string(),
            "embed".to_string(),
            "--dialogues".to_string(),
            path_str(&dialogues).to_string(),
        ]
    };
    let first = run_ok(
        &args(path_str(&store_path))
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    assert!(
        first.stderr.contains("network calls: 3"),
        "expected three fetches, got:\n{}",
        first.stderr
    );

    // The store passes CRC validation on read and holds the exact vectors
    // the endpoint produced.
    let store = read_embedding_store(&store_path).unwrap();
    assert_eq!(store.len(), 3);
    let records: Vec<paneval::datapipe::DialogueRecord> = fs::read_to_string(&dialogues)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for record in &records {
        assert_eq!(
            store.require(&record.id).unwrap(),
            mock_vector(&render_dialogue(record))
        );
    }

    // Second run: identical store, no network at all.
    let rerun_path = dir.path().join("second.bin");
    let second = run_ok(
        &args(path_str(&rerun_path))
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    assert!(
        second.stderr.contains("cache hits: 3 of 3") && second.stderr.contains("network calls: 0"),
        "expected a fully cached rerun, got:\n{}",
        second.stderr
    );
    assert_eq!(
        fs::read(&store_path).unwrap(),
        fs::read(&rerun_path).unwrap()
    );
    assert_eq!(
        requests.load(Ordering::SeqCst),
        3,
        "the endpoint saw extra traffic"
    );
    println!("embed: 3 endpoint calls, then a fully cached rerun with 0");
}

#[test]
fn cli_prepare_accepts_empty_input_and_reports_swap_stage_counts() {
    let dir = tempfile::tempdir().unwrap();

    // Empty in, empty out, exit 0.
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("still_empty.jsonl");
    run_ok(&[
        "--out",
        path_str(&out),
        "prepare",
        "--labels",
        path_str(&empty),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");

    // Three pairs, one of which the swapped rerun contradicts: the stage
    // note must report exactly the construction's consistent count.
    let label = |pair: &str, a: &str, b: &str, vote: &str| {
        serde_json::json!({
            "pair_id": pair,
            "item_a": a,
            "item_b": b,
            "labels": { "j": { "Overall": vote } },
        })
        .to_string()
    };
    let labels = dir.path().join("labels.jsonl");
    fs::write(
        &labels,
        [
            label("p1", "a", "b", "A"),
            label("p2", "c", "d", "B"),
            label("p3", "e", "f", "Fair"),
        ]
        .join("\n"),
    )
    .unwrap();
    let swaps = dir.path().join("swaps.jsonl");
    fs::write(
        &swaps,
        [
            label("p1/swap", "b", "a", "B"),    // mirrored: consistent
            label("p2/swap", "d", "c", "B"),    // same side after the swap: dropped
            label("p3/swap", "f", "e", "Fair"), // Fair mirrors to Fair: consistent
        ]
        .join("\n"),
    )
    .unwrap();
    let kept = dir.path().join("kept.jsonl");
    let result = run_ok(&[
        "--prepare.ratios",
        "[0.0, 0.0, 1.0]",
        "--out",
        path_str(&kept),
        "prepare",
        "--labels",
        path_str(&labels),
        "--swaps",
        path_str(&swaps),
    ]);
    assert!(
        result.stderr.contains("position swap: kept 2 of 3 pairs"),
        "stderr: {}",
        result.stderr
    );
    // With all weight on Fair, balancing keeps exactly the Fair survivor.
    let survivors = read_labels(&kept).unwrap();
    assert_eq!(survivors.len(), 1);
    assert_eq!(survivors[0].pair_id, "p3");
    println!("prepare: empty input passes through; swap bookkeeping is exact");
}

#[test]
fn cli_exit_codes_separate_config_network_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();

    // Unknown config key: exit 2.
    let bad = run(&[
        "--train.epohcs",
        "9",
        "--out",
        path_str(&dir.path().join("x")),
        "simulate",
    ]);
    assert_eq!(bad.code, 2, "stderr: {}", bad.stderr);
    assert!(bad.stderr.contains("epohcs"));

    // Swap stage requested but the file is missing: exit 2, message names it.
    let (prepared, embeddings, model) = tiny_pipeline(dir.path());
    let missing = dir.path().join("no-such-swaps.jsonl");
    let swapless = run(&[
        "--config",
        &config,
        "prepare",
        "--labels",
        path_str(&prepared),
        "--swaps",
        path_str(&missing),
    ]);
    assert_eq!(swapless.code, 2, "stderr: {}", swapless.stderr);
    assert!(
        swapless.stderr.contains("no-such-swaps"),
        "stderr: {}",
        swapless.stderr
    );

    // Unreachable endpoint with an empty cache: exit 3.
    let dialogues = dir.path().join("dialogues.jsonl");
    write_dialogues(&dialogues);
    let unreachable = run(&[
        "--endpoint.base_url",
        "http://127.0.0.1:9",
        "--endpoint.max_retries",
        "0",
        "--endpoint.cache_dir",
        path_str(&dir.path().join("empty-cache")),
        "--out",
        path_str(&dir.path().join("e.bin")),
        "embed",
        "--dialogues",
        path_str(&dialogues),
    ]);
    assert_eq!(unreachable.code, 3, "stderr: {}", unreachable.stderr);

    // Zero-variance rating gold: exit 4.
    let flat = dir.path().join("flat.json");
    fs::write(
        &flat,
        r#"{"item0000": 1.0, "item0001": 1.0, "item0002": 1.0}"#,
    )
    .unwrap();
    let degenerate = run(&[
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "rating",
        "--gold",
        path_str(&flat),
    ]);
    assert_eq!(degenerate.code, 4, "stderr: {}", degenerate.stderr);

    // Protocol/gold mismatch: rating gold handed to the pairwise protocol.
    let mismatched = run(&[
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "pairwise",
        "--gold",
        path_str(&flat),
    ]);
    assert_eq!(mismatched.code, 2, "stderr: {}", mismatched.stderr);

    // Unknown item id: exit 2 naming it.
    let ghost = run(&[
        "score",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--ids",
        "item0000,ghost",
    ]);
    assert_eq!(ghost.code, 2, "stderr: {}", ghost.stderr);
    assert!(ghost.stderr.contains("ghost"), "stderr: {}", ghost.stderr);
    println!("exit codes: 2 config, 3 network, 4 numeric");
}

#[test]
fn cli_flag_overrides_beat_the_config_file_and_land_in_run_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();
    let sim = dir.path().join("sim");
    run_ok(&[
        "--config",
        &config,
        "--train.epochs",
        "9",
        "--out",
        path_str(&sim),
        "--quiet",
        "simulate",
    ]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "simulate");
    assert_eq!(meta["config"]["train"]["epochs"], 9); // flag
    assert_eq!(meta["config"]["train"]["batch_size"], 16); // file
    assert_eq!(meta["config"]["train"]["weight_decay"], 0.1); // built-in
    assert_eq!(meta["config"]["seed"], 7);
    // Subsystem seeds were derived from the root, not left at their defaults.
    assert_ne!(meta["config"]["synth"]["seed"], 0);
    assert_ne!(
        meta["config"]["train"]["seed"],
        meta["config"]["synth"]["seed"]
    );
    assert_eq!(meta["config_digest"].as_str().unwrap().len(), 64);

    let plain = dir.path().join("sim-plain");
    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&plain),
        "--quiet",
        "simulate",
    ]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(plain.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["train"]["epochs"], 6); // file value, no flag
    println!("config precedence: flag > file > default, echoed into meta.json");
}

#[test]
fn cli_simulate_and_train_rerun_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&[
            "--config",
            &config,
            "--out",
            path_str(out),
            "--quiet",
            "simulate",
        ]);
    }
    for name in ["labels.jsonl", "embeddings.bin", "truth.json", "meta.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identically seeded runs"
        );
    }

    let (m1, m2) = (dir.path().join("m1.bin"), dir.path().join("m2.bin"));
    for out in [&m1, &m2] {
        run_ok(&[
            "--config",
            &config,
            "--out",
            path_str(out),
            "--quiet",
            "train",
            "--labels",
            path_str(&a.join("labels.jsonl")),
            "--embeddings",
            path_str(&a.join("embeddings.bin")),
        ]);
    }
    assert_eq!(
        fs::read(&m1).unwrap(),
        fs::read(&m2).unwrap(),
        "model files differ between identically seeded runs"
    );
    println!("determinism: simulate and train reruns are byte-identical");
}

#[test]
fn cli_commands_never_mutate_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();
    let (prepared, embeddings, model) = tiny_pipeline(dir.path());
    let labels = dir.path().join("sim/labels.jsonl");

    let fingerprint = |paths: &[&Path]| -> Vec<String> {
        paths
            .iter()
            .map(|p| hex::encode(Sha256::digest(fs::read(p).unwrap())))
            .collect()
    };
    let inputs = [
        labels.as_path(),
        prepared.as_path(),
        embeddings.as_path(),
        model.as_path(),
    ];
    let before = fingerprint(&inputs);

    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&dir.path().join("again.jsonl")),
        "--quiet",
        "prepare",
        "--labels",
        path_str(&labels),
    ]);
    run_ok(&[
        "--config",
        &config,
        "--out",
        path_str(&dir.path().join("m3.bin")),
        "--quiet",
        "train",
        "--labels",
        path_str(&prepared),
        "--embeddings",
        path_str(&embeddings),
    ]);
    run_ok(&[
        "--config",
        &config,
        "--quiet",
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "pairwise",
        "--gold",
        path_str(&prepared),
    ]);
    run_ok(&[
        "--config",
        &config,
        "--quiet",
        "score",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--pairs-from",
        path_str(&prepared),
    ]);

    assert_eq!(before, fingerprint(&inputs), "an input file changed");
    println!("immutability: no command touched its inputs");
}

#[test]
fn cli_eval_dims_reports_per_dimension_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();
    let (prepared, embeddings, _) = tiny_pipeline(dir.path());

    // Clone every judge's Overall label onto a second head so a two-head
    // model can be trained and evaluated per dimension.
    let mut lines = String::new();
    for line in fs::read_to_string(&prepared).unwrap().lines() {
        let mut row: serde_json::Value = serde_json::from_str(line).unwrap();
        let judges: Vec<String> = row["labels"].as_object().unwrap().keys().cloned().collect();
        for judge in judges {
            let overall = row["labels"][&judge]["Overall"].clone();
            row["labels"][&judge]["Logicality"] = overall;
        }
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    let two_head = dir.path().join("two_head.jsonl");
    fs::write(&two_head, lines).unwrap();

    let model = dir.path().join("two_head_model.bin");
    run_ok(&[
        "--config",
        &config,
        "--train.head_selection",
        r#"["Overall","Logicality"]"#,
        "--out",
        path_str(&model),
        "--quiet",
        "train",
        "--labels",
        path_str(&two_head),
        "--embeddings",
        path_str(&embeddings),
    ]);
    let report = run_ok(&[
        "--config",
        &config,
        "eval",
        "--model",
        path_str(&model),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "dims",
        "--gold",
        path_str(&two_head),
    ]);
    let parsed: EvalReport = serde_json::from_str(&report.stdout).expect("schema-valid report");
    let dims = parsed.dimensions.expect("dimensions section");
    assert!(dims.contains_key("Logicality") && dims.contains_key("Overall"));
    // Only Logicality is a dimension, so the Overall-free average equals it.
    assert_eq!(dims["average"], dims["Logicality"]);

    // A single-head model cannot answer the dims protocol: exit 2.
    let (_, _, single_head) = {
        let d2 = dir.path().join("single");
        fs::create_dir_all(&d2).unwrap();
        tiny_pipeline(&d2)
    };
    let mismatch = run(&[
        "--config",
        &config,
        "eval",
        "--model",
        path_str(&single_head),
        "--embeddings",
        path_str(&embeddings),
        "--protocol",
        "dims",
        "--gold",
        path_str(&two_head),
    ]);
    assert_eq!(mismatch.code, 2, "stderr: {}", mismatch.stderr);
    println!("dims protocol: per-head accuracies with an Overall-free average");
}
