use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MANIFEST: &str = env!("CARGO_MANIFEST_DIR");

fn nlidiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlidiv"))
        .current_dir(MANIFEST)
        .env_remove("NLIDIV_ENDPOINT")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("spawn nlidiv")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = nlidiv(args);
    assert!(
        out.status.success(),
        "nlidiv {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("stdout is one JSON document")
}

const TABLE: [&str; 2] = ["--mock-table", "tests/data/mock_table.jsonl"];

fn with_table<'a>(rest: &[&'a str]) -> Vec<&'a str> {
    TABLE.iter().copied().chain(rest.iter().copied()).collect()
}

#[test]
fn score_output_matches_golden_file() {
    let stdout = ok(&with_table(&[
        "score",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--metric",
        "baseline_nli",
        "--metric",
        "distinct_n",
    ]));
    let golden = std::fs::read(Path::new(MANIFEST).join("tests/data/golden_score.jsonl")).unwrap();
    assert_eq!(String::from_utf8(stdout).unwrap(), String::from_utf8(golden).unwrap());
}

#[test]
fn score_counts_follow_the_table() {
    // c1's first set holds words 0..5; the table labels a pair by index gap:
    // odd -> C, multiple of 4 -> E, else N. Ordered gaps: 1 x8, 2 x6, 3 x4, 4 x2.
    let stdout = ok(&with_table(&["score", "--dataset", "tests/data/diversity.jsonl"]));
    let text = String::from_utf8(stdout).unwrap();
    let row: Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(row["conversation_id"], "c1");
    assert_eq!(row["counts"]["contradiction"], 12);
    assert_eq!(row["counts"]["neutral"], 6);
    assert_eq!(row["counts"]["entailment"], 2);
    assert_eq!(row["value"], 10.0);
}

#[test]
fn empty_dataset_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let stdout = ok(&["score", "--dataset", empty.to_str().unwrap()]);
    let text = String::from_utf8(stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("{\"header\""));
}

#[test]
fn repeated_runs_are_identical() {
    let args = with_table(&[
        "--seed",
        "3",
        "threshold",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--sampler",
        "mock-pool",
        "--pool",
        "tests/data/pool.jsonl",
        "--max-samples",
        "15",
        "--trials",
        "3",
        "--threshold",
        "6",
    ]);
    let a = ok(&args);
    let b = ok(&args);
    let mut seq = args.clone();
    seq.extend(["--jobs", "1"]);
    let c = ok(&seq);
    assert_eq!(a, b);
    let strip = |v: &[u8]| {
        let mut doc = json(v);
        doc["header"]["config_hash"] = Value::Null;
        doc
    };
    // --jobs only changes scheduling, never results
    assert_eq!(strip(&a), strip(&c));
}

#[test]
fn unreachable_endpoint_is_named_in_the_error() {
    let endpoint = "http://127.0.0.1:9";
    let out = nlidiv(&[
        "--backend",
        "remote",
        "--endpoint",
        endpoint,
        "--jobs",
        "1",
        "score",
        "--dataset",
        "tests/data/diversity.jsonl",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(endpoint), "{stderr}");
    let last: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(last["error"]["kind"], "backend");
}

#[test]
fn remote_backend_without_endpoint_fails() {
    let out = nlidiv(&[
        "--backend",
        "remote",
        "score",
        "--dataset",
        "tests/data/diversity.jsonl",
    ]);
    assert!(!out.status.success());
}

#[test]
fn threshold_summary_matches_trace_means() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let stdout = ok(&with_table(&[
        "--out",
        out_dir,
        "threshold",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--sampler",
        "mock-pool",
        "--pool",
        "tests/data/pool.jsonl",
        "--max-samples",
        "15",
        "--trials",
        "2",
        "--threshold",
        "6",
    ]));
    let doc = json(&stdout);
    assert_eq!(doc["spec"]["predicate"], "count_contradictions_gt");
    assert_eq!(doc["spec"]["threshold"], 6.0);

    let traces = std::fs::read_to_string(dir.path().join("traces.jsonl")).unwrap();
    let rows: Vec<Value> = traces
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 8);
    // every trial has the same conversation count, so the mean of trial
    // means equals the plain mean
    let mean = |key: &str| rows.iter().map(|r| r[key].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
    let s = &doc["summary"];
    for (field, key) in [
        ("mean_starting", "starting_score"),
        ("mean_ending", "ending_score"),
        ("mean_num_sampled", "num_sampled"),
        ("mean_overlap", "overlap"),
    ] {
        assert!((s[field].as_f64().unwrap() - mean(key)).abs() < 1e-12, "{field}");
    }
    let start = mean("starting_score");
    let end = mean("ending_score");
    assert!((s["percent_increase"].as_f64().unwrap() - (end - start) / start.abs() * 100.0).abs() < 1e-9);

    let csv = std::fs::read_to_string(dir.path().join("num_sampled.csv")).unwrap();
    let total: u64 = csv
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 8);
}

#[test]
fn value_predicate_requires_a_threshold() {
    let out = nlidiv(&with_table(&[
        "threshold",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--sampler",
        "mock-pool",
        "--pool",
        "tests/data/pool.jsonl",
        "--predicate",
        "value_ge",
    ]));
    assert!(!out.status.success());
}

#[test]
fn relevancy_of_unchanged_sets_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    // a threshold this low is met by the initial draw, so nothing is swapped
    ok(&with_table(&[
        "--out",
        out_dir,
        "threshold",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--sampler",
        "mock-pool",
        "--pool",
        "tests/data/pool.jsonl",
        "--predicate",
        "value_ge",
        "--threshold",
        "-1000",
    ]));
    let traces = dir.path().join("traces.jsonl");
    let doc = json(&ok(&[
        "relevancy",
        "--traces",
        traces.to_str().unwrap(),
        "--references",
        "tests/data/references.jsonl",
    ]));
    let s = &doc["summary"];
    assert_eq!(doc["kind"], "relevancy_summary");
    assert_eq!(s["starting_bleu"], s["ending_bleu"]);
    assert_eq!(s["starting_bertscore"], s["ending_bertscore"]);
    assert_eq!(s["delta_bleu"], 0.0);
}

#[test]
fn relevancy_rejects_unmatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    ok(&with_table(&[
        "--out",
        out_dir,
        "threshold",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--sampler",
        "mock-pool",
        "--pool",
        "tests/data/pool.jsonl",
        "--max-samples",
        "15",
        "--threshold",
        "6",
    ]));
    let refs = dir.path().join("refs.jsonl");
    let first = std::fs::read_to_string(Path::new(MANIFEST).join("tests/data/references.jsonl")).unwrap();
    std::fs::write(&refs, first.lines().next().unwrap()).unwrap();
    let out = nlidiv(&[
        "relevancy",
        "--traces",
        dir.path().join("traces.jsonl").to_str().unwrap(),
        "--references",
        refs.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(last["error"]["kind"], "unmatched_ids");
    assert!(stderr.contains("c2"));
}

#[test]
fn command_line_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("nlidiv.toml");
    std::fs::write(
        &config,
        "seed = 5\nmock_table = \"tests/data/mock_table.jsonl\"\n\n[score]\ndataset = \"tests/data/diversity.jsonl\"\nmetric = [\"distinct_n\"]\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    let from_file = String::from_utf8(ok(&["--config", cfg, "score"])).unwrap();
    let header: Value = serde_json::from_str(from_file.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["seed"], 5);
    let row: Value = serde_json::from_str(from_file.lines().nth(1).unwrap()).unwrap();
    assert_eq!(row["metric"], "distinct_n");

    let flagged = String::from_utf8(ok(&[
        "--config",
        cfg,
        "--seed",
        "7",
        "score",
        "--metric",
        "baseline_nli",
    ]))
    .unwrap();
    let header: Value = serde_json::from_str(flagged.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["seed"], 7);
    let row: Value = serde_json::from_str(flagged.lines().nth(1).unwrap()).unwrap();
    assert_eq!(row["metric"], "baseline_nli");
    assert_eq!(row["value"], 10.0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[score]\nmetrix = [\"distinct_n\"]\n").unwrap();
    let out = nlidiv(&["--config", config.to_str().unwrap(), "score"]);
    assert!(!out.status.success());
}

#[test]
fn report_collates_documents() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    ok(&with_table(&[
        "--out",
        out_dir,
        "evaluate-metric",
        "--dataset",
        "tests/data/diversity.jsonl",
        "--metric",
        "baseline_nli",
        "--metric",
        "distinct_n",
    ]));
    for name in [
        "evaluation.json",
        "item_scores.csv",
        "histograms.json",
        "histograms.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let md = String::from_utf8(ok(&[
        "--out",
        out_dir,
        "report",
        dir.path().join("evaluation.json").to_str().unwrap(),
    ]))
    .unwrap();
    assert!(md.contains("| baseline_nli | diversity | diversity_parameter |"));
    assert!(md.contains("| distinct_n |"));
    assert_eq!(std::fs::read_to_string(dir.path().join("report.md")).unwrap(), md);
}
