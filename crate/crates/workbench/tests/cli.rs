mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use cdcr_core::evaluation::read_cluster_file;
use serde_json::{json, Value};

fn cdcr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdcr"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("CDCR_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cdcr(dir, args);
    assert!(
        out.status.success(),
        "cdcr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn ingested(iaa: f64) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_workspace(dir.path(), iaa).display().to_string();
    let out = ok(
        dir.path(),
        &["--config", &cfg, "ingest", "--pairs", "pairs.jsonl", "--mentions", "mentions.jsonl", "--stub-dim", "32", "--stub-seed", "3"],
    );
    assert!(out.contains("pairs: 2 new"), "{out}");
    assert!(out.contains("embeddings: 2 tables loaded"), "{out}");
    (dir, cfg)
}

#[test]
fn ingest_is_idempotent_and_reports_errors() {
    let (dir, cfg) = ingested(0.05);
    let again = ok(dir.path(), &["--config", &cfg, "ingest", "--pairs", "pairs.jsonl", "--mentions", "mentions.jsonl"]);
    assert!(again.contains("pairs: 0 new, 2 unchanged"), "{again}");
    assert!(again.contains("mentions: 0 added"), "{again}");

    std::fs::write(dir.path().join("bad.jsonl"), "{\"pair_id\": 1}\nnot json\n").unwrap();
    let out = ok(dir.path(), &["--config", &cfg, "ingest", "--pairs", "bad.jsonl"]);
    assert!(out.contains("2 rejected"), "{out}");
    let strict = cdcr(dir.path(), &["--config", &cfg, "ingest", "--pairs", "bad.jsonl", "--strict"]);
    assert!(!strict.status.success());
}

#[test]
fn gen_pairs_emits_ranked_queue() {
    let (dir, cfg) = ingested(0.05);
    let out = ok(dir.path(), &["--config", &cfg, "gen-pairs"]);
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8 * 10 + 10 * 10);
    for l in &lines {
        assert!(l["pair_key"].as_str().unwrap().contains('|'));
        assert!(l["news_surface"].is_string() && l["sci_surface"].is_string());
        assert!(l["similarity"].as_f64().unwrap().abs() <= 1.0 + 1e-9);
    }
    // Descending similarity.
    let sims: Vec<f64> = lines.iter().map(|l| l["similarity"].as_f64().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));

    // A rerun adds nothing; the sequential path yields the same queue.
    let again = ok(dir.path(), &["--config", &cfg, "gen-pairs", "--sequential"]);
    assert_eq!(again, out);
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "store_dir = \"s\"\n[queue]\niaa_fraction = 0.05\n").unwrap();
    let out = cdcr(dir.path(), &["--config", "c.toml", "gen-pairs"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampling_seed"));

    // An empty store needs a seed from somewhere.
    let out = cdcr(dir.path(), &["--store", "s", "gen-pairs"]);
    assert!(!out.status.success());
    // The flag alone is enough.
    ok(dir.path(), &["--store", "s", "--seed", "9", "gen-pairs"]);
}

fn write_lines(path: &Path, lines: &[Value]) {
    let mut f = std::fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

#[test]
fn score_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let rec = |doc: &str, c: u32| json!({"doc_id": doc, "start_char": 0, "end_char": 1, "cluster_id": c});
    write_lines(
        &dir.path().join("gold.jsonl"),
        &[rec("A", 1), rec("B", 1), rec("C", 1), rec("D", 2), rec("E", 2)],
    );
    write_lines(
        &dir.path().join("sys.jsonl"),
        &[rec("A", 1), rec("B", 1), rec("C", 2), rec("D", 2), rec("E", 2)],
    );
    let out = ok(dir.path(), &["score", "--gold", "gold.jsonl", "--system", "sys.jsonl", "--json"]);
    let reports: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["metric"], "muc");
    assert!((reports[0]["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(reports[1]["metric"], "b3");
    assert!((reports[1]["precision"].as_f64().unwrap() - 11.0 / 15.0).abs() < 1e-12);

    let table = ok(dir.path(), &["score", "--gold", "gold.jsonl", "--system", "sys.jsonl", "--metric", "muc"]);
    assert!(table.contains("muc\t0.6667\t0.6667\t0.6667"), "{table}");

    // Overlapping clusters in a file are rejected.
    write_lines(&dir.path().join("bad.jsonl"), &[rec("A", 1), rec("A", 2)]);
    let out = cdcr(dir.path(), &["score", "--gold", "bad.jsonl", "--system", "sys.jsonl"]);
    assert!(!out.status.success());
}

#[test]
fn capability_test_reports_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut clusters = Vec::new();
    let mut cases = Vec::new();
    for i in 0..34 {
        let (a, b) = (format!("n{i}@0-1"), format!("s{i}@0-1"));
        let linked = i < 16;
        clusters.push(json!({"doc_id": format!("n{i}"), "start_char": 0, "end_char": 1, "cluster_id": format!("k{i}")}));
        let other = if linked { format!("k{i}") } else { format!("j{i}") };
        clusters.push(json!({"doc_id": format!("s{i}"), "start_char": 0, "end_char": 1, "cluster_id": other}));
        cases.push(json!({"category": "paraphrase", "expected": "coreferent", "mention_id_a": a, "mention_id_b": b}));
    }
    cases.push(json!({"category": "subset_relationship", "expected": "not_coreferent", "mention_id_a": "n0@0-1", "mention_id_b": "s20@0-1"}));
    write_lines(&dir.path().join("sys.jsonl"), &clusters);
    write_lines(&dir.path().join("cases.jsonl"), &cases);
    let out = ok(dir.path(), &["capability-test", "--cases", "cases.jsonl", "--system", "sys.jsonl"]);
    assert!(out.contains("paraphrase\tcoreferent\t47.1% (16/34)"), "{out}");
    assert!(out.contains("subset_relationship\tnot_coreferent\t100.0% (1/1)"), "{out}");
    assert!(out.contains("total cases: 35"), "{out}");
}

#[test]
fn sweep_and_histogram_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<Value> = [(0.9, true), (0.7, true), (0.55, false), (0.2, false), (-0.4, false)]
        .iter()
        .map(|(s, c)| json!({"similarity": s, "coreferent": c}))
        .collect();
    write_lines(&dir.path().join("dev.jsonl"), &pairs);
    let out = ok(dir.path(), &["sweep-threshold", "--input", "dev.jsonl", "--json"]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["curve"].as_array().unwrap().len(), 51);
    assert_eq!(v["best_t"], 0.56);
    assert_eq!(v["best_accuracy"], 1.0);
    let seq = ok(dir.path(), &["sweep-threshold", "--input", "dev.jsonl", "--json", "--sequential"]);
    assert_eq!(seq, out);

    let csv = ok(dir.path(), &["histogram", "--input", "dev.jsonl", "--bin-width", "0.5"]);
    assert_eq!(
        csv,
        "bin_start,count_yes,count_no\n-1.00,0,0\n-0.50,0,1\n0.00,0,1\n0.50,2,1\n"
    );
}

#[test]
fn cluster_scores_writes_cluster_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = |a: &str, b: &str, x: f64| json!({"mention_id_a": a, "mention_id_b": b, "score": x});
    write_lines(
        &dir.path().join("scores.jsonl"),
        &[s("d1@0-1", "d2@0-1", 0.9), s("d2@0-1", "d3@0-1", 0.8), s("d1@0-1", "d3@0-1", 0.1), s("d4@0-1", "d1@0-1", 0.2)],
    );
    ok(dir.path(), &["cluster-scores", "--scores", "scores.jsonl", "--tau", "0.5", "--linkage", "single", "--out", "c.jsonl"]);
    let recs = read_cluster_file(BufReader::new(std::fs::File::open(dir.path().join("c.jsonl")).unwrap())).unwrap();
    let clusters = cdcr_core::evaluation::clusters_from_records(&recs).unwrap();
    assert_eq!(clusters.len(), 2);
    // Average linkage of {d1,d2} to d3 is (0.1 + 0.8) / 2 = 0.45 < 0.5.
    let out = ok(dir.path(), &["cluster-scores", "--scores", "scores.jsonl", "--tau", "0.5"]);
    let recs = read_cluster_file(out.as_bytes()).unwrap();
    assert_eq!(cdcr_core::evaluation::clusters_from_records(&recs).unwrap().len(), 3);
}

#[test]
fn export_kappa_and_bcos_on_store() {
    let (dir, cfg) = ingested(0.05);
    ok(dir.path(), &["--config", &cfg, "gen-pairs", "--out", "queue.jsonl"]);
    let export = ok(dir.path(), &["--config", &cfg, "export", "--split", "dev"]);
    assert_eq!(export, "");
    let kappa = ok(dir.path(), &["--config", &cfg, "kappa", "--json", "k.json"]);
    assert!(kappa.contains("fleiss"), "{kappa}");
    let k: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("k.json")).unwrap()).unwrap();
    assert_eq!(k["fleiss"]["items"], 0);

    ok(dir.path(), &["--config", &cfg, "bcos", "--split", "test", "--t", "0.99", "--out", "bcos.jsonl"]);
    let recs = read_cluster_file(BufReader::new(std::fs::File::open(dir.path().join("bcos.jsonl")).unwrap())).unwrap();
    // Every test-split mention appears once.
    assert_eq!(recs.len(), 20);

    // Scoring an export against itself.
    ok(dir.path(), &["score", "--gold", "bcos.jsonl", "--system", "bcos.jsonl", "--keep-singletons"]);
}

#[test]
fn serve_answers_http() {
    let (dir, cfg) = ingested(0.0);
    ok(dir.path(), &["--config", &cfg, "gen-pairs", "--out", "queue.jsonl"]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_cdcr"))
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .args(["--config", &cfg, "serve"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("listening on ").nth(1) {
            break rest.trim().to_string();
        }
    };
    let get = |path: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut buf = String::new();
        s.read_to_string(&mut buf).unwrap();
        buf
    };
    let task = get("/api/task?annotator=ann1");
    assert!(task.starts_with("HTTP/1.1 200"), "{task}");
    assert!(task.contains("\"pair_key\""));
    let stats = get("/api/stats/corpus");
    assert!(stats.contains("\"document_pairs\":2"), "{stats}");

    // The store is locked while serving.
    let busy = cdcr(dir.path(), &["--config", &cfg, "gen-pairs"]);
    assert!(!busy.status.success());
    assert!(String::from_utf8_lossy(&busy.stderr).contains("locked"));
    // Read-only commands still work.
    ok(dir.path(), &["--config", &cfg, "export"]);
    child.kill().unwrap();
    child.wait().unwrap();

    // The claim made over HTTP survived in the log.
    let events = cdcr_core::store::read_events(&dir.path().join("store")).unwrap();
    assert!(events.iter().any(|(_, e)| e.kind() == "claimed"));
}
