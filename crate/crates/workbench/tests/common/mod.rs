#![allow(dead_code)]

use std::io::Cursor;
use std::path::Path;

use cdcr_core::engine::{Engine, EventSink, QueueConfig};
use cdcr_core::exec::Execution;
use cdcr_core::ingestion::{read_document_pairs, read_mentions, stub_embed, whitespace_tokens, MatchConfig};
use chrono::{DateTime, TimeZone, Utc};
use serde_json::json;

pub const STUB_DIM: usize = 32;
pub const STUB_SEED: u64 = 3;

pub const DOCS: [(&str, &str, &str, &str); 2] = [
    (
        "p1",
        "dev",
        "Honey bees avoid pesticide treated flowers say researchers",
        "We show that pollinators such as bees detect neonicotinoid residues",
    ),
    (
        "p2",
        "test",
        "A new telescope spotted water vapour on a distant planet",
        "Spectra from the instrument reveal water in the exoplanet atmosphere",
    ),
];

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 3, 1, 9, 0, 0).unwrap()
}

pub fn pairs_jsonl() -> String {
    DOCS.iter()
        .map(|(id, split, news, sci)| {
            json!({
                "pair_id": id,
                "split": split,
                "created_at": "2021-02-01T00:00:00Z",
                "news": {"doc_id": format!("{id}-news"), "title": format!("{id} news"), "summary_text": news,
                         "authors": ["Jane Doe"], "doi": format!("10.1000/{id}"), "url": format!("https://example.org/{id}")},
                "science": {"doc_id": format!("{id}-sci"), "title": format!("{id} abstract"), "summary_text": sci,
                            "authors": ["Jane Doe", "Li Wei"], "doi": format!("10.1000/{id}")},
            })
            .to_string()
                + "\n"
        })
        .collect()
}

/// Every whitespace token becomes a mention.
pub fn mentions_jsonl() -> String {
    let mut out = String::new();
    for (id, _, news, sci) in DOCS {
        for (doc, text) in [(format!("{id}-news"), news), (format!("{id}-sci"), sci)] {
            for (span, _) in whitespace_tokens(text) {
                out += &json!({"doc_id": doc, "start_char": span.start, "end_char": span.end}).to_string();
                out.push('\n');
            }
        }
    }
    out
}

pub fn queue_config(iaa_fraction: f64) -> QueueConfig {
    let mut cfg = QueueConfig::with_seed(2021);
    cfg.iaa_fraction = iaa_fraction;
    cfg
}

/// Loads the fixture corpus, generates candidates and registers `annotators`.
pub fn populate<L: EventSink>(e: &mut Engine<L>, annotators: &[&str]) {
    let parsed = read_document_pairs(Cursor::new(pairs_jsonl()), t0());
    let pairs: Vec<_> = parsed.pairs.iter().map(|(_, p)| p.clone()).collect();
    let r = e.ingest_document_pairs(parsed, &MatchConfig::default()).unwrap();
    assert!(r.errors.is_empty(), "{:?}", r.errors);
    let m = e.load_mentions(read_mentions(Cursor::new(mentions_jsonl()))).unwrap();
    assert!(m.errors.is_empty(), "{:?}", m.errors);
    for p in &pairs {
        e.load_embeddings(stub_embed(p, STUB_DIM, STUB_SEED)).unwrap();
    }
    e.generate_pairs(Execution::default()).unwrap();
    for a in annotators {
        e.register_annotator(&(*a).into()).unwrap();
    }
}

pub fn engine(iaa_fraction: f64, annotators: &[&str]) -> Engine {
    let mut e = Engine::in_memory(queue_config(iaa_fraction)).unwrap();
    populate(&mut e, annotators);
    e
}

/// Writes the fixture inputs and a config into `dir`; returns the config path.
pub fn write_workspace(dir: &Path, iaa_fraction: f64) -> std::path::PathBuf {
    std::fs::write(dir.join("pairs.jsonl"), pairs_jsonl()).unwrap();
    std::fs::write(dir.join("mentions.jsonl"), mentions_jsonl()).unwrap();
    let cfg = dir.join("workbench.toml");
    std::fs::write(
        &cfg,
        format!(
            "store_dir = \"store\"\n\n[queue]\nsampling_seed = 2021\niaa_fraction = {iaa_fraction}\n\n[service]\naddr = \"127.0.0.1:0\"\nannotators = [\"ann1\", \"ann2\"]\n"
        ),
    )
    .unwrap();
    cfg
}
