use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use specsynth_core::ingest::read_corpus;
use specsynth_core::pipeline::AnswerRecord;
use specsynth_core::{ExpertDesk, ExpertRegistry, SegmenterConfig, VectorIndex};

fn specsynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specsynth"))
        .current_dir(dir)
        .env_remove("ISSUES_API_URL")
        .env_remove("LLM_BASE_URL")
        .env_remove("EMBED_BASE_URL")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = specsynth(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SPEC: &str = "# Physical layer\n\n\
## 4.2 Frames\nA radio frame lasts ten milliseconds and holds ten subframes.\n\n\
## 4.3 Slots\nEach slot carries fourteen OFDM symbols with normal cyclic prefix.\n\n\
## 4.4 Resource grid\nThe resource grid spans subcarriers and symbols per antenna port.\n\n\
## 5.1 Random access\nThe preamble is sent on the physical random access channel.\n";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("specs")).unwrap();
    fs::write(dir.path().join("specs/TS 38.211.md"), SPEC).unwrap();
    ok(dir.path(), &["ingest", "--input-dir", "specs", "--out", "corpus.jsonl", "--n-words", "360"]);
    ok(dir.path(), &["index", "--corpus", "corpus.jsonl", "--embedder", "local_hashed", "--out", "specs.ssix"]);
    dir
}

#[test]
fn ingest_then_index() {
    let dir = workspace();
    let chunks = read_corpus(&dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(chunks.len(), 4);
    assert_eq!(chunks[0].source, "TS 38.211 4.2 Frames");
    let index = VectorIndex::load(&dir.path().join("specs.ssix")).unwrap();
    assert_eq!((index.len(), index.dim()), (4, 384));
    assert_eq!(&fs::read(dir.path().join("specs.ssix")).unwrap()[..4], b"SSIX");
}

#[test]
fn query_prints_answer_and_sources() {
    let dir = workspace();
    let text = ok(
        dir.path(),
        &["query", "--index", "specs.ssix", "--corpus", "corpus.jsonl", "how long is a radio frame", "--k", "2"],
    );
    assert!(text.starts_with("A radio frame lasts ten milliseconds"));
    assert!(text.contains("Retrieved sources:"));
    assert_eq!(text.matches("[TS 38.211/").count(), 2);

    let json = ok(
        dir.path(),
        &[
            "query",
            "--index",
            "specs.ssix",
            "--json",
            "--llm-backend",
            "mock_canned",
            "--canned-response",
            "Ten milliseconds.",
            "radio frame",
        ],
    );
    let record: AnswerRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(record.response_text, "Ten milliseconds.");
    assert_eq!(record.citations[0], "TS 38.211 4.2 Frames");
    assert_eq!(record.citations.len(), 3);
}

#[test]
fn eval_writes_report_and_table() {
    let dir = workspace();
    fs::write(
        dir.path().join("bench.jsonl"),
        "{\"item_id\":\"q1\",\"query\":\"radio frame subframes\",\"reference_response\":\"A radio frame lasts ten milliseconds and holds ten subframes.\"}\n\
         {\"item_id\":\"q2\",\"query\":\"slot symbols\",\"reference_response\":\"Each slot carries fourteen OFDM symbols.\"}\n",
    )
    .unwrap();
    let table = ok(
        dir.path(),
        &["eval", "--benchmark", "bench.jsonl", "--index", "specs.ssix", "--report", "out.json", "--k", "1"],
    );
    assert!(table.contains("BLEU") && table.contains("q1") && table.contains("mean"));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    assert_eq!(report["per_item"].as_array().unwrap().len(), 2);
    assert_eq!(report["config_snapshot"]["k"], 1);
    assert_eq!(report["config_snapshot"]["temperature"], 0.0);
    assert_eq!(report["per_item"][0]["context_ids"][0], "TS 38.211/0000/000");
    assert_eq!(report["aggregates"]["failed"], 0);

    let out = ok(
        dir.path(),
        &["ablate", "--axis", "k", "--values", "1,2", "--benchmark", "bench.jsonl", "--corpus", "corpus.jsonl", "--out-dir", "abl"],
    );
    assert!(out.contains("k=1") && out.contains("k=2"));
    for f in ["k_1.json", "k_2.json", "comparison.txt"] {
        assert!(dir.path().join("abl").join(f).is_file(), "{f}");
    }
}

#[test]
fn ablation_rejects_bad_values_before_running() {
    let dir = workspace();
    fs::write(dir.path().join("bench.jsonl"), "{\"item_id\":\"q\",\"query\":\"frame\",\"reference_response\":\"x\"}\n").unwrap();
    let out = specsynth(
        dir.path(),
        &["ablate", "--axis", "k", "--values", "1,zero", "--benchmark", "bench.jsonl", "--corpus", "corpus.jsonl", "--out-dir", "abl"],
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("abl").exists());
    assert!(!specsynth(dir.path(), &["ablate", "--axis", "colour", "--values", "1"]).status.success());
}

#[test]
fn resolve_appends_expert_chunk_and_rewrites_index() {
    let dir = workspace();
    fs::write(dir.path().join("experts.txt"), "alice\n").unwrap();
    fs::write(
        dir.path().join("answer.txt"),
        "The timeAlignmentTimer controls how long the uplink timing advance stays valid.",
    )
    .unwrap();
    let desk = ExpertDesk::new(
        dir.path().join("data/requests"),
        ExpertRegistry::new(["alice"]),
        SegmenterConfig::default(),
    );
    let turn = AnswerRecord {
        query: "which timer keeps timing advance valid".into(),
        response_text: "Not in context.".into(),
        citations: vec!["TS 38.211 4.2 Frames".into()],
        context_ids: vec!["TS 38.211/0000/000".into()],
        scores: vec![0.1],
        prompt_words: 20,
        model_name: "gpt-4".into(),
    };
    let req = desk.create(&turn, Vec::new()).unwrap();

    let args = [
        "resolve",
        "--request",
        req.request_id.as_str(),
        "--expert",
        "alice",
        "--text-file",
        "answer.txt",
        "--index",
        "specs.ssix",
    ];
    ok(dir.path(), &args);
    let chunks = read_corpus(&dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(chunks.len(), 5);
    assert_eq!(chunks[4].source, "Expert: alice");
    assert_eq!(VectorIndex::load(&dir.path().join("specs.ssix")).unwrap().len(), 5);
    assert_eq!(desk.load(&req.request_id).unwrap().resolver_expert_id.as_deref(), Some("alice"));

    let top = ok(dir.path(), &["query", "--index", "specs.ssix", "--json", "which timer keeps the timing advance valid"]);
    let record: AnswerRecord = serde_json::from_str(&top).unwrap();
    assert_eq!(record.citations[0], "Expert: alice");

    // A second resolution of the same request is refused.
    assert!(!specsynth(dir.path(), &args).status.success());
    let mut stranger = args.to_vec();
    stranger[4] = "mallory";
    assert!(!specsynth(dir.path(), &stranger).status.success());
    assert_eq!(read_corpus(&dir.path().join("corpus.jsonl")).unwrap().len(), 5);
}

#[test]
fn serve_rejects_config_with_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("service.toml"), "corpus_path = \"missing.jsonl\"\n").unwrap();
    let out = specsynth(dir.path(), &["serve", "--config", "service.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}
