use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use routeprobe::corpus::{corpus_distribution, parse_conllu, PosTagset, Upos};
use routeprobe::trace::read_trace;

fn sample_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/sample.conllu")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_routeprobe")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_table_sums_to_100_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = sample_corpus();
    ok(&["ingest", "--corpus", s(&corpus), "--out-dir", s(dir.path())]);
    let md = std::fs::read_to_string(dir.path().join("pos_distribution.md")).unwrap();
    let body = md.split("\n---\n").next().unwrap();
    let mut total = 0.0;
    let mut noun = None;
    for line in body.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| POS") && !l.starts_with("| Total")) {
        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
        let pct: f64 = cols[3].trim_end_matches('%').parse().unwrap();
        total += pct;
        if cols[1] == "NOUN" {
            noun = Some(pct);
        }
    }
    assert!((total - 100.0).abs() <= 0.1, "{total}");

    let sentences = parse_conllu(&std::fs::read_to_string(&corpus).unwrap()).unwrap();
    let words: Vec<_> = sentences.iter().flat_map(|s| s.words.iter().cloned()).collect();
    let dist = corpus_distribution(&words, &PosTagset::default()).unwrap();
    let want = 100.0 * dist.probability(Upos::Noun);
    assert!((noun.unwrap() - want).abs() < 0.005 + 1e-9, "{noun:?} vs {want}");
}

#[test]
fn empty_corpus_is_a_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.conllu");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["ingest", "--corpus", s(&empty), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"]["command"], "ingest");
    assert_eq!(err["error"]["kind"], "corpus");
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["metrics", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
    let out = run(&["metrics"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("--trace"));
}

#[test]
fn oracle_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let corpus = sample_corpus();
    let c = s(&corpus);
    ok(&["tokenize", "--corpus", c, "--vocab-size", "120", "--out-dir", d]);
    let trace_args = ["trace", "--corpus", c, "--router", "oracle", "--layers", "4", "--experts", "8", "--top-k", "2", "--out-dir", d];
    ok(&trace_args);
    let trace = dir.path().join("routing.trace.jsonl");
    let first = std::fs::read(&trace).unwrap();
    ok(&trace_args);
    assert_eq!(std::fs::read(&trace).unwrap(), first, "trace bytes differ between runs");

    let (header, records) = read_trace(first.as_slice()).unwrap();
    let tokens = std::fs::read_to_string(dir.path().join("tokens.tsv")).unwrap();
    assert_eq!(records.len(), tokens.lines().count() - 1);
    assert_eq!((header.n_layers, header.n_experts, header.k), (4, 8, 2));

    let stdout = ok(&["metrics", "--trace", s(&trace), "--out-dir", d]);
    assert!(stdout.contains("spec_global=100.00"), "{stdout}");
    let spec = std::fs::read_to_string(dir.path().join("spec_report.md")).unwrap();
    assert!(spec.contains("| POS | max_l Spec | layer | ΔU |"));
    assert!(spec.contains("| NOUN | 100.00 | 0 | +75.00 |"), "{spec}");
    assert!(spec.contains("- seed: `0`"));
    for f in ["spec_matrix.tsv", "kl_report.md", "kl_matrix.tsv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    ok(&["probe", "--trace", s(&trace), "--max-epochs", "20", "--out-dir", d]);
    let confusion = std::fs::read_to_string(dir.path().join("confusion.tsv")).unwrap();
    assert_eq!(confusion.lines().filter(|l| !l.starts_with('#')).count(), 16);
    assert!(dir.path().join("confusion_top_1.tsv").exists());

    ok(&["ablate", "--trace", s(&trace), "--max-epochs", "5", "--out-dir", d]);
    let ablation = std::fs::read_to_string(dir.path().join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = ablation.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "layers_removed\tside\taccuracy");
    assert_eq!(rows.len(), 1 + 2 * 4);

    ok(&["project", "--trace", s(&trace), "--method", "pca", "--out-dir", d]);
    let tsv = std::fs::read_to_string(dir.path().join("scatter.tsv")).unwrap();
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), records.len() + 1);
    let svg = std::fs::read_to_string(dir.path().join("scatter.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn trained_model_traces_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let corpus = sample_corpus();
    let c = s(&corpus);
    ok(&["tokenize", "--corpus", c, "--vocab-size", "100", "--out-dir", d]);
    let train = ["train", "--corpus", c, "--layers", "2", "--experts", "4", "--top-k", "2", "--d-model", "8", "--d-ff", "8", "--steps", "5", "--seed", "4", "--out-dir", d];
    ok(&train);
    let ckpt = dir.path().join("model.ckpt");
    let first = std::fs::read(&ckpt).unwrap();
    ok(&train);
    assert_eq!(std::fs::read(&ckpt).unwrap(), first);

    ok(&["trace", "--corpus", c, "--model", s(&ckpt), "--out-dir", d]);
    let (header, records) = read_trace(std::fs::read(dir.path().join("routing.trace.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!((header.n_layers, header.n_experts, header.k), (2, 4, 2));
    assert_eq!(header.model_name, "toy-moe");
    assert!(!records.is_empty());
}

#[test]
fn config_file_values_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let corpus = sample_corpus();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!("seed = 11\ncorpus = {:?}\n[trace]\nrouter = \"uniform\"\nlayers = 3\nexperts = 4\ntop_k = 1\n", s(&corpus)),
    )
    .unwrap();
    ok(&["tokenize", "--config", s(&cfg), "--out-dir", d]);
    ok(&["trace", "--config", s(&cfg), "--out-dir", d]);
    let trace = dir.path().join("routing.trace.jsonl");
    let (header, _) = read_trace(std::fs::read(&trace).unwrap().as_slice()).unwrap();
    assert_eq!((header.n_layers, header.n_experts, header.k), (3, 4, 1));

    ok(&["metrics", "--config", s(&cfg), "--trace", s(&trace), "--out-dir", d]);
    let spec = std::fs::read_to_string(dir.path().join("spec_report.md")).unwrap();
    assert!(spec.contains("- seed: `11`"));
    ok(&["metrics", "--config", s(&cfg), "--seed", "12", "--trace", s(&trace), "--out-dir", d]);
    let spec = std::fs::read_to_string(dir.path().join("spec_report.md")).unwrap();
    assert!(spec.contains("- seed: `12`"));

    std::fs::write(&cfg, "sead = 1\n").unwrap();
    let out = run(&["metrics", "--config", s(&cfg), "--trace", s(&trace)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

/// Larger generated corpus: four equally frequent tags.
fn balanced_corpus(path: &Path, words: usize) {
    let tags = [("NN", "cat"), ("VBD", "ran"), ("DT", "the"), ("JJ", "red")];
    let mut text = String::new();
    for i in 0..words {
        if i % 10 == 0 {
            text.push('\n');
        }
        let (x, w) = tags[i % 4];
        text.push_str(&format!("{}\t{w}{}\t_\t_\t{x}\t_\t_\t_\t_\t_\n", i % 10 + 1, i % 3));
    }
    std::fs::write(path, text.trim_start()).unwrap();
}

#[test]
fn uniform_router_has_no_specialization() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let corpus = dir.path().join("big.conllu");
    balanced_corpus(&corpus, 20_000);
    ok(&["tokenize", "--corpus", s(&corpus), "--vocab-size", "200", "--out-dir", d]);
    ok(&["trace", "--corpus", s(&corpus), "--router", "uniform", "--layers", "32", "--experts", "8", "--top-k", "2", "--out-dir", d]);
    let trace = dir.path().join("routing.trace.jsonl");
    let stdout = ok(&["metrics", "--trace", s(&trace), "--out-dir", d]);
    let du: f64 = stdout
        .split_whitespace()
        .find_map(|t| t.strip_prefix("dU="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(du.abs() <= 2.0, "{stdout}");
}

#[test]
fn tagset_file_must_match_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let corpus = sample_corpus();
    ok(&["tokenize", "--corpus", s(&corpus), "--out-dir", d]);
    ok(&["trace", "--corpus", s(&corpus), "--layers", "2", "--out-dir", d]);
    let tagset = dir.path().join("tags.txt");
    std::fs::write(&tagset, "NOUN\nVERB\n!X\n").unwrap();
    let out = run(&["metrics", "--trace", s(&dir.path().join("routing.trace.jsonl")), "--tagset", s(&tagset), "--out-dir", d]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "corpus");
}
