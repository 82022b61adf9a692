use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use qemb_core::corpus::{read_documents, segment};
use qemb_core::fusion::{interpolate, DEFAULT_ALPHA_GRID};
use qemb_core::retrieval::RunRecord;
use serde_json::Value;

fn qemb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qemb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = qemb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().unwrap_or("null")).unwrap_or(Value::Null)
}

fn error_code(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("error envelope is JSON");
    v["error"]["code"].as_str().unwrap().to_string()
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).display().to_string()
}

fn read_json(path: &str) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn read_run(path: &str) -> Vec<RunRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Fixtures, segmentation, axes, embeddings and both indexes, built once.
fn workspace() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap().keep();
        ok(&["fixtures", "--out", &p(&d, "fx")]);
        ok(&[
            "ingest",
            "--corpus",
            &p(&d, "fx/corpus.jsonl"),
            "--out",
            &p(&d, "seg"),
        ]);
        ok(&[
            "build-axes",
            "--segmented",
            &p(&d, "seg/segmented.jsonl"),
            "--out",
            &p(&d, "axes"),
        ]);
        ok(&[
            "embed",
            "--segmented",
            &p(&d, "seg/segmented.jsonl"),
            "--axes",
            &p(&d, "axes/axes.bin"),
            "--out",
            &p(&d, "emb"),
        ]);
        ok(&[
            "index-bm25",
            "--segmented",
            &p(&d, "seg/segmented.jsonl"),
            "--out",
            &p(&d, "bm25"),
        ]);
        ok(&[
            "index-vec",
            "--embeddings",
            &p(&d, "emb/embeddings.bin"),
            "--out",
            &p(&d, "vec"),
        ]);
        d
    })
}

fn search(d: &Path, out: &str, extra: &[&str]) -> Vec<RunRecord> {
    let mut args = vec![
        "search".to_string(),
        "--queries".into(),
        p(d, "fx/queries.jsonl"),
        "--bm25".into(),
        p(d, "bm25/bm25.idx"),
        "--vectors".into(),
        p(d, "vec/vectors.bin"),
        "--axes".into(),
        p(d, "axes/axes.bin"),
        "--out".into(),
        p(d, out),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    read_run(&p(d, &format!("{out}/run.jsonl")))
}

#[test]
fn ingest_counts_match_the_library_and_rerun_is_identical() {
    let d = workspace();
    let docs = read_documents(
        fs::File::open(d.join("fx/corpus.jsonl"))
            .map(std::io::BufReader::new)
            .unwrap(),
    )
    .unwrap();
    let expected: usize = docs
        .iter()
        .map(|doc| segment(doc, &Default::default()).unwrap().len())
        .sum();
    let summary = ok(&[
        "ingest",
        "--corpus",
        &p(d, "fx/corpus.jsonl"),
        "--out",
        &p(d, "seg2"),
    ]);
    assert_eq!(summary["documents"], 10);
    assert_eq!(summary["subchunks"], expected);
    assert_eq!(
        fs::read(d.join("seg/segmented.jsonl")).unwrap(),
        fs::read(d.join("seg2/segmented.jsonl")).unwrap()
    );
}

#[test]
fn every_output_directory_has_one_manifest() {
    let d = workspace();
    for dir in ["fx", "seg", "axes", "emb", "bm25", "vec"] {
        let m = read_json(&p(d, &format!("{dir}/manifest.json")));
        assert!(m["command"].is_string());
        assert!(m["fingerprint"].is_string());
        assert!(m["versions"]["qemb"].is_string());
        for out in m["outputs"].as_array().unwrap() {
            assert!(d.join(dir).join(out.as_str().unwrap()).exists());
        }
    }
    let m = read_json(&p(d, "emb/manifest.json"));
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn embedding_rerun_is_bit_identical() {
    let d = workspace();
    ok(&[
        "embed",
        "--segmented",
        &p(d, "seg/segmented.jsonl"),
        "--axes",
        &p(d, "axes/axes.bin"),
        "--out",
        &p(d, "emb_again"),
    ]);
    assert_eq!(
        fs::read(d.join("emb/embeddings.bin")).unwrap(),
        fs::read(d.join("emb_again/embeddings.bin")).unwrap()
    );
}

#[test]
fn lexical_amp_embedding_reports_fallback_and_channel() {
    let d = workspace();
    let summary = ok(&[
        "embed",
        "--segmented",
        &p(d, "seg/segmented.jsonl"),
        "--lexical",
        "--channel",
        "amp",
        "--out",
        &p(d, "emb_amp"),
    ]);
    assert_eq!(summary["channel"], "amp");
    for line in fs::read_to_string(d.join("emb_amp/units.jsonl"))
        .unwrap()
        .lines()
    {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["angle_sources"]
            .as_array()
            .unwrap()
            .iter()
            .all(|s| s == "lexical_fallback"));
    }
    let store = qemb_core::store::EmbeddingStore::open(&d.join("emb_amp/embeddings.bin")).unwrap();
    assert!(store
        .records
        .iter()
        .all(|r| r.channel == qemb_core::embed::Channel::Amp));
}

#[test]
fn alpha_zero_equals_bm25_and_sweep_covers_the_grid() {
    let d = workspace();
    let run = search(d, "run0", &["--alpha", "0", "--alpha-sweep"]);
    assert_eq!(run.len(), 20);
    for r in &run {
        let bm25 = interpolate(&r.candidate_set(), 0.0).unwrap();
        assert_eq!(r.fused, bm25);
        let restricted: Vec<&str> = r
            .fused
            .iter()
            .map(|x| x.0.as_str())
            .filter(|u| r.bm25.iter().any(|b| b.0 == *u))
            .collect();
        assert_eq!(
            restricted,
            r.bm25.iter().map(|b| b.0.as_str()).collect::<Vec<_>>()
        );
        assert_eq!(r.sweep.len(), DEFAULT_ALPHA_GRID.len());
    }
    let oracle = read_json(&p(d, "run0/oracle.json"));
    assert_eq!(
        oracle["reciprocal_rank"]["fixed"].as_array().unwrap().len(),
        DEFAULT_ALPHA_GRID.len()
    );
}

#[test]
fn reversed_cross_encoder_scores_are_never_applied() {
    let d = workspace();
    let base = search(d, "run_base", &[]);
    let mut tsv = String::new();
    for r in &base {
        for (i, (u, _)) in r.fused.iter().enumerate() {
            tsv.push_str(&format!("{}\t{}\t{}\n", r.qid, u, i));
        }
    }
    fs::write(d.join("ce_reversed.tsv"), tsv).unwrap();
    let run = search(d, "run_ce", &["--ce", &p(d, "ce_reversed.tsv")]);
    for (r, b) in run.iter().zip(&base) {
        let ce = r.ce.as_ref().unwrap();
        assert!(!ce.applied);
        assert_eq!(r.ranking, b.fused);
    }
}

#[test]
fn eval_writes_table_with_matching_mrr_and_map() {
    let d = workspace();
    search(d, "run_eval", &[]);
    let out = qemb(&[
        "eval",
        "--run",
        &p(d, "run_eval/run.jsonl"),
        "--queries",
        &p(d, "fx/queries.jsonl"),
        "--out",
        &p(d, "ev"),
    ]);
    assert!(out.status.success());
    let md = fs::read_to_string(d.join("ev/metrics.md")).unwrap();
    assert!(md.starts_with("| Method | H@1 | H@3 | H@5 | H@10 | nDCG | MRR | MAP |"));
    let reports = read_json(&p(d, "ev/metrics.json"));
    for r in reports.as_array().unwrap() {
        assert_eq!(r["mrr10"], r["map10"]);
    }
    let bm25 = reports
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["method"] == "bm25")
        .unwrap();
    assert_eq!(bm25["mrr10"], 1.0);
}

#[test]
fn pairwise_diagnostics_for_teacher_and_encoder() {
    let d = workspace();
    let t = ok(&[
        "diag-pairwise",
        "--pairs",
        &p(d, "fx/pairs.tsv"),
        "--store",
        &p(d, "fx/teacher_pairs.jsonl"),
        "--out",
        &p(d, "dt"),
    ]);
    assert!((t["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let csv = fs::read_to_string(d.join("dt/histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(csv.lines().next().unwrap(), "bin_left,count");

    ok(&[
        "diag-pairwise",
        "--pairs",
        &p(d, "fx/pairs.tsv"),
        "--lexical",
        "--out",
        &p(d, "dq"),
    ]);
    let report = read_json(&p(d, "dq/report.json"));
    assert!(report["mean_sim"].is_number());
    assert_eq!(report["regimes"].as_array().unwrap().len(), 3);
}

#[test]
fn identity_distillation_reaches_tiny_loss() {
    let d = workspace();
    let s = ok(&[
        "distill",
        "--student",
        &p(d, "fx/identity_student.jsonl"),
        "--teacher",
        &p(d, "fx/identity_teacher.jsonl"),
        "--lambda",
        "0",
        "--out",
        &p(d, "ds"),
    ]);
    assert!(s["final_loss"].as_f64().unwrap() <= 1e-6);
    assert!(d.join("ds/head.bin").exists() && d.join("ds/manifest.json").exists());
}

#[test]
fn kernel_on_five_vectors() {
    let d = workspace();
    ok(&[
        "kernel",
        "--embeddings",
        &p(d, "emb/embeddings.bin"),
        "--limit",
        "5",
        "--n-qubits",
        "4",
        "--out",
        &p(d, "k"),
    ]);
    let csv = fs::read_to_string(d.join("k/kernel.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for (i, row) in rows[1..].iter().enumerate() {
        assert_eq!(row.len(), 6);
        assert!((row[i + 1].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    }
    assert!(d.join("k/diagnostics.json").exists() && d.join("k/manifest.json").exists());
}

#[test]
fn errors_use_the_json_envelope() {
    let d = tempfile::tempdir().unwrap();
    let empty = d.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = qemb(&[
        "ingest",
        "--corpus",
        empty.to_str().unwrap(),
        "--out",
        &p(d.path(), "o"),
    ]);
    assert_eq!(error_code(&out), "empty_corpus");

    let out = qemb(&[
        "search",
        "--alpha",
        "1.5",
        "--queries",
        "q",
        "--bm25",
        "b",
        "--vectors",
        "v",
        "--out",
        "o",
    ]);
    assert_eq!(error_code(&out), "alpha_out_of_range");

    let out = qemb(&[
        "embed",
        "--segmented",
        "missing.jsonl",
        "--out",
        &p(d.path(), "o2"),
    ]);
    assert_eq!(error_code(&out), "io_error");

    let out = qemb(&["no-such-command"]);
    assert_eq!(error_code(&out), "usage");
}
