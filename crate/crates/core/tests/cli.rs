use std::path::Path;
use std::process::{Command, Output};

fn tagrec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagrec")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn synth_evaluate_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&tagrec(&["synth", "--seed", "4", "--n-books", "400", "--out", "books.jsonl"], d));
    let stats: serde_json::Value = serde_json::from_str(&ok(&tagrec(&["stats", "--input", "books.jsonl"], d))).unwrap();
    assert_eq!(stats["n_books"], 400);

    let rec: serde_json::Value = serde_json::from_str(&ok(&tagrec(
        &["recommend", "--input", "books.jsonl", "--isbn", "9780000000001", "--algorithm", "mp-author-combined", "--k", "4"],
        d,
    )))
    .unwrap();
    assert_eq!(rec["algorithm"], "mp-author-combined");
    assert!(rec["tags"].as_array().unwrap().len() <= 4);

    let algos = "mp-editor,sim-desc-editor,hyb-best";
    ok(&tagrec(&["evaluate", "--input", "books.jsonl", "--algorithms", algos, "--out-dir", "run1"], d));
    ok(&tagrec(&["evaluate", "--manifest", "run1/manifest.json", "--out-dir", "run2"], d));
    assert_eq!(std::fs::read(d.join("run1/report.json")).unwrap(), std::fs::read(d.join("run2/report.json")).unwrap());

    let csv = ok(&tagrec(&["report", "--input", "run1/report.json", "--format", "csv"], d));
    assert!(csv.starts_with("algorithm,k,ndcg,semantic_similarity,diversity\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 10);
    let md = ok(&tagrec(&["report", "--input", "run1/report.json", "--format", "markdown"], d));
    assert_eq!(md.matches("\n## ").count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad_algo = tagrec(&["evaluate", "--algorithms", "mp-nothing", "--out-dir", "x"], d);
    assert_eq!(bad_algo.status.code(), Some(2));
    assert!(!d.join("x").exists());

    std::fs::write(d.join("bad.toml"), "[embedding]\nsize = 3\n").unwrap();
    let bad_key = tagrec(&["evaluate", "--config", "bad.toml", "--out-dir", "x"], d);
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("size"));

    let missing = tagrec(&["stats", "--input", "nope.jsonl"], d);
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(d.join("broken.jsonl"), "{\"isbn\": \"1\", \"title\": \"a\"}\nnot json\n").unwrap();
    let broken = tagrec(&["stats", "--input", "broken.jsonl"], d);
    assert_eq!(broken.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("line 2"));

    let missing_report = tagrec(&["report", "--input", "none.json"], d);
    assert_eq!(missing_report.status.code(), Some(3));
}
