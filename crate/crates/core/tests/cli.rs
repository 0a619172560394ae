use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ndm::io::{write_activations, write_partition, ActivationSet, PartitionFile, TokenMeta};
use ndm::linalg::Matrix;
use ndm::Partition;
use serde_json::Value;

fn ndm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndm")).args(args).env("NDM_THREADS", "1").output().expect("spawn ndm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&ndm(&[])), 2);
    assert_eq!(code(&ndm(&["no-such-command"])), 2);
    assert_eq!(code(&ndm(&["toy-train", "--out", s(&out)])), 2);

    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&ndm(&["toy-train", "--config", s(&empty), "--out", s(&out)])), 2);

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "preset = \"toy-2x20\"\nlearning_rate = 0.1\n").unwrap();
    let o = ndm(&["toy-train", "--config", s(&unknown), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    assert_eq!(code(&ndm(&["toy-train", "--preset", "toy-9x9", "--out", s(&out)])), 2);

    let missing = dir.path().join("missing.ndma");
    let o = ndm(&["ndm-train", "--preset", "toy", "--activations", s(&missing), "--out", s(&out)]);
    assert_ne!(code(&o), 0);
    assert!(!out.join("config.toml").exists());

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_ndm"))
        .args(["toy-train", "--preset", "toy-2x20", "--out", s(&out)])
        .env("NDM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&bad_threads), 2);
}

#[test]
fn toy_train_is_reproducible_and_guards_its_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| {
        vec!["toy-train", "--preset", "toy-2x20", "--steps", "300", "--dump-rows", "1024", "--seed", "4", "--out"]
            .into_iter()
            .map(String::from)
            .chain([s(out).to_string()])
            .collect::<Vec<_>>()
    };
    let run = |out: &Path, extra: &[&str]| {
        let mut v = args(out);
        v.extend(extra.iter().map(|x| x.to_string()));
        ndm(&v.iter().map(String::as_str).collect::<Vec<_>>())
    };
    assert_eq!(code(&run(&a, &[])), 0);
    assert_eq!(code(&run(&b, &[])), 0);
    for f in ["summary.json", "gram.csv", "model.ndmt", "activations.ndma", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let cfg = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(cfg.contains("steps = 300"), "{cfg}");

    assert_eq!(code(&run(&a, &[])), 2);
    assert_eq!(code(&run(&a, &["--force"])), 0);

    let layered = dir.path().join("layered.toml");
    fs::write(&layered, "preset = \"toy-2x20\"\ndump_rows = 512\n[train]\nsteps = 100\nseed = 4\n").unwrap();
    let c = dir.path().join("c");
    let o = ndm(&["toy-train", "--config", s(&layered), "--steps", "300", "--dump-rows", "1024", "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(c.join("summary.json")).unwrap());
}

#[test]
fn eval_gini_reports_table_values() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("effects.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"test":"t4","effects":[3.9,3.7,2.3,2.5,1.6,1.7,1.7,0.7,0.8,0.8,0.7],"#,
            r#""dims":[128,128,96,96,64,64,64,32,32,32,32],"#,
            r#""variances":[0.7,1,0.5,7.9,0.4,0.2,0.2,0.1,0.1,0.1,0.1]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("report");
    let o = ndm(&["eval-gini", "--effects", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let row: Value = serde_json::from_str(fs::read_to_string(out.join("report.jsonl")).unwrap().lines().next().unwrap())
        .unwrap();
    assert_eq!(row["test"], "t4");
    assert!((row["g_raw"].as_f64().unwrap() - 0.33).abs() <= 0.01);
    assert!((row["g_per_dim"].as_f64().unwrap() - 0.05).abs() <= 0.01);
    assert!((row["g_per_var"].as_f64().unwrap() - 0.23).abs() <= 0.01);
    assert!(out.join("summary.txt").exists());

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, r#"{"effects":[1,2],"dims":[1],"variances":[1,1]}"#).unwrap();
    assert_eq!(code(&ndm(&["eval-gini", "--effects", s(&bad)])), 1);
}

#[test]
fn preimage_finds_aligned_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let words = ["the", "cat", "sat", "on", "a", "mat"];
    let data = Matrix::from_fn(6, 4, |i, j| match (i % 2, j) {
        (0, 0) => 1.0 + i as f64,
        (1, 1) => 1.0,
        (_, 2) => i as f64 - 2.5,
        _ => 0.0,
    });
    let meta = words
        .iter()
        .enumerate()
        .map(|(i, w)| TokenMeta { doc_id: 0, position: i as u64, token_text: format!(" {w}") })
        .collect();
    let acts = dir.path().join("acts.ndma");
    write_activations(&ActivationSet::new(data, Some(meta)).unwrap(), &acts).unwrap();
    let part = dir.path().join("p.ndmp");
    let partition = Partition::new(Matrix::identity(4), vec![2, 2]).unwrap();
    write_partition(&PartitionFile { partition, provenance: vec![] }, &part).unwrap();

    let o = ndm(&["preimage", "--partition", s(&part), "--activations", s(&acts), "--subspace", "0", "--row", "0", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let hits: Vec<Value> =
        String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let rows: Vec<u64> = hits.iter().map(|h| h["row"].as_u64().unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r % 2 == 0));
    assert_eq!(hits[0]["similarity"].as_f64().unwrap(), 1.0);

    let o = ndm(&["preimage", "--partition", s(&part), "--activations", s(&acts), "--subspace", "0", "--query", "0,1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("[[ cat]]") && text.contains("[[ mat]]"), "{text}");

    let o = ndm(&["preimage", "--partition", s(&part), "--activations", s(&acts), "--subspace", "0", "--query", "0,0"]);
    assert_eq!(code(&o), 1);
    let o = ndm(&["preimage", "--partition", s(&part), "--activations", s(&acts), "--subspace", "5", "--row", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    let o = ndm(&["toy-train", "--preset", "toy-2x20", "--seed", "0", "--out", s(&toy)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&toy.join("summary.json"));
    assert!(summary["fvu"].as_f64().unwrap() <= 0.08);
    assert!(summary["cross_group_ratio"].as_f64().unwrap() <= 0.1);

    let run = dir.path().join("ndm");
    let acts = toy.join("activations.ndma");
    let model = toy.join("model.ndmt");
    let o = ndm(&[
        "ndm-train", "--preset", "toy", "--activations", s(&acts), "--toy-model", s(&model), "--seed", "0", "--out", s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let events = json(&run.join("events.json"));
    assert_eq!(events["c"], serde_json::json!([6, 6]));
    assert_eq!(events["termination"], "converged");
    assert!(events["purity"].as_array().unwrap().iter().all(|p| p.as_f64().unwrap() >= 0.95));
    assert!(run.join("trace.jsonl").exists());
    assert!(fs::read_dir(run.join("checkpoints")).unwrap().count() >= 1);

    let part = run.join("partition.ndmp");
    let mi = dir.path().join("mi");
    assert_eq!(code(&ndm(&["mi", "--partition", s(&part), "--activations", s(&acts), "--out", s(&mi)])), 0);
    assert!(json(&mi.join("summary.json"))["max_normalized"].as_f64().unwrap() < 0.04);

    let base = dir.path().join("base");
    assert_eq!(code(&ndm(&["baselines", "--partition", s(&part), "--activations", s(&acts), "--out", s(&base)])), 0);
    for f in ["identity.ndmp", "random.ndmp", "pca1.ndmp", "pca2.ndmp", "variances.json"] {
        assert!(base.join(f).exists(), "{f}");
    }

    let patch = dir.path().join("patch");
    let o = ndm(&["patch-toy", "--model", s(&model), "--partition", s(&part), "--samples", "1024", "--out", s(&patch)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let record = json(&patch.join("record.json"));
    let shifts: Vec<f64> =
        record["relative_shift"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let (hi, lo) = (shifts.iter().cloned().fold(0.0, f64::max), shifts.iter().cloned().fold(f64::INFINITY, f64::min));
    assert!(hi > 0.5 && lo < 0.01, "{shifts:?}");
}
