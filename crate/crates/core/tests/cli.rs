use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sha2::{Digest, Sha256};

fn adpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adpo")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn digests(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), digest(&p)));
            }
        }
    }
    out.sort();
    out
}

/// Train a short run into `dir/run` and return the run directory.
fn short_run(dir: &Path, extra: &[&str]) -> PathBuf {
    let cfg = write_config(
        dir,
        "train.json",
        r#"{"model": {"vocab_size": 12}, "train": {"steps": 40, "eval_every": 10}, "data": {"n_pairs": 48}}"#,
    );
    let run = dir.join("run");
    let set = format!("output_dir={}", s(&run));
    let mut args = vec!["train", "--config", s(&cfg), "--set", &set];
    for e in extra {
        args.extend(["--set", e]);
    }
    let out = adpo(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    run
}

#[test]
fn oracle_small_space_passes_quickly() {
    let t = Instant::now();
    let out = adpo(&["oracle-check", "--space", "3,3", "--check", "all"]);
    let took = t.elapsed();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(took.as_secs_f64() < 1.0, "took {took:?}");
    let certs: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let certs = certs.as_array().unwrap();
    assert_eq!(certs.len(), 7);
    assert!(certs.iter().all(|c| c["pass"] == true));
}

#[test]
fn oracle_rejects_oversized_space() {
    let out = adpo(&["oracle-check", "--space", "7,5"]);
    assert_eq!(code(&out), 2);
    assert!(!stderr(&out).is_empty());
    assert_eq!(code(&adpo(&["oracle-check", "--space", "3,6"])), 2);
    assert_eq!(code(&adpo(&["oracle-check", "--space", "3,3", "--check", "nope"])), 2);
    assert_eq!(code(&adpo(&["oracle-check", "--space", "3"])), 2);
}

#[test]
fn oracle_certificates_repeat_byte_for_byte() {
    let a = adpo(&["oracle-check", "--space", "2,3", "--seed", "9"]);
    let b = adpo(&["oracle-check", "--space", "2,3", "--seed", "9"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = adpo(&["oracle-check", "--space", "2,3", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"model": {"vocab_size": 12}, "seed": 4, "data": {"n_pairs": 20}}"#);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let o = adpo(&["gen-data", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest = |p: &Path| std::fs::read(p.with_extension("jsonl.manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 20);
}

#[test]
fn missing_vocab_size_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"model": {}}"#);
    let out_path = dir.path().join("d.jsonl");
    let out = adpo(&["gen-data", "--config", s(&cfg), "--out", s(&out_path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("vocab_size"), "{}", stderr(&out));
    assert!(!out_path.exists());
}

#[test]
fn zero_pairs_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"model": {"vocab_size": 12}, "data": {"n_pairs": 0}}"#);
    let out_path = dir.path().join("d.jsonl");
    let out = adpo(&["gen-data", "--config", s(&cfg), "--out", s(&out_path)]);
    assert_eq!(code(&out), 2);
    assert!(!out_path.exists());
    assert!(!out_path.with_extension("jsonl.manifest.json").exists());
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let out = adpo(&["train", "--config", "/nonexistent/run.json"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"model": {"vocab_size": 12, "layers": 3}}"#);
    let out = adpo(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("layers"), "{}", stderr(&out));
}

#[test]
fn train_writes_resolved_config_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = short_run(dir.path(), &[]);
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["optimizer"], "adam");
    assert_eq!(resolved["model"]["embed_dim"], 16);
    assert_eq!(resolved["loss"]["beta"], 0.5);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss,chosen_logp,rejected_logp,margin,accuracy"));
    assert_eq!(log.lines().count(), 1 + 5);
    for step in [0, 4, 20, 40] {
        assert!(run.join("checkpoints").join(format!("step_{step:06}.json")).exists(), "step {step}");
    }
    assert!(run.join("data.jsonl").exists());
}

fn loss_column(run: &Path) -> Vec<f64> {
    std::fs::read_to_string(run.join("train_log.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn single_segment_adpo_matches_dpo_end_to_end() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let adaptive = short_run(a.path(), &["loss.method=adpo", "loss.family=adaptive", "loss.m=1"]);
    let dpo = short_run(b.path(), &["loss.method=dpo"]);
    let (la, ld) = (loss_column(&adaptive), loss_column(&dpo));
    assert_eq!(la.len(), ld.len());
    for (x, y) in la.iter().zip(&ld) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

#[test]
fn eval_leaves_files_untouched_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = short_run(dir.path(), &[]);
    let before = digests(&run);
    let ck = run.join("checkpoints").join("step_000040.json");
    let data = run.join("data.jsonl");
    let first = adpo(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    let second = adpo(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(before, digests(&run));

    let text = String::from_utf8(first.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "40");
    // The last logged training row evaluates the same policy on the same data.
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().last().unwrap(), text.lines().nth(1).unwrap());
}

#[test]
fn eval_of_the_reference_against_itself_is_neutral() {
    let dir = tempfile::tempdir().unwrap();
    let run = short_run(dir.path(), &[]);
    let ck = run.join("checkpoints").join("step_000000.json");
    let out = adpo(&["eval", "--checkpoint", s(&ck), "--data", s(&run.join("data.jsonl"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[4], 0.0);
    assert_eq!(row[5], 0.5);
}

#[test]
fn analyze_emits_at_most_bins_rows_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = short_run(dir.path(), &[]);
    let cks = run.join("checkpoints");
    let paths: Vec<PathBuf> = [4, 20, 40].iter().map(|s| cks.join(format!("step_{s:06}.json"))).collect();
    let data = run.join("data.jsonl");
    let mut args = vec!["analyze", "--data", s(&data), "--bins", "20", "--checkpoints"];
    args.extend(paths.iter().map(|p| s(p)));
    let out = adpo(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("checkpoint,bin_lo,bin_hi,variance,margin"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty() && rows.len() <= 20 * paths.len());
    assert!(rows.iter().all(|r| r.split(',').count() == 5));
}

#[test]
fn analyze_rejects_zero_bins() {
    let dir = tempfile::tempdir().unwrap();
    let run = short_run(dir.path(), &[]);
    let ck = run.join("checkpoints").join("step_000040.json");
    let out = adpo(&["analyze", "--data", s(&run.join("data.jsonl")), "--bins", "0", "--checkpoints", s(&ck)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = short_run(dir.path(), &[]);
    let bad = write_config(dir.path(), "bad.json", "{\"step\": 1}");
    let out = adpo(&["eval", "--checkpoint", s(&bad), "--data", s(&run.join("data.jsonl"))]);
    assert_eq!(code(&out), 2);
}
