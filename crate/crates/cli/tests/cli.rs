use std::path::Path;
use std::process::{Command, Output};

fn hmexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmexp"))
        .env_remove("HMEXP_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let o = hmexp(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&["--out", s(dir), "--seed", "7", "synth", "--cells", "3", "--genes", "120"]);
}

#[test]
fn synth_writes_corpus_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    synth(&d);
    for f in ["C1.csv", "C2.csv", "C3.csv", "rpkm.csv", "splits.csv", "manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["synthetic"]["genes_per_cell"], 120);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 5);
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let code = |args: &[&str]| hmexp(args).status.code().unwrap();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--out", s(&out), "train", "--data", "/no/such/dir", "--cell", "C1"]), 2);
    assert_eq!(code(&["--out", s(&out), "train", "--unknown-flag"]), 2);
    assert_eq!(code(&["--out", s(&out), "synth", "--genes", "5"]), 2);

    // a corrupt checkpoint is a runtime failure
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&["--out", s(&out), "weights-report", "--classifier", s(&bad)]), 1);
}

#[test]
fn env_var_sets_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_hmexp"))
        .env("HMEXP_OUT", &out)
        .args(["synth", "--cells", "1", "--genes", "40"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn train_then_report_and_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    synth(&p("data"));
    ok(&["--out", s(&p("lin")), "train", "--data", s(&p("data")), "--cell", "C1", "--arch", "linear", "--epochs", "3"]);
    assert!(p("lin/checkpoint.json").exists());
    let hist = std::fs::read_to_string(p("lin/history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 4);

    ok(&["--out", s(&p("w")), "weights-report", "--classifier", s(&p("lin/checkpoint.json"))]);
    let w = std::fs::read_to_string(p("w/weights.csv")).unwrap();
    assert_eq!(w.lines().count(), 1 + 10 + 2);

    ok(&[
        "--out", s(&p("gan")), "train-gan", "--data", s(&p("data")), "--cell", "C1", "--epochs", "1",
        "--latent-dim", "4", "--generator-hidden", "8", "--discriminator-hidden", "8",
    ]);
    ok(&[
        "--out", s(&p("mc")), "visualize-mc", "--classifier", s(&p("lin/checkpoint.json")),
        "--gan", s(&p("gan/gan.json")), "--n", "600", "--k", "10",
    ]);
    let prof = std::fs::read_to_string(p("mc/profile.csv")).unwrap();
    let rows: Vec<&str> = prof.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for class in ["+1", "-1"] {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.starts_with(&format!("{class},")))
            .map(|r| r.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(vals.len(), 5);
        assert_eq!(vals.iter().copied().fold(0.0, f64::max), 1.0);
    }
}

#[test]
fn weights_report_rejects_conv_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    synth(&p("data"));
    ok(&["--out", s(&p("st")), "train", "--data", s(&p("data")), "--cell", "C2", "--arch", "strided", "--epochs", "1"]);
    let o = hmexp(&["--out", s(&p("w")), "weights-report", "--classifier", s(&p("st/checkpoint.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!p("w/manifest.json").exists());
}
