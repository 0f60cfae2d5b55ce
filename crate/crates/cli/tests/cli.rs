use std::fs;
use std::path::Path;

use assert_cmd::Command;
use predicates::prelude::*;

fn affectflow(dir: &Path) -> Command {
    let mut cmd = Command::cargo_bin("affectflow").unwrap();
    cmd.current_dir(dir);
    cmd
}

fn synth(dir: &Path, subjects: usize) {
    fs::write(
        dir.join("spec.toml"),
        r#"
[episode]
polarity = "positive"
baseline = 0.14
rise_amplitude = 0.043
rise_rate = 0.183
decay_amplitude = 0.042
decay_rate = -0.057
onset = -38.0
end = 53.0
noise_sigma = 0.03

[gender]
labeled = true
"#,
    )
    .unwrap();
    affectflow(dir)
        .args(["synth", "--spec", "spec.toml", "--subjects", &subjects.to_string(), "--seed", "7", "--out", "synth.jsonl"])
        .assert()
        .success();
}

#[test]
fn stage_by_stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 800);
    let steps: &[&[&str]] = &[
        &["ingest", "--input", "*.jsonl", "--out", "corpus.bin", "--report", "errors.json"],
        &["detect", "--corpus", "corpus.bin", "--out", "cohorts.bin", "--report", "filters.json"],
        &["score", "--corpus", "cohorts.bin", "--out", "scored.bin"],
        &["epoch", "--in", "scored.bin", "--window", "1", "--smooth", "10", "--out", "series.json"],
        &["null", "--cohorts", "cohorts.bin", "--series", "series.json", "--replicates", "30", "--seed", "42", "--out", "null.json"],
        &["detect-change", "--series", "series.json", "--null", "null.json", "--H", "0.01", "--lambda", "40", "--out", "change.json", "--durations", "durations.json"],
        &["fit", "--series", "series.json", "--spans", "change.json", "--out", "fits.json"],
        &["peaks", "--cohorts", "scored.bin", "--spans", "change.json", "--out", "peaks.json"],
        &["gmm", "--peaks", "peaks.json", "--kmax", "3", "--out", "gmm.json"],
        &["epoch", "--in", "scored.bin", "--window", "10", "--smooth", "1", "--gender", "male", "--out", "series_m.json"],
        &["epoch", "--in", "scored.bin", "--window", "10", "--smooth", "1", "--gender", "female", "--out", "series_f.json"],
        &["rdd", "--male", "series_m.json", "--female", "series_f.json", "--out", "rdd.json"],
    ];
    for args in steps {
        affectflow(dir).args(*args).assert().success();
    }
    let errors: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("errors.json")).unwrap()).unwrap();
    assert_eq!(errors["malformed"], 0);
    let fits: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("fits.json")).unwrap()).unwrap();
    assert_eq!(fits["cohorts"][0]["ranked"].as_array().unwrap().len(), 4);
    let rdd: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("rdd.json")).unwrap()).unwrap();
    assert_eq!(rdd["cohorts"][0]["polarity"], "positive");
}

#[test]
fn run_then_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 300);
    fs::write(
        dir.join("run.toml"),
        "corpus = [\"synth.jsonl\"]\noutput_dir = \"out\"\n\n[analysis]\nreplicates = 20\nk_max = 2\n",
    )
    .unwrap();
    affectflow(dir)
        .args(["run", "--config", "run.toml"])
        .assert()
        .success()
        .stderr(predicate::str::contains("plots"));
    affectflow(dir)
        .args(["table", "--dir", "out", "--which", "durations"])
        .assert()
        .success()
        .stdout(predicate::str::starts_with("polarity,method,span,duration_minutes"));
    // No gender toggle, so there is nothing to tabulate.
    affectflow(dir)
        .args(["table", "--dir", "out", "--which", "gender-spans"])
        .assert()
        .failure();
}

#[test]
fn partial_run_and_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 50);
    fs::write(dir.join("run.toml"), "corpus = [\"synth.jsonl\"]\noutput_dir = \"out\"\n").unwrap();
    affectflow(dir)
        .args(["run", "--config", "run.toml", "--stages", "ingest,detect"])
        .assert()
        .success();
    assert!(dir.join("out/filters.json").exists());
    assert!(!dir.join("out/series.json").exists());

    affectflow(dir)
        .args(["run", "--config", "run.toml", "--stages", "bogus"])
        .assert()
        .failure()
        .stderr(predicate::str::contains("unknown stage"));
    fs::write(dir.join("bad.toml"), "corpus = [\"missing.jsonl\"]\noutput_dir = \"out\"\n").unwrap();
    affectflow(dir)
        .args(["run", "--config", "bad.toml"])
        .assert()
        .failure()
        .stderr(predicate::str::contains("does not exist"));
    affectflow(dir)
        .args(["ingest", "--input", "nothing-*.jsonl", "--out", "c.bin"])
        .assert()
        .failure()
        .stderr(predicate::str::contains("no files match"));
}
