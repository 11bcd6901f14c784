//! Exercises the compiled binary: exit codes, stage selection,
//! resumption, and seed overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spec_text() -> &'static str {
    "n_pairs = 80\n\
     seed = 9\n\
     common_reply_rate = 0.3\n\
     response_length_dist = 2:0.5,4:0.5\n\
     stock_replies = ok sure|i see\n\
     filler_words = cat,dog\n\
     template = where is the _ :: here:0.5,there:0.5\n"
}

fn conf_text() -> &'static str {
    "synth = synth.spec\n\
     seed = 13\n\
     vocab_size = 32\n\
     embed_dim = 4\n\
     hidden_dim = 6\n\
     gen_epochs = 1\n\
     disc_epochs = 1\n\
     train_frac = 0.6\n\
     disc_train_frac = 0.7\n\
     sample_max_len = 5\n\
     eval_contexts = 3\n\
     eval_samples = 8\n\
     top_k = 2\n\
     top_k_contexts = 1\n"
}

fn write_fixture(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("synth.spec"), spec_text()).unwrap();
    let conf = dir.join("run.conf");
    std::fs::write(&conf, conf_text()).unwrap();
    conf
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advdial"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn run_in(dir: &Path, conf: &Path, cmd: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advdial"))
        .args(cmd)
        .arg("--config")
        .arg(conf)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .expect("spawning the binary")
}

#[test]
fn run_all_completes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path());
    let out = run_in(dir.path(), &conf, &["run-all"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    for stage in ["corpus", "split", "train-gen", "build-dataset", "train-disc", "evaluate"] {
        assert!(stdout.contains(stage), "missing stage line for {stage}:\n{stdout}");
    }
    assert!(stdout.contains("accuracy"), "missing summary line:\n{stdout}");
    for name in ["corpus.tsv", "vocab.txt", "generator.ckpt", "report.json", "report.txt"] {
        assert!(dir.path().join("out").join(name).is_file(), "{name} missing");
    }

    // A second invocation finds everything up to date.
    let again = run_in(dir.path(), &conf, &["run-all"]);
    assert!(again.status.success());
    let stdout = String::from_utf8_lossy(&again.stdout);
    assert_eq!(
        stdout.matches("up to date").count(),
        6,
        "every stage should be skipped on a rerun:\n{stdout}"
    );
}

#[test]
fn stage_selection_stops_early_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path());

    let out = run_in(dir.path(), &conf, &["run-all", "--stage", "train-gen"]);
    assert!(out.status.success());
    let outdir = dir.path().join("out");
    assert!(outdir.join("generator.ckpt").is_file());
    assert!(!outdir.join("disc_dataset.tsv").exists());
    assert!(!outdir.join("report.json").exists());

    // The synth subcommand alone builds only the corpus artifacts.
    let synth_dir = tempfile::tempdir().unwrap();
    let synth_conf = write_fixture(synth_dir.path());
    let out = run_in(synth_dir.path(), &synth_conf, &["synth"]);
    assert!(out.status.success());
    let sd = synth_dir.path().join("out");
    assert!(sd.join("corpus.tsv").is_file());
    assert!(sd.join("vocab.txt").is_file());
    assert!(!sd.join("train.tsv").exists());

    // Finishing the interrupted run reuses the earlier artifacts.
    let out = run_in(dir.path(), &conf, &["evaluate"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("up to date"), "expected skipped stages:\n{stdout}");
    assert!(outdir.join("report.json").is_file());
}

#[test]
fn seed_override_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path());
    let base = run_in(dir.path(), &conf, &["run-all"]);
    assert!(base.status.success());

    let alt_dir = dir.path().join("alt");
    let out = run(&[
        "run-all",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        alt_dir.to_str().unwrap(),
        "--seed",
        "999",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(dir.path().join("out").join("report.json")).unwrap();
    let b = std::fs::read(alt_dir.join("report.json")).unwrap();
    assert_ne!(a, b, "a different seed should change the evaluation report");
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("synth.spec"), spec_text()).unwrap();
    let conf = dir.path().join("bad.conf");
    // No seed setting.
    std::fs::write(&conf, "synth = synth.spec\n").unwrap();
    let out = run_in(dir.path(), &conf, &["run-all"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed"), "stderr: {stderr}");

    let good_dir = tempfile::tempdir().unwrap();
    let good = write_fixture(good_dir.path());
    let out = run_in(good_dir.path(), &good, &["run-all", "--stage", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"), "stderr: {stderr}");
}

#[test]
fn missing_config_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("absent.conf");
    let out = run_in(dir.path(), &conf, &["run-all"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corrupt_checkpoint_exits_three_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path());
    let out = run_in(dir.path(), &conf, &["train-gen"]);
    assert!(out.status.success());

    let ckpt = dir.path().join("out").join("generator.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = run_in(dir.path(), &conf, &["run-all"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("train-gen"), "stderr: {stderr}");
}

#[test]
fn changed_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path());
    assert!(run_in(dir.path(), &conf, &["synth"]).status.success());

    let altered = conf_text().replace("hidden_dim = 6", "hidden_dim = 7");
    std::fs::write(&conf, altered).unwrap();
    let out = run_in(dir.path(), &conf, &["run-all"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("configuration"),
        "stderr: {stderr}"
    );
}
