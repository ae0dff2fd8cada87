//! Binary-level tests: subcommand wiring, output files, and exit codes.

use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_ltood");

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    let out = dir.join("run");
    std::fs::write(
        &path,
        format!(
            r#"
[dataset]
head_count = 60
test_per_class = 8
imbalance_ratio = 20.0

[ood]
train_count = 200
test_count = 50

[train]
epochs_stage1 = 12
hidden = 16

[output]
dir = "{}"
"#,
            out.display()
        ),
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

#[test]
fn full_command_chain_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run_dir = dir.path().join("run");

    let (code, stdout, stderr) = run(&["synth", "--config", cfg]);
    assert_eq!(code, 0, "synth failed: {stderr}");
    assert!(stdout.contains("train_in.csv"));

    let (code, _, stderr) = run(&["train", "--config", cfg]);
    assert_eq!(code, 0, "train failed: {stderr}");
    assert!(run_dir.join("checkpoint.json").exists());
    assert!(run_dir.join("loss_trace.csv").exists());

    let (code, _, stderr) = run(&["score", "--config", cfg]);
    assert_eq!(code, 0, "score failed: {stderr}");
    assert!(run_dir.join("scores.csv").exists());

    let (code, stdout, stderr) = run(&[
        "metrics",
        "--scores",
        run_dir.join("scores.csv").to_str().unwrap(),
        "--config",
        cfg,
    ]);
    assert_eq!(code, 0, "metrics failed: {stderr}");
    assert!(stdout.contains("auroc = "));
    assert!(run_dir.join("report.txt").exists());
    assert!(run_dir.join("report.json").exists());

    let (code, stdout, stderr) = run(&["gradcheck", "--config", cfg]);
    assert_eq!(code, 0, "gradcheck failed: {stderr}");
    assert!(stdout.contains("prop1:"));
    assert!(run_dir.join("gradcheck.csv").exists());
}

#[test]
fn metrics_reports_perfect_separation_as_auroc_one() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(
        &scores,
        "id,is_ood,score,pred,label\n\
         0,0,0.1,0,0\n1,0,0.2,1,1\n2,1,0.8,,\n3,1,0.9,,\n",
    )
    .unwrap();
    let (code, stdout, _) = run(&["metrics", "--scores", scores.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("auroc = 1"), "stdout: {stdout}");
}

#[test]
fn sweep_single_seed_reports_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let (code, stdout, stderr) = run(&["sweep", "--config", cfg.to_str().unwrap(), "--seeds", "4"]);
    assert_eq!(code, 0, "sweep failed: {stderr}");
    let auroc_line = stdout
        .lines()
        .find(|l| l.starts_with("auroc = "))
        .expect("auroc line");
    assert!(auroc_line.ends_with("± 0"), "line: {auroc_line}");
}

#[test]
fn missing_config_file_exits_2() {
    let (code, _, stderr) = run(&["synth", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[dataset]\nnope = 1\n").unwrap();
    let (code, _, stderr) = run(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 3, "stderr: {stderr}");
}

#[test]
fn invalid_config_value_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[train]\nlambda = -0.5\n").unwrap();
    let (code, _, stderr) = run(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 4, "stderr: {stderr}");
}

#[test]
fn seed_override_changes_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&[
        "synth",
        "--config",
        cfg,
        "--out-dir",
        a.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    run(&[
        "synth",
        "--config",
        cfg,
        "--out-dir",
        b.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_ne!(
        std::fs::read(a.join("train_in.csv")).unwrap(),
        std::fs::read(b.join("train_in.csv")).unwrap()
    );
}

#[test]
fn output_root_env_prefixes_relative_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg_path,
        "[dataset]\nhead_count = 30\nimbalance_ratio = 10.0\n\n[output]\ndir = \"rel-out\"\n",
    )
    .unwrap();
    let out = Command::new(BIN)
        .args(["synth", "--config", cfg_path.to_str().unwrap()])
        .env("LTOOD_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("rel-out").join("train_in.csv").exists());
}
