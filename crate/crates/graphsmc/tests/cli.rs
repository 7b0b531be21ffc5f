//! Binary-level tests: flag surface, exit codes, stderr diagnostics, and
//! artifact round trips through temp directories.

use std::path::Path;
use std::process::{Command, Output};

fn graphsmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphsmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("read {}: {e}", p.display()))
}

/// Tiny dataset plus fast hyperparameters shared by the train-based tests.
fn make_dataset(dir: &Path) {
    let out = graphsmc(&[
        "synth",
        "--out",
        path_str(dir),
        "--nodes",
        "8",
        "--length",
        "60",
        "--switch",
        "30",
        "--samples-per-class",
        "5",
        "--seed",
        "7",
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
}

fn train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--data",
        data,
        "--out",
        out,
        "--window-length",
        "20",
        "--stride",
        "20",
        "--particles",
        "3",
        "--epochs",
        "2",
        "--patience",
        "2",
        "--hidden-dim",
        "8",
        "--mlp-dim",
        "4",
        "--batch-size",
        "4",
    ]
}

#[test]
fn help_lists_every_config_field() {
    for cmd in ["train", "ingest", "ablate"] {
        let out = graphsmc(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = stdout(&out);
        for flag in [
            "--window-length",
            "--stride",
            "--particles",
            "--cheb-order",
            "--layers",
            "--hidden-dim",
            "--mlp-dim",
            "--learning-rate",
            "--batch-size",
            "--alpha",
            "--knn",
            "--sigma",
            "--shrinkage",
            "--top-k",
            "--seed",
            "--max-windows",
            "--init-noise",
            "--ess-trigger",
            "--epochs",
            "--patience",
            "--jobs",
            "--classes",
            "--config",
        ] {
            assert!(text.contains(flag), "{cmd} --help missing {flag}");
        }
        // Defaults are documented inline.
        assert!(text.contains("[default: 100]"), "{cmd} --help missing window default");
        assert!(text.contains("[default: 30]"), "{cmd} --help missing particle default");
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    make_dataset(&a);
    make_dataset(&b);
    assert_eq!(read(&a.join("labels.csv")), read(&b.join("labels.csv")));
    for id in 0..10 {
        let name = format!("sample_{id:04}.csv");
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)), "{name} differs");
    }
}

#[test]
fn ingest_writes_expected_window_manifest() {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("series.csv");
    let mut text = String::from("r0,r1,r2,r3\n");
    for t in 0..160 {
        let row: Vec<String> = (0..4)
            .map(|i| format!("{}", ((t * 7 + i * 3) % 13) as f64 * 0.1 + (t as f64).sin()))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&input, text).expect("write series");

    let manifest = dir.path().join("manifest.toml");
    let out = graphsmc(&[
        "ingest",
        "--input",
        path_str(&input),
        "--out",
        path_str(&manifest),
        "--window-length",
        "100",
        "--stride",
        "3",
    ]);
    assert!(out.status.success(), "ingest failed: {}", stderr(&out));
    let body = String::from_utf8(std::fs::read(&manifest).expect("manifest")).expect("utf-8");
    assert!(body.contains("windows = 21"), "manifest:\n{body}");
    assert!(body.contains("window_length = 100"));
}

#[test]
fn oversized_window_exits_with_input_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("short.csv");
    std::fs::write(&input, "a,b\n1.0,2.0\n2.0,1.0\n3.0,4.0\n").expect("write");
    let out = graphsmc(&[
        "ingest",
        "--input",
        path_str(&input),
        "--window-length",
        "100",
        "--stride",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("window exceeds series length"), "stderr: {err}");
    assert!(err.contains("error-code: input"), "stderr: {err}");
}

#[test]
fn empty_input_exits_with_input_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("empty.csv");
    std::fs::write(&input, "").expect("write");
    let out = graphsmc(&[
        "ingest",
        "--input",
        path_str(&input),
        "--window-length",
        "10",
        "--stride",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error-code: input"));
}

#[test]
fn missing_stride_is_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ds = dir.path().join("ds");
    make_dataset(&ds);
    let out = graphsmc(&["train", "--data", path_str(&ds), "--out", path_str(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stride is required"), "stderr: {}", stderr(&out));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("series.csv");
    let mut text = String::from("a,b\n");
    for t in 0..60 {
        text.push_str(&format!("{},{}\n", (t as f64).sin(), (t as f64).cos()));
    }
    std::fs::write(&input, text).expect("write");
    let config = dir.path().join("cfg.toml");
    std::fs::write(&config, "window_length = 50\nstride = 10\n").expect("write");

    let manifest = dir.path().join("manifest.toml");
    // stride 10 would yield 2 windows; the flag narrows it to 1.
    let out = graphsmc(&[
        "ingest",
        "--input",
        path_str(&input),
        "--out",
        path_str(&manifest),
        "--config",
        path_str(&config),
        "--stride",
        "25",
    ]);
    assert!(out.status.success(), "ingest failed: {}", stderr(&out));
    let body = String::from_utf8(std::fs::read(&manifest).expect("manifest")).expect("utf-8");
    assert!(body.contains("windows = 1"), "manifest:\n{body}");
    assert!(body.contains("stride = 25"));
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_metrics() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ds = dir.path().join("ds");
    make_dataset(&ds);
    let run = dir.path().join("run");
    let out = graphsmc(&train_args(path_str(&ds), path_str(&run)));
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    for artifact in [
        "config.toml",
        "folds.csv",
        "results.csv",
        "predictions.csv",
        "diagnostics.csv",
        "model_fold0.json",
        "model_fold4.json",
    ] {
        assert!(run.join(artifact).exists(), "missing {artifact}");
    }
    let results = String::from_utf8(read(&run.join("results.csv"))).expect("utf-8");
    assert!(results.starts_with("fold,accuracy,sensitivity,specificity,auc\n"));
    assert_eq!(results.lines().count(), 8, "5 folds + mean + std + header");

    let out = graphsmc(&["eval", "--run", path_str(&run), "--data", path_str(&ds)]);
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    let eval = String::from_utf8(read(&run.join("results_eval.csv"))).expect("utf-8");
    assert_eq!(results, eval, "eval must reproduce recorded test metrics");
}

#[test]
fn rerunning_train_overwrites_with_identical_content() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ds = dir.path().join("ds");
    make_dataset(&ds);
    let run = dir.path().join("run");
    let args = train_args(path_str(&ds), path_str(&run));
    assert!(graphsmc(&args).status.success());
    let first = read(&run.join("results.csv"));
    let first_preds = read(&run.join("predictions.csv"));
    assert!(graphsmc(&args).status.success());
    assert_eq!(first, read(&run.join("results.csv")));
    assert_eq!(first_preds, read(&run.join("predictions.csv")));
}

#[test]
fn validate_smc_prints_rmse_and_pass() {
    let out = graphsmc(&["validate-smc", "--particles", "300", "--horizon", "60"]);
    assert!(out.status.success(), "validate-smc failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("rmse="), "stdout: {text}");
    assert!(text.contains("PASS"), "stdout: {text}");
}

#[test]
fn ablate_writes_one_row_per_particle_count() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ds = dir.path().join("ds");
    make_dataset(&ds);
    let run = dir.path().join("abl");
    let out = graphsmc(&[
        "ablate",
        "--data",
        path_str(&ds),
        "--out",
        path_str(&run),
        "--particle-counts",
        "2,4",
        "--window-length",
        "20",
        "--stride",
        "20",
        "--epochs",
        "1",
        "--patience",
        "1",
        "--hidden-dim",
        "8",
        "--mlp-dim",
        "4",
        "--batch-size",
        "4",
    ]);
    assert!(out.status.success(), "ablate failed: {}", stderr(&out));
    let body = String::from_utf8(read(&run.join("ablation.csv"))).expect("utf-8");
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "particles,accuracy,auc,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,"));
    assert!(lines[2].starts_with("4,"));
}
