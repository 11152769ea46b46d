use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfp-fgs"))
        .args(args)
        .env_remove("WFP_FGS_WORKERS")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// A small, fast table experiment derived from the Example 1 config.
fn small_table(out: &Path, extra: &[&str]) -> Output {
    let cfg = config("example1");
    let mut args = vec![
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
        "--set",
        "n_repeat=20",
        "--set",
        "samples=[50, 100]",
        "--set",
        "epsilons=[0.0625, 0.03125]",
    ];
    args.extend_from_slice(extra);
    args.push("table");
    run(&args)
}

#[test]
fn validate_reports_the_realizability_warning() {
    let cfg = config("example1");
    let out = run(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let err = text(&out.stderr);
    assert!(err.contains("warning:") && err.contains("sqrt(alpha*beta)"), "{err}");
    assert!(text(&out.stdout).contains("example1: valid"));
}

#[test]
fn every_shipped_config_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = run(&["--config", path.to_str().unwrap(), "validate"]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), text(&out.stderr));
    }
}

#[test]
fn unknown_key_is_a_usage_error_naming_the_key() {
    let cfg = config("example1");
    let out = run(&["--config", cfg.to_str().unwrap(), "--set", "n_repeats=50", "validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("n_repeats"), "{}", text(&out.stderr));
}

#[test]
fn missing_config_is_an_io_error() {
    let out = run(&["--config", "/nonexistent/exp.toml", "validate"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
}

#[test]
fn table_override_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_table(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("example1_x.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("M,eps,rmse,stderr,slope_hint"));
    assert_eq!(lines.count(), 4);
    assert!(dir.path().join("example1_xi.csv").exists());
    assert!(dir.path().join("example1_epsilon.toml").exists());
    let manifest = fs::read_to_string(dir.path().join("run-manifest.toml")).unwrap();
    assert!(manifest.contains("n_repeat=20"), "{manifest}");
    assert!(manifest.contains("subcommand = \"table\""), "{manifest}");
}

#[test]
fn outputs_are_identical_across_runs_and_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let names = ["example1_x.csv", "example1_xi.csv", "example1_epsilon.toml", "run-manifest.toml"];
    let snapshot = |d: &Path| names.map(|n| fs::read(d.join(n)).unwrap());
    assert!(small_table(a.path(), &["--workers", "1"]).status.success());
    let first = snapshot(a.path());
    assert!(small_table(a.path(), &["--workers", "1"]).status.success());
    assert_eq!(first, snapshot(a.path()), "outputs differ between identical runs");
    assert!(small_table(c.path(), &["--workers", "3"]).status.success());
    let other = snapshot(c.path());
    for (i, name) in names.iter().take(3).enumerate() {
        assert_eq!(first[i], other[i], "{name} differs across workers");
    }
}

#[test]
fn evolve_then_observe_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1");
    let base = ["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"];
    let out = run(&[&base[..], &["--set", "samples=[200]", "evolve"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let snap = dir.path().join("example1.wfps");
    assert!(snap.exists());
    let out = run(&[&base[..], &["observe", "--snapshot", snap.to_str().unwrap()]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("example1_observables.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "{csv}");
}

#[test]
fn reference_subcommand_writes_one_row_per_observable_and_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1");
    let out = run(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet", "reference"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("example1_reference.csv")).unwrap();
    // One row per (observable, ε).
    assert_eq!(csv.lines().count(), 1 + 2 * 4, "{csv}");
}

#[test]
fn bad_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
