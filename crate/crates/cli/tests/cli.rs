use std::path::Path;
use std::process::{Command, Output};

use contrastive_cli::output::{read_csv, HEADER};

fn contrastive(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_contrastive"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("CONTRASTIVE_THREADS", t),
        None => cmd.env_remove("CONTRASTIVE_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "
[run]
seed = 11
reps = 3

[gaussian-proposal]
iterations = 40

[ring]
epochs = 2
n_data = 40

[ar-toy]
dims = [1, 3]
iterations = 60
n_data = 60
n_test = 50
";

#[test]
fn small_runs_write_versioned_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    for exp in ["gaussian-proposal", "ring", "ar-toy"] {
        let out = dir.path().join(format!("{exp}.csv"));
        let o = contrastive(
            &[exp, "--config", &cfg, "--out", out.to_str().unwrap()],
            None,
        );
        assert!(
            o.status.success(),
            "{exp}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
        let rows = read_csv(text.as_bytes()).unwrap();
        assert!(!rows.is_empty());
        assert!(rows
            .iter()
            .all(|r| r.experiment == exp && r.value.is_finite()));
    }
}

#[test]
fn stdout_when_no_out_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let o = contrastive(
        &["gaussian-proposal", "--config", &cfg, "--reps", "1"],
        None,
    );
    assert!(o.status.success());
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    // one repetition: every seed is either the master or the single derived seed
    assert!(rows.iter().any(|r| r.seed == 11));
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let a = contrastive(&["ring", "--config", &cfg], Some("1"));
    let b = contrastive(&["ring", "--config", &cfg], Some("3"));
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let o = contrastive(
        &[
            "ring",
            "--config",
            &cfg,
            "--criterion",
            "p-cnce",
            "--J",
            "2",
            "--seed",
            "4",
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert!(rows.iter().all(|r| r.criterion == "p-cnce"));
    assert!(rows.iter().any(|r| r.seed == 4));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[ring]\nreps = 0\n");
    for args in [
        vec!["no-such-experiment"],
        vec!["ring", "--config", &bad],
        vec!["ring", "--config", "/nonexistent/file.toml"],
        vec!["ar-toy", "--criterion", "cnce"],
        vec!["ring", "--J", "0"],
        vec!["ring", "--bogus-flag"],
    ] {
        let o = contrastive(&args, None);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    let o = contrastive(&["oracle-suite", "--reps", "1"], Some("zero"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numeric_abort_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // a huge step size drives the ring precision to overflow
    let cfg = write(
        dir.path(),
        "diverge.toml",
        "[ring]\nreps = 1\nepochs = 5\nn_data = 40\nlr_start = 1e6\nlr_end = 1e6\n",
    );
    let o = contrastive(&["ring", "--config", &cfg], None);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn oracle_suite_passes_and_corrupt_hook_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "quick.toml",
        "[oracle-suite]\ninstances = 10\nfd_points = 10\n",
    );
    let o = contrastive(&["oracle-suite", "--config", &cfg], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8_lossy(&o.stderr);
    assert!(!report.contains("FAIL"));
    assert!(report.lines().filter(|l| l.starts_with("PASS")).count() >= 8);

    let o = contrastive(&["oracle-suite", "--config", &cfg, "--corrupt"], None);
    assert_eq!(o.status.code(), Some(2));
    let report = String::from_utf8_lossy(&o.stderr);
    let failing: Vec<&str> = report.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(!failing.is_empty());
    assert!(
        failing
            .iter()
            .all(|l| l.contains("cnce-kernel-detailed-balance")),
        "{failing:?}"
    );
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert!(rows.iter().any(|r| r.metric == "passed" && r.value == 0.0));
}
