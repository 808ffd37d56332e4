use std::path::Path;
use std::process::{Command, Output};

use varprompt::config::EXPERIMENTS;
use varprompt::experiment;
use varprompt::table::read_table;

fn varprompt(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varprompt"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("VARPROMPT_SEED")
        .output()
        .expect("binary runs")
}

fn golden(exp: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{exp}.header"));
    std::fs::read_to_string(path).unwrap().trim().to_string()
}

#[test]
fn schemas_match_golden_headers() {
    for exp in EXPERIMENTS {
        let cols: Vec<_> = experiment(exp).unwrap().columns().iter().map(|c| c.0).collect();
        assert_eq!(cols.join(","), golden(exp), "{exp}");
    }
}

#[test]
fn written_csv_has_golden_header_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = varprompt(&["grad-check", "--trials", "33"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = read_table(&dir.path().join("grad-check.csv")).unwrap();
    assert_eq!(t.header.join(","), golden("grad-check"));
    assert_eq!(t.rows.len(), 33);
    for key in ["experiment", "config_hash", "seed", "version", "timestamp", "units"] {
        assert!(t.provenance(key).is_some(), "{key}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    // 33 cases are below the 100-case bar for the gradient criterion.
    assert!(summary.contains("FAIL A1"), "{summary}");
}

#[test]
fn prop1_quadratic_at_one_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = varprompt(
        &["verify-prop1", "--fn", "quadratic", "--sigma", "0.1", "--trials", "1", "--samples", "100000"],
        dir.path(),
    );
    assert!(out.status.success());
    let t = read_table(&dir.path().join("verify-prop1.csv")).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.column("within_3se").unwrap(), ["true"]);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("PASS"), "{summary}");
}

#[test]
fn config_error_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = varprompt(&["prompt-study", "--nu", "-1"], &out_dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`nu`"));
    assert!(!out_dir.exists());
    let out = varprompt(&["center-seeking", "--trials", "10"], &out_dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`trials`"));
}

#[test]
fn runtime_failure_exits_1_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // A one-pixel task can never have 5–95% positive pixels.
    let out = varprompt(&["prompt-study", "--height", "1", "--width", "1", "--trials", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(varprompt(&["verify-prop1", "--trials", "2", "--samples", "5000", "--seed", "9"], &a)
        .status
        .success());
    let echo = a.join("config.echo");
    assert!(varprompt(&["verify-prop1", "--config", echo.to_str().unwrap()], &b)
        .status
        .success());
    let (ta, tb) = (
        read_table(&a.join("verify-prop1.csv")).unwrap(),
        read_table(&b.join("verify-prop1.csv")).unwrap(),
    );
    assert_eq!(ta.rows, tb.rows);
    assert_eq!(ta.provenance("config_hash"), tb.provenance("config_hash"));
    assert_eq!(ta.provenance("seed"), Some("9"));
}

#[test]
fn seed_env_is_overridden_by_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], sub: &str| {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_varprompt"))
            .args(["grad-check", "--trials", "5"])
            .args(extra)
            .arg("--out")
            .arg(&out)
            .env("VARPROMPT_SEED", "77")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        read_table(&out.join("grad-check.csv")).unwrap()
    };
    assert_eq!(run(&[], "env").provenance("seed"), Some("77"));
    assert_eq!(run(&["--seed", "5"], "flag").provenance("seed"), Some("5"));
}
