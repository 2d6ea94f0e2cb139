use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn churn_lab(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_churn-lab"));
    cmd.args(args).env_remove("CHURN_LAB_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn churn-lab")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn list_prints_every_cell_with_settings() {
    let out = churn_lab(&["list"], &[]);
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("catch-spectrum\tdqn-like-rmsprop\tlr=0.001,batch=32,replay=1000")));
    assert!(stdout.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = churn_lab(&["run", "--config", "/nonexistent/run.json"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("config not found: /nonexistent/run.json"));
}

#[test]
fn unknown_suite_and_bad_override_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = churn_lab(&["run", "--suite", "no-such-suite", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = write_config(dir.path(), r#"{"variant": "tabular-ql", "overrides": {"momentum": 0.9}}"#);
    let out = churn_lab(&["run", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("momentum"));
}

#[test]
fn analyze_without_traces_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = churn_lab(&["analyze", "--in", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("no traces found"));
}

#[test]
fn run_then_analyze_leaves_summaries_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let out = churn_lab(&["run", "--suite", "dp-gridworld", "--out", root], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary = dir.path().join("dp-gridworld/summary.csv");
    let before = fs::read(&summary).unwrap();
    let out = churn_lab(&["analyze", "--in", root], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(fs::read(&summary).unwrap(), before);
}

#[test]
fn analyze_flags_a_truncated_trace() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    assert!(churn_lab(&["run", "--suite", "bandit-churn", "--out", root], &[]).status.success());
    let trace = dir.path().join("bandit-churn/tabular-alternating/0/trace.csv");
    let body = fs::read_to_string(&trace).unwrap();
    fs::write(&trace, &body[..body.len() / 2]).unwrap();
    let out = churn_lab(&["analyze", "--in", root, "--suite", "bandit-churn"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("tabular-alternating/0"));
}

#[test]
fn workers_environment_variable_takes_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let out = churn_lab(&["run", "--suite", "chain-oscillation", "--out", root, "--workers", "1"], &[("CHURN_LAB_WORKERS", "3")]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("on 3 worker(s)"));
    let out = churn_lab(&["run", "--suite", "chain-oscillation", "--out", root], &[("CHURN_LAB_WORKERS", "zero")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn listed_cells_run_through_config_documents() {
    let dir = tempfile::tempdir().unwrap();
    let listing = text(&churn_lab(&["list"], &[]).stdout);
    let cheap = ["dp-gridworld", "bandit-churn", "chain-oscillation"];
    let mut ran = 0;
    for line in listing.lines() {
        let mut parts = line.split('\t');
        let (suite, cell) = (parts.next().unwrap(), parts.next().unwrap());
        if !cheap.contains(&suite) {
            continue;
        }
        let out_dir = dir.path().join(format!("out-{ran}"));
        let cfg = write_config(
            dir.path(),
            &format!(r#"{{"suite": "{suite}", "variant": "{cell}", "seeds": 1, "out_dir": "{}"}}"#, out_dir.display()),
        );
        let out = churn_lab(&["run", "--config", &cfg], &[]);
        assert!(out.status.success(), "{suite}/{cell}: {}", text(&out.stderr));
        let summary = fs::read_to_string(out_dir.join(suite).join("summary.csv")).unwrap();
        assert!(summary.starts_with("#schema=churn-lab/summary/1"));
        assert!(summary.lines().any(|l| l.starts_with(&format!("{suite},{cell},0,"))));
        ran += 1;
    }
    assert_eq!(ran, 5);
}

#[test]
fn custom_learner_config_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"variant": "tabular-ql", "seeds": 2, "overrides": {{"episode_budget": 50, "lr": 0.5}}, "out_dir": "{}"}}"#,
            out_dir.display()
        ),
    );
    let out = churn_lab(&["run", "--config", &cfg], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("custom/summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("custom,tabular-ql,")).count(), 2);
}
