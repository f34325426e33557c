//! End-to-end runs of the `saac` binary.

use std::path::Path;
use std::process::{Command, Output};

use saac::io::{read_metrics, read_projection, read_states, read_summary, METRICS_HEADER};

fn saac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saac"))
        .args(args)
        .env_remove("SAAC_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = saac(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: &[&str] = &[
    "--set", "total_steps=60",
    "--set", "warmup_steps=20",
    "--set", "batch_size=8",
    "--set", "hidden=8",
    "--set", "n_quantiles=4",
    "--set", "eval_interval=30",
    "--set", "eval_episodes=1",
    "--set", "horizon=25",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn zero_steps_writes_header_and_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--out", dir.path().to_str().unwrap(), "--set", "total_steps=0", "--set", "hidden=4", "--variants", "sac"]);
    let text = std::fs::read_to_string(dir.path().join("sac/0/metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER.join(","));
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));
    assert!(dir.path().join("sac/0/agent_policy.bin").is_file());
    assert!(dir.path().join("sac/0/config.txt").is_file());
}

#[test]
fn seeds_and_variants_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--seeds", "3,4", "--variants", "cons,cvar"]);
    for v in ["cons", "cvar"] {
        for s in ["3", "4"] {
            let run = dir.path().join(v).join(s);
            let rows = read_metrics(&run.join("metrics.csv")).unwrap();
            assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 30, 60]);
            assert!(!read_states(&run.join("states.csv")).unwrap().is_empty());
            assert!(run.join("adversary_policy.bin").is_file());
        }
    }
    let a = std::fs::read(dir.path().join("cons/3/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("cons/4/metrics.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn parallel_jobs_match_sequential_runs() {
    let seq = tempfile::tempdir().unwrap();
    let par = tempfile::tempdir().unwrap();
    train(seq.path(), &["--seeds", "0,1", "--variants", "msd"]);
    train(par.path(), &["--seeds", "0,1", "--variants", "msd", "--jobs", "2"]);
    for s in ["0", "1"] {
        let a = std::fs::read(seq.path().join("msd").join(s).join("metrics.csv")).unwrap();
        let b = std::fs::read(par.path().join("msd").join(s).join("metrics.csv")).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn config_file_and_output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny run\nadversary = cons\ntotal_steps = 0\nhidden = 4\n").unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_saac"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--set", "adversary=cvar"])
        .env("SAAC_OUT", &out)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("cvar/0/metrics.csv").is_file());
    assert!(!out.join("cons").exists());
}

#[test]
fn bad_config_fails_with_the_key_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = saac(&["train", "--out", dir.path().to_str().unwrap(), "--set", "gamma=1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    let out = saac(&["train", "--out", dir.path().to_str().unwrap(), "--set", "gama=0.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
    let out = saac(&["train"]);
    assert!(!out.status.success());
}

#[test]
fn eval_compare_and_project() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--seeds", "0,1", "--variants", "sac,cons"]);

    let out = ok(&["eval", dir.path().join("cons/1").to_str().unwrap(), "--episodes", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("episodes,return_mean,return_std,failures\n2,"));

    let summary = dir.path().join("summary.csv");
    ok(&[
        "compare",
        "--out",
        dir.path().to_str().unwrap(),
        "--baseline",
        dir.path().join("sac").to_str().unwrap(),
        "--output",
        summary.to_str().unwrap(),
    ]);
    let rows = read_summary(&summary).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, vec!["cons", "sac"]);
    assert_eq!(rows[1].efficiency, 1.0);
    assert!(rows.iter().all(|r| r.seeds == 2));

    let proj = dir.path().join("projection.csv");
    ok(&[
        "project-states",
        dir.path().join("cons/0/states.csv").to_str().unwrap(),
        dir.path().join("cons/1/states.csv").to_str().unwrap(),
        "--stages",
        "30,60",
        "--output",
        proj.to_str().unwrap(),
    ]);
    let points = read_projection(&proj).unwrap();
    assert!(!points.is_empty());
    assert!(points.iter().all(|p| p.stage == [0, 30, 60].iter().position(|&s| s == p.step).unwrap()));
    let mean: f64 = points.iter().map(|p| p.pc1).sum::<f64>() / points.len() as f64;
    assert!(mean.abs() < 1e-10);

    let missing = saac(&["compare", "--out", dir.path().to_str().unwrap(), "--baseline", "/nonexistent"]);
    assert!(!missing.status.success());
}

#[test]
fn self_checks_pass() {
    let out = ok(&["oracle-check"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",PASS")), "{text}");
    let out = ok(&["grad-check"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 11, "{text}");
    assert!(text.lines().skip(1).all(|l| l.ends_with(",PASS")), "{text}");
}
