use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ucrl-vtr"))
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--T",
        "800",
        "--replications",
        "2",
        "--stride",
        "200",
        "--seed",
        "7",
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn run_writes_runs_aggregate_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &["--algo", "vtr-hoeffding,ucrl2,random"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("vtr-hoeffding"));

    let mut runs: Vec<String> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    runs.sort();
    assert_eq!(
        runs,
        [
            "random_seed7.csv",
            "random_seed8.csv",
            "ucrl2_seed7.csv",
            "ucrl2_seed8.csv",
            "vtr-hoeffding_seed7.csv",
            "vtr-hoeffding_seed8.csv"
        ]
    );
    let one = fs::read_to_string(dir.path().join("runs/ucrl2_seed7.csv")).unwrap();
    assert_eq!(one.lines().next().unwrap(), "t,reward_cum,regret_cum,episode");
    assert!(one.lines().last().unwrap().starts_with("800,"));

    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(
        lines[0],
        "t,vtr-hoeffding_mean,vtr-hoeffding_std,ucrl2_mean,ucrl2_std,random_mean,random_std"
    );
    assert_eq!(lines.len(), 1 + 4);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in ["rho_star", "rho_star_source", "diameter", "gap", "algorithms", "failures", "config"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert_eq!(summary["rho_star_source"], "closed-form");
    let algos = summary["algorithms"].as_array().unwrap();
    assert_eq!(algos.len(), 3);
    for a in algos {
        for key in ["id", "n_success", "n_failed", "final_regret", "episodes", "invariants"] {
            assert!(a.get(key).is_some(), "missing {key}");
        }
        let vtr = a["id"] == "vtr-hoeffding";
        assert_eq!(a.get("episode_bound").is_some(), vtr);
        assert_eq!(a["invariants"].get("episodes_within_bound").is_some(), vtr);
        assert_eq!(a["n_success"], 2);
        for key in ["mean", "std", "min", "max"] {
            assert!(a["final_regret"][key].is_number());
        }
    }
    assert_eq!(summary["config"]["run"]["T"], 800);
    assert!(summary["failures"].as_array().unwrap().is_empty());
}

#[test]
fn serial_and_parallel_cli_runs_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_run(a.path(), &[]).status.success());
    assert!(small_run(b.path(), &["--serial"]).status.success());
    let agg = |d: &Path| fs::read_to_string(d.join("aggregate.csv")).unwrap();
    assert_eq!(agg(a.path()), agg(b.path()));
    // The embedded config records out_dir and the parallel flag.
    let summary = |d: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("config");
        v
    };
    assert_eq!(summary(a.path()), summary(b.path()));
    for e in fs::read_dir(a.path().join("runs")).unwrap() {
        let p = e.unwrap().path();
        let q = b.path().join("runs").join(p.file_name().unwrap());
        assert_eq!(fs::read_to_string(&p).unwrap(), fs::read_to_string(&q).unwrap());
    }
}

#[test]
fn validate_and_oracle_succeed_on_shipped_configs() {
    for name in ["default.toml", "fixture_3x2.toml"] {
        let cfg = configs_dir().join(name);
        let v = run(&["validate", "--config", cfg.to_str().unwrap()]);
        assert!(v.status.success(), "{name}: {}", stdout(&v));
        assert!(!stdout(&v).contains("MISMATCH"));
        let o = run(&["oracle", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.contains("rho* = "));
        assert!(text.contains("stationary distribution"));
    }
}

#[test]
fn fixture_summary_reports_value_iteration_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("fixture_3x2.toml");
    let o = small_run(dir.path(), &["--config", cfg.to_str().unwrap(), "--algo", "random"]);
    assert!(o.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rho_star_source"], "relative-value-iteration");
    assert!(summary.get("gap").is_none());
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[run]\nnot_a_key = 1\n").unwrap();
    let o = run(&["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let missing = run(&["oracle", "--config", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let zero = run(&["run", "--T", "100", "--replications", "0", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn unknown_algorithm_is_rejected() {
    let o = run(&["run", "--algo", "sarsa"]);
    assert!(!o.status.success());
}
