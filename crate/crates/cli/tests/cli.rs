use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn club(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_club")).args(args).output().unwrap()
}

fn make_env(dir: &Path, horizon: &str) -> String {
    let cfg = dir.join("env.toml");
    let cfg = cfg.to_str().unwrap().to_string();
    let out = club(&["make-env", "--n", "20", "--m", "2", "--d", "4", "--horizon", horizon, "--out", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    cfg
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["run", "--help"][..]] {
        let out = club(args);
        assert_eq!(out.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(club(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(club(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(club(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = club(&["run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = make_env(dir.path(), "100");
    let out = club(&["run", &cfg, "--policy", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gclub"));

    let out = club(&["make-env", "--arrivals", "zipfian"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_csv_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = make_env(dir.path(), "500");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = club(&["run", &cfg, "--policy", "gclub", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(text.starts_with("t,cum_regret,ratio_vs_ran,m_t\n"));
    assert!(text.contains("# policy=gclub\n"));
    assert!(text.contains("# seeds=7\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 450);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = make_env(dir.path(), "200");
    let out_dir = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_club"))
        .args(["run", &cfg, "--policy", "linucb-one", "--seed", "1"])
        .env("CLUB_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out_dir.join("linucb-one.csv").is_file());
}

#[test]
fn make_env_prints_config() {
    let out = club(&["make-env", "--arrivals", "power-law", "--policy", "ucb-ind"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("policy = \"ucb-ind\""));
    assert!(text.contains("power-law"));
}

#[test]
fn ingest_builds_cache() {
    let dir = tempfile::tempdir().unwrap();
    let paths = club_core::ingest::write_movielens_fixture(dir.path(), 30, 120, 900, 2).unwrap();
    let cache = dir.path().join("rounds.jsonl");
    let o = club(&[
        "ingest",
        "--data",
        paths.data.to_str().unwrap(),
        "--items",
        paths.items.to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
        "--context-size",
        "12",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("900 rounds, 30 users"), "{stdout}");
    let (rounds, _) = club_core::ingest::read_rounds_cache(&cache).unwrap();
    assert_eq!(rounds.len(), 900);
    assert!(rounds.iter().all(|r| r.len() <= 12));
}

#[test]
fn connectivity_fuzz_reports_ok() {
    let o = club(&["bench-connectivity", "--n", "60", "--ops", "600", "--graphs", "2"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: 2 graphs, n=60"));
}
