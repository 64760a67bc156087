use std::path::Path;
use std::process::{Command, Output};

fn cellfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "n_drops = 2\n[scenario]\naps = 6\nantennas = 2\nusers = 4\nrtus = 1\ntau = 3\nsinr_targets = [1.0]\n";

#[test]
fn run_then_summarize() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("res");
    let o = cellfree(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--drops", "3", "--benchmark"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let drops = std::fs::read_to_string(out.join("drops.csv")).unwrap();
    // comment + header + 3 drops
    assert_eq!(drops.lines().count(), 5);
    assert!(out.join("benchmark_cdf_min_nrtu_rate.csv").exists());

    std::fs::remove_file(out.join("summary.json")).unwrap();
    let s = cellfree(&["summarize", "--in", out.to_str().unwrap()]);
    assert!(s.status.success());
    let text = String::from_utf8(s.stdout).unwrap();
    assert!(text.contains("\"n_drops\": 3"));
    assert!(out.join("summary.json").exists());
}

#[test]
fn overrides_and_seed_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let run = |dir: &Path, seed: &str| {
        let o = cellfree(&[
            "run", "--config", &cfg, "--out", dir.to_str().unwrap(), "--seed", seed, "--set", "scenario.aps=7",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&a, "1");
    run(&b, "2");
    let meta = std::fs::read_to_string(a.join("metadata.json")).unwrap();
    assert!(meta.contains("\"aps\": 7"));
    assert_ne!(
        std::fs::read(a.join("drops.csv")).unwrap(),
        std::fs::read(b.join("drops.csv")).unwrap()
    );
}

#[test]
fn validation_flag_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("v");
    let o = cellfree(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--validate-theorem1", "--drops", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("closed-form SINR check: PASS"));
    let report = std::fs::read_to_string(out.join("theorem1_validation.json")).unwrap();
    assert!(report.contains("\"closed_form\""));

    // too few samples: run still succeeds and the report carries the reason
    let out = tmp.path().join("few");
    let o = cellfree(&[
        "run", "--config", &cfg, "--out", out.to_str().unwrap(), "--validate-theorem1", "--set", "validation_samples=50",
    ]);
    assert!(o.status.success());
    let report = std::fs::read_to_string(out.join("theorem1_validation.json")).unwrap();
    assert!(report.contains("\"error\""));
}

#[test]
fn invalid_config_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "n_drops = 0\n");
    assert_eq!(cellfree(&["run", "--config", &cfg]).status.code(), Some(3));
    let cfg = write_config(tmp.path(), "[scenario]\nusers = 3\nrtus = 1\nsinr_targets = [1.0, 2.0]\n");
    assert_eq!(cellfree(&["run", "--config", &cfg]).status.code(), Some(3));
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(
        cellfree(&["run", "--config", &cfg, "--set", "scenario.tau=zero"]).status.code(),
        Some(3)
    );
}

#[test]
fn io_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cellfree(&["run", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = cellfree(&["run", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(cellfree(&["summarize", "--in", tmp.path().to_str().unwrap()]).status.code(), Some(2));
}
