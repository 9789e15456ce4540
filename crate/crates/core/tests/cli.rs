use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bilinasa"))
}

fn config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn verify_passes_and_prints_one_line_per_check() {
    let out = bin().arg("verify").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 7, "{text}");
}

#[test]
fn run_writes_artifacts_and_honours_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(config("qb1.toml"))
        .args(["--seeds", "3..5", "--jobs", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in 3..=5 {
        assert!(dir.path().join(format!("trace_seed{s}.csv")).exists());
    }
    assert!(!dir.path().join("trace_seed1.csv").exists());
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seeds = [3, 4, 5]"), "{resolved}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(summary["prox_violations"], 0);
}

#[test]
fn zero_noise_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--zero-noise", "--seeds", "1", "--config"])
        .arg(config("qb1.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("kind = \"zero\""), "{resolved}");
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[instance]\nfamily = \"quadratic\"\np = 2\nq = 2\nconditioning = 2.0\nseed = 1\n[schedule]\nkk = 3\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kk"));
    let out = bin().args(["run", "--seeds", "x", "--config"]).arg(config("qb1.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_too_few_seeds_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--seeds", "1,2", "--config"])
        .arg(config("qb1_sweep.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    assert!(dir.path().join("sweep.json").exists());
}
