use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gru-attitude"))
}

fn fresh(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn quick_run_then_verify() {
    let out = fresh("cli_quick");
    let cfg = tempfile::NamedTempFile::new().unwrap();
    fs::write(cfg.path(), "seed = 3\n").unwrap();
    let status = bin()
        .args(["run", "--quick", "--iterations", "1", "--config"])
        .arg(cfg.path())
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let effective = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(effective.starts_with("seed = 3\n"), "{effective}");
    assert!(out.join("iter_0_model.bin").exists());
    assert!(!out.join("iter_1_telemetry.csv").exists());
    assert!(bin()
        .arg("verify")
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
}

#[test]
fn bad_config_exits_nonzero_with_error_record() {
    let out = fresh("cli_bad");
    let cfg = tempfile::NamedTempFile::new().unwrap();
    fs::write(cfg.path(), "[train]\nlearning_rate = -1\n").unwrap();
    let output = bin()
        .args(["run", "--config"])
        .arg(cfg.path())
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("learning_rate must be > 0"), "{stderr}");
    let record: toml::Table = fs::read_to_string(out.join("error.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(record["kind"].as_str(), Some("validation"));
}

#[test]
fn unknown_key_is_a_parse_error() {
    let out = fresh("cli_unknown");
    let cfg = tempfile::NamedTempFile::new().unwrap();
    fs::write(cfg.path(), "[scenario]\nintertia = 1\n").unwrap();
    let output = bin()
        .args(["run", "--config"])
        .arg(cfg.path())
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let record = fs::read_to_string(out.join("error.toml")).unwrap();
    assert!(record.contains("kind = \"parse\""), "{record}");
    assert!(record.contains("intertia"), "{record}");
}

#[test]
fn verify_on_missing_directory_fails() {
    let out = fresh("cli_missing");
    assert!(!bin()
        .arg("verify")
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
}
