use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qlink() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qlink"))
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(cfg: &Path, out: &Path, extra: &[&str]) -> Value {
    let o = qlink()
        .args(["run", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("QLINK_SEED")
        .env_remove("QLINK_THREADS")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn every_shipped_config_validates() {
    let mut n = 0;
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = qlink().arg("validate").arg("--config").arg(&path).output().unwrap();
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn list_names_every_scenario_and_prints_defaults() {
    let o = qlink().arg("list").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["chevron", "ringdown", "qst", "bell", "ghz", "lossfit", "hanger"] {
        assert!(text.contains(name), "{name}");
    }
    let o = qlink().args(["list", "ghz"]).output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("scenario = \"ghz\"") && text.contains("[params.noise]"));
}

#[test]
fn negative_t1_is_a_field_error() {
    let o = qlink().arg("validate").arg("--config").arg(fixture("negative_t1.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params.device.sender.t1_us"), "{}", stderr(&o));
}

#[test]
fn missing_interconnect_is_a_layout_error() {
    let o = qlink().arg("validate").arg("--config").arg(fixture("ghz_missing_link.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("layout") && err.contains("A and E"), "{err}");
}

#[test]
fn stochastic_scenario_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("bell.toml")).unwrap().replace("seed = 1\n", "");
    let cfg = write(dir.path(), "bell.toml", &text);
    let o = qlink().arg("validate").arg("--config").arg(&cfg).env_remove("QLINK_SEED").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    let o = qlink().arg("validate").arg("--config").arg(&cfg).env("QLINK_SEED", "5").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_missing_files_name_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", "schema_version = 1\nscenario = \"hanger\"\nseed = 1\n[params]\npointz = 5\n");
    let o = qlink().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params"), "{}", stderr(&o));

    let cfg = write(dir.path(), "b.toml", "schema_version = 1\nscenario = \"lossfit\"\n[params]\ndata_file = \"nope.csv\"\n");
    let o = qlink().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params.data_file"), "{}", stderr(&o));

    let o = qlink().arg("validate").arg("--config").arg(dir.path().join("absent.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn numerical_failure_reports_the_module() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "q.csv", "mode_m,freq_GHz,Q_int\n11,4.8,5e5\n11,4.8,5.1e5\n11,4.8,4.9e5\n");
    let cfg = write(dir.path(), "c.toml", "schema_version = 1\nscenario = \"lossfit\"\n[params]\ndata_file = \"q.csv\"\n");
    let o = qlink().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("lossfit"), "{}", stderr(&o));
}

#[test]
fn ideal_ghz_step_one_has_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_ok(&config("ghz_ideal_step1.toml"), dir.path(), &[]);
    let f = m["summary"]["steps"]["I"]["fidelity"].as_f64().unwrap();
    assert!((f - 1.0).abs() < 1e-9, "{f}");
    assert_eq!(m["scenario"], "ghz");
    assert_eq!(m["seed"], 1);
    assert!(dir.path().join("parity_step_I.csv").is_file());
}

#[test]
fn shipped_qst_config_reports_transfer_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_ok(&config("qst.toml"), dir.path(), &[]);
    let f = m["summary"]["f_qst"].as_f64().unwrap();
    assert!((0.990..=0.996).contains(&f), "{f}");
}

#[test]
fn shipped_lossfit_config_recovers_cable_q() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_ok(&config("lossfit.toml"), dir.path(), &[]);
    let q = m["summary"]["q_cb"].as_f64().unwrap();
    assert!((q / 6.0e5 - 1.0).abs() < 0.15, "{q}");
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6);
}

#[test]
fn manifest_hashes_match_files_and_reruns_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_ok(&config("hanger.toml"), a.path(), &["--threads", "1"]);
    let mb = run_ok(&config("hanger.toml"), b.path(), &["--threads", "2"]);
    assert_eq!(ma["files"], mb["files"]);
    assert_eq!(ma["config_sha256"].as_str().unwrap().len(), 64);
    for (name, hash) in ma["files"].as_object().unwrap() {
        let bytes = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(&qlink_cli::sha256_hex(&bytes), hash.as_str().unwrap(), "{name}");
        assert_eq!(bytes, std::fs::read(b.path().join(name)).unwrap());
    }
    assert!(ma["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(ma["core_version"], qlink_core::VERSION);
}

#[test]
fn seed_override_changes_stochastic_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_ok(&config("hanger.toml"), a.path(), &[]);
    let mb = run_ok(&config("hanger.toml"), b.path(), &["--seed", "2"]);
    assert_eq!(mb["seed"], 2);
    assert_ne!(ma["files"]["s21.csv"], mb["files"]["s21.csv"]);
    assert_ne!(ma["config_sha256"], mb["config_sha256"]);
}
