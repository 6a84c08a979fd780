use std::path::Path;
use std::process::{Command, Output};

fn geoanneal(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoanneal"));
    cmd.args(args).env_remove("GEOANNEAL_OUT").env_remove("GEOANNEAL_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n\
         [schedule]\npoints = 10\n{extra}\n[mesh]\npoints = 100\n"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn preset_prints_the_caption_parameters() {
    let o = geoanneal(&["preset", "figure1"], &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("josephson_energy = 86.2") && text.contains("t_f = 5.0"));
    let o = geoanneal(&["preset", "figure9"], &[]);
    assert!(!o.status.success());
}

#[test]
fn spectrum_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = geoanneal(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let listed = String::from_utf8(o.stdout).unwrap();
    assert!(listed.lines().any(|l| l == "spectrum.csv"));
    let header = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(header.starts_with("s [1],E0 [GHz],E1 [GHz]"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "spectrum");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "t_f = 1.0");
    let out = dir.path().join("from-env");
    let o = geoanneal(&["dynamics", "--config", &cfg], &[("GEOANNEAL_OUT", out.to_str().unwrap()), ("GEOANNEAL_THREADS", "1")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("dynamics.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with("fidelity [1]"));
}

#[test]
fn dynamics_without_t_f_fails_with_a_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = geoanneal(&["dynamics", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("error: dynamics:") && err.contains("schedule.t_f"), "{err}");
}

#[test]
fn malformed_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n[mesh]\npoints = \"many\"\n").unwrap();
    let o = geoanneal(&["spectrum", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("error: config:") && err.contains("line 5"), "{err}");
}

#[test]
fn verify_exit_status_follows_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "t_f = 1.0");
    let out = dir.path().join("out");
    let o = geoanneal(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("invariants.json")).unwrap()).unwrap();
    assert_eq!(o.status.success(), report["all_pass"].as_bool().unwrap(), "{}", stderr(&o));
}
