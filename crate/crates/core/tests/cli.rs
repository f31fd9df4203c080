use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn levywave(args: &[&str], cfg: Option<&Path>, out: &Path) -> Output {
  let mut c = Command::new(env!("CARGO_BIN_EXE_levywave"));
  c.args(args).arg("--out").arg(out).env("LEVYWAVE_WORKERS", "2");
  if let Some(p) = cfg {
    c.arg("--config").arg(p);
  }
  c.output().expect("binary runs")
}

#[test]
fn unknown_command_is_a_usage_error() {
  let dir = tempfile::tempdir().unwrap();
  let o = levywave(&["integrate"], None, dir.path());
  assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_constraint() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = dir.path().join("bad.json");
  fs::write(&cfg, r#"{"grid": {"t_end": 1.0, "a": 1.0, "r": 1.5}}"#).unwrap();
  let o = levywave(&["simulate"], Some(&cfg), &dir.path().join("out"));
  assert_eq!(o.status.code(), Some(2));
  let err = String::from_utf8_lossy(&o.stderr);
  assert!(err.contains("grid.r") && err.contains("finite speed of propagation"), "{err}");
}

#[test]
fn verify_kernels_passes_on_defaults() {
  let dir = tempfile::tempdir().unwrap();
  let o = levywave(&["verify-kernels"], None, dir.path());
  let stdout = String::from_utf8_lossy(&o.stdout);
  assert_eq!(o.status.code(), Some(0), "{stdout}");
  assert!(!stdout.contains("[FAIL]"));
  let checks = fs::read_to_string(dir.path().join("checks.jsonl")).unwrap();
  assert!(checks.lines().count() > 20);
  assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn plot_data_follows_the_selection() {
  let dir = tempfile::tempdir().unwrap();
  let o = levywave(&["plot-data", "--select="], None, dir.path());
  assert_eq!(o.status.code(), Some(0));
  assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
  let o = levywave(&["plot-data", "--select", "fits"], None, dir.path());
  assert_eq!(o.status.code(), Some(2));
  assert!(String::from_utf8_lossy(&o.stderr).contains("fits.json"));
}

#[test]
fn printed_config_loads_back() {
  let dir = tempfile::tempdir().unwrap();
  let o = levywave(&["simulate", "--print-config", "--seed", "11"], None, dir.path());
  assert_eq!(o.status.code(), Some(0));
  let cfg = dir.path().join("resolved.json");
  fs::write(&cfg, &o.stdout).unwrap();
  let c = levywave::config::load_config(&cfg).unwrap();
  assert_eq!(c.run.seed, 11);
}

#[test]
fn simulate_writes_manifested_paths() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = dir.path().join("c.json");
  fs::write(
    &cfg,
    r#"{"equation": {"d": 2, "sigma": {"kind": "constant", "c": 1.0}, "initial": {"kind": "zero"}},
        "noise": {"p": 1.9},
        "grid": {"t_end": 0.5, "a": 0.5, "r": 1.0, "dt": 0.125, "dx": 0.125},
        "run": {"paths": 2}, "output": {"formats": ["csv"]}}"#,
  )
  .unwrap();
  let out = dir.path().join("out");
  let o = levywave(&["simulate"], Some(&cfg), &out);
  assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
  let head = fs::read_to_string(out.join("paths/path_0001.csv")).unwrap();
  assert!(head.starts_with("t,x1,x2,u,level\n"));
  assert!(!out.join("paths/path_0001.json").exists());
  let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
  let files = m["files"].as_array().unwrap();
  assert!(files.iter().any(|f| f["path"] == "paths/path_0001_jumps.csv"));
  assert_eq!(m["seed"], 0);
}
