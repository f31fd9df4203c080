//! Command orchestration and artifact persistence.
//!
//! Every command writes into one output directory: `checks.jsonl` with the
//! check records, `summary.csv` with one row per pass/fail line, the
//! resolved `config.json`, command-specific artifacts and a `manifest.json`
//! listing each file with its SHA-256, the config hash and the seed.
//! Nothing time-dependent is written, so equal inputs give equal bytes.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Format};
use crate::error::{Error, Result};
use crate::experiments::{self, Line, Outcome, RegularitySettings};
use crate::levy_noise::NoiseRealization;
use crate::report::write_jsonl;
use crate::sobolev::{sobolev_profile, ExponentFit, PathProfile, SobolevProfile, SpatialGrid};
use crate::solver::{patch_solution, picard_solve, Engine, SolutionPath};
use crate::verification::{cos_average_bound_check, MomentScan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
  Simulate,
  VerifyKernels,
  VerifyMoments,
  Sobolev,
  All,
}

impl Command {
  pub const NAMES: [&'static str; 5] = ["simulate", "verify-kernels", "verify-moments", "sobolev", "all"];
}

impl FromStr for Command {
  type Err = Error;
  fn from_str(s: &str) -> Result<Self> {
    Ok(match s {
      "simulate" => Self::Simulate,
      "verify-kernels" => Self::VerifyKernels,
      "verify-moments" => Self::VerifyMoments,
      "sobolev" => Self::Sobolev,
      "all" => Self::All,
      _ => {
        return Err(Error::Usage(format!(
          "unknown command `{s}`; expected one of {}",
          Self::NAMES.join(", ")
        )))
      }
    })
  }
}

impl fmt::Display for Command {
  fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let i = [Self::Simulate, Self::VerifyKernels, Self::VerifyMoments, Self::Sobolev, Self::All]
      .iter()
      .position(|c| c == self)
      .unwrap_or(0);
    f.write_str(Self::NAMES[i])
  }
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
  /// (experiment, outcome) in execution order.
  pub outcomes: Vec<(String, Outcome)>,
  /// Files written, relative to the output directory.
  pub files: Vec<PathBuf>,
}

impl RunSummary {
  pub fn pass(&self) -> bool {
    self.outcomes.iter().all(|(_, o)| o.pass())
  }

  pub fn lines(&self) -> impl Iterator<Item = (&str, &Line)> {
    self.outcomes.iter().flat_map(|(e, o)| o.lines.iter().map(move |l| (e.as_str(), l)))
  }
}

/// Tagged H^r time profile, the unit of the profile artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
  /// Which field: `u` for solver paths, `compound-poisson` for u^2.
  pub source: String,
  pub replicate: u64,
  /// Index into the configured window list.
  pub window: usize,
  pub profile: SobolevProfile,
}

impl ProfileEntry {
  pub fn label(&self) -> String {
    format!("{}:{}:{}", self.source, self.replicate, self.window)
  }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
  pub kernel: Vec<PathProfile>,
  pub solution: Vec<ProfileEntry>,
}

/// Per-path manifest of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PathManifest {
  config_hash: String,
  seed: u64,
  replicate: u64,
  levels: Vec<f64>,
  taus: Vec<f64>,
  iteration_logs: Vec<Vec<f64>>,
  converged: Vec<bool>,
  served_by: Vec<f64>,
  files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileEntry {
  path: String,
  sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
  command: String,
  config_hash: String,
  seed: u64,
  files: Vec<FileEntry>,
}

struct Store {
  root: PathBuf,
  files: Vec<PathBuf>,
}

impl Store {
  fn new(root: &Path) -> Result<Self> {
    fs::create_dir_all(root)?;
    Ok(Self {
      root: root.to_path_buf(),
      files: Vec::new(),
    })
  }

  fn create(&mut self, rel: &str) -> Result<BufWriter<fs::File>> {
    let p = self.root.join(rel);
    if let Some(dir) = p.parent() {
      fs::create_dir_all(dir)?;
    }
    self.files.push(PathBuf::from(rel));
    Ok(BufWriter::new(fs::File::create(p)?))
  }

  fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
    let mut w = self.create(rel)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
  }
}

/// Runs `cmd` and writes its artifacts under `out`.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
  cfg.validate()?;
  let mut store = Store::new(out)?;
  let mut summary = RunSummary::default();
  let mut profiles = Profiles::default();
  let mut fit = None;
  let mut moments = None;
  let seed = cfg.run.seed;
  let hash = cfg.hash()?;
  let all = cmd == Command::All;
  if all || cmd == Command::Simulate {
    summary.outcomes.push(("simulate".into(), simulate(cfg, &hash, &mut store)?));
    summary
      .outcomes
      .push(("finite-speed".into(), experiments::finite_speed(seed, cfg.analysis.speed_replicates)?));
  }
  if all || cmd == Command::VerifyKernels {
    let a = &cfg.analysis;
    summary.outcomes.push(("kernel-identities".into(), experiments::kernel_identities()?));
    summary.outcomes.push(("beta-chains".into(), experiments::beta_chains(seed, a.mc_samples)?));
    summary
      .outcomes
      .push(("inequality-sweeps".into(), experiments::inequality_sweeps(seed, a.sweep_points, a.cone_level)?));
  }
  if all || cmd == Command::VerifyMoments {
    let (o, scan) = verify_moments(cfg)?;
    summary.outcomes.extend(o);
    moments = Some(scan);
  }
  if all || cmd == Command::Sobolev {
    let s = RegularitySettings {
      jump_replicates: cfg.analysis.jump_replicates,
      replicates: cfg.analysis.fit_replicates,
      bootstrap: cfg.analysis.bootstrap,
      steps: cfg.analysis.h_steps.clone(),
      r: cfg.analysis.r[0],
      eps: cfg.noise.epsilon,
    };
    let (o, kernel, f, cp) = experiments::path_regularity(seed, &s)?;
    summary.outcomes.push(("path-regularity".into(), o));
    profiles.kernel = kernel;
    profiles.solution.extend(cp.into_iter().enumerate().map(|(i, profile)| ProfileEntry {
      source: "compound-poisson".into(),
      replicate: i as u64,
      window: 0,
      profile,
    }));
    profiles.solution.extend(solution_profiles(cfg)?);
    fit = Some(f);
  }
  let records: Vec<_> = summary.outcomes.iter().flat_map(|(_, o)| o.records.iter().cloned()).collect();
  let mut w = store.create("checks.jsonl")?;
  write_jsonl(&mut w, &records)?;
  w.flush()?;
  drop(w);
  let mut w = csv::Writer::from_writer(store.create("summary.csv")?);
  w.write_record(["experiment", "label", "pass", "detail"])?;
  for (e, l) in summary.lines() {
    w.write_record([e, &l.label, if l.pass { "true" } else { "false" }, &l.detail])?;
  }
  w.flush()?;
  drop(w);
  let mut w = store.create("config.json")?;
  w.write_all(cfg.to_json()?.as_bytes())?;
  w.write_all(b"\n")?;
  w.flush()?;
  drop(w);
  let mut select = Vec::new();
  if !profiles.kernel.is_empty() || !profiles.solution.is_empty() {
    store.json("profiles.json", &profiles)?;
    select.push(Selection::Profiles);
  }
  if let Some(f) = &fit {
    store.json("fits.json", f)?;
    select.extend([Selection::Fits, Selection::Increments]);
  }
  if let Some(m) = &moments {
    store.json("moments.json", m)?;
    select.push(Selection::Moments);
  }
  let plots = emit_plot_data(out, &select)?;
  store.files.extend(plots);
  write_manifest(&store, &cmd.to_string(), &hash, seed)?;
  store.files.push(PathBuf::from("manifest.json"));
  summary.files = store.files;
  Ok(summary)
}

fn write_manifest(store: &Store, command: &str, hash: &str, seed: u64) -> Result<()> {
  let mut files: Vec<FileEntry> = store
    .files
    .iter()
    .map(|f| -> Result<FileEntry> {
      Ok(FileEntry {
        path: f.to_string_lossy().replace('\\', "/"),
        sha256: hex::encode(Sha256::digest(fs::read(store.root.join(f))?)),
      })
    })
    .collect::<Result<_>>()?;
  files.sort_by(|a, b| a.path.cmp(&b.path));
  files.dedup_by(|a, b| a.path == b.path);
  let m = Manifest {
    command: command.into(),
    config_hash: hash.into(),
    seed,
    files,
  };
  let mut w = BufWriter::new(fs::File::create(store.root.join("manifest.json"))?);
  serde_json::to_writer_pretty(&mut w, &m)?;
  w.write_all(b"\n")?;
  w.flush()?;
  Ok(())
}

fn verify_moments(cfg: &ExperimentConfig) -> Result<(Vec<(String, Outcome)>, MomentScan)> {
  let seed = cfg.run.seed;
  let mut out = Vec::new();
  out.push((
    "stopping-time-law".into(),
    experiments::stopping_time_law(seed, cfg.run.replicates, &cfg.noise.levels, cfg.grid.t_end, cfg.grid.r)?,
  ));
  out.push(("isometry".into(), experiments::isometry(seed, cfg.run.replicates, cfg.noise.epsilon)?));
  let problem = cfg.problem(cfg.noise.level)?;
  let (o, scan) = experiments::moment_refinement(
    &problem,
    cfg.analysis.moment_p,
    cfg.run.solver_replicates,
    seed,
    cfg.run.max_iters,
    cfg.run.tolerance,
  )?;
  out.push(("moment-refinement".into(), o));
  out.push((
    "picard-convergence".into(),
    experiments::picard_convergence(&scan.coarse.logs, cfg.run.tolerance, seed, &problem)?,
  ));
  let xis: Vec<f64> = (0..=400).map(|k| 0.25 * k as f64).collect();
  let rec = cos_average_bound_check(cfg.grid.t_end, &xis)?;
  let mut o = Outcome::default();
  o.lines.push(Line {
    label: "cosine average times (1 + xi^2)^(1/2) bounded".into(),
    pass: rec.pass,
    detail: format!(
      "sup over |xi| <= 100: {:.4}; over |xi| <= 200: {:.4} (gate 5% drift)",
      rec.rhs, rec.lhs
    ),
  });
  o.records.push(rec);
  out.push(("cos-average".into(), o));
  Ok((out, scan))
}

/// Solves the configured problem at every level for one replicate.
fn solve_levels(cfg: &ExperimentConfig, rep: u64) -> Result<(Vec<SolutionPath>, NoiseRealization)> {
  let levels = if cfg.noise.levels.is_empty() { vec![cfg.noise.level] } else { cfg.noise.levels.clone() };
  let base = cfg.problem(levels[0])?;
  let noise = NoiseRealization::sample(&base.measure, base.grid.window()?, base.eps, cfg.run.seed, rep)?;
  let paths = levels
    .iter()
    .map(|&n| {
      let p = cfg.problem(n)?;
      picard_solve(&p, &noise, Engine::Auto, cfg.run.max_iters, cfg.run.tolerance)
    })
    .collect::<Result<_>>()?;
  Ok((paths, noise))
}

fn simulate(cfg: &ExperimentConfig, hash: &str, store: &mut Store) -> Result<Outcome> {
  let solved: Vec<(Vec<SolutionPath>, NoiseRealization)> = (0..cfg.run.paths as u64)
    .into_par_iter()
    .map(|rep| solve_levels(cfg, rep))
    .collect::<Result<_>>()?;
  let mut out = Outcome::default();
  let mut unconverged = 0;
  let mut uncovered = 0;
  for (rep, (paths, noise)) in solved.iter().enumerate() {
    unconverged += paths.iter().filter(|p| !p.converged).count();
    let stem = format!("paths/path_{rep:04}");
    let mut files = Vec::new();
    let top = paths.last().expect("at least one level");
    let jumps = noise.jump_set(&cfg.problem(top.level)?.trunc);
    let mut w = store.create(&format!("{stem}_jumps.csv"))?;
    jumps.write_csv(&mut w)?;
    w.flush()?;
    files.push(format!("{stem}_jumps.csv"));
    let (patched, served) = match patch_solution(paths) {
      Ok(p) => (p.path, p.served_by),
      Err(Error::Coverage(_)) => {
        uncovered += 1;
        (top.clone(), vec![f64::NAN; top.lattice.nt + 1])
      }
      Err(e) => return Err(e),
    };
    if cfg.output.formats.contains(&Format::Csv) {
      let l = patched.lattice;
      let mut w = csv::Writer::from_writer(store.create(&format!("{stem}.csv"))?);
      if l.d == 1 {
        w.write_record(["t", "x1", "u", "level"])?;
      } else {
        w.write_record(["t", "x1", "x2", "u", "level"])?;
      }
      let nodes = patched.eval_nodes();
      for k in 0..=l.nt {
        let t = l.time(k).to_string();
        let lev = served[k].to_string();
        for &i in &nodes {
          let x = l.position(i);
          let u = patched.u[k * l.points() + i].to_string();
          if l.d == 1 {
            w.write_record([&t, &x[0].to_string(), &u, &lev])?;
          } else {
            w.write_record([&t, &x[0].to_string(), &x[1].to_string(), &u, &lev])?;
          }
        }
      }
      w.flush()?;
      files.push(format!("{stem}.csv"));
    }
    if cfg.output.formats.contains(&Format::Json) {
      #[derive(Serialize)]
      struct Snapshots<'a> {
        lattice: crate::grid::Lattice,
        nodes: Vec<usize>,
        u: Vec<&'a [f64]>,
      }
      let nodes = patched.eval_nodes();
      let snaps = Snapshots {
        lattice: patched.lattice,
        nodes,
        u: (0..=patched.lattice.nt).map(|k| patched.snapshot(k)).collect(),
      };
      store.json(&format!("{stem}.json"), &snaps)?;
      files.push(format!("{stem}.json"));
    }
    let m = PathManifest {
      config_hash: hash.into(),
      seed: cfg.run.seed,
      replicate: rep as u64,
      levels: paths.iter().map(|p| p.level).collect(),
      taus: paths.iter().map(|p| p.tau).collect(),
      iteration_logs: paths.iter().map(|p| p.log.clone()).collect(),
      converged: paths.iter().map(|p| p.converged).collect(),
      served_by: served,
      files,
    };
    store.json(&format!("{stem}_manifest.json"), &m)?;
  }
  let n = solved.len();
  out.lines.push(Line {
    label: "simulated paths converged".into(),
    pass: unconverged == 0,
    detail: format!("{n} replicates x {} levels, {unconverged} unconverged", cfg.noise.levels.len().max(1)),
  });
  out.lines.push(Line {
    label: "patched paths covered by the largest level".into(),
    pass: uncovered == 0,
    detail: format!("{uncovered} of {n} replicates outlive every level before T (stored at the largest level)"),
  });
  Ok(out)
}

/// H^r profiles of the configured solver paths for every r and window.
fn solution_profiles(cfg: &ExperimentConfig) -> Result<Vec<ProfileEntry>> {
  let windows = cfg.windows()?;
  let per: Vec<Vec<ProfileEntry>> = (0..cfg.run.paths as u64)
    .into_par_iter()
    .map(|rep| -> Result<Vec<ProfileEntry>> {
      let p = cfg.problem(cfg.noise.level)?;
      let noise = NoiseRealization::sample(&p.measure, p.grid.window()?, p.eps, cfg.run.seed, rep)?;
      let path = picard_solve(&p, &noise, Engine::Auto, cfg.run.max_iters, cfg.run.tolerance)?;
      let l = path.lattice;
      let g = SpatialGrid::from(&l);
      let times: Vec<f64> = (0..=l.nt).map(|k| l.time(k)).collect();
      let mut v = Vec::new();
      for &r in &cfg.analysis.r {
        for (wi, w) in windows.iter().enumerate() {
          let profile = sobolev_profile(&g, |k| path.snapshot(k), &times, r, Some(w))?;
          v.push(ProfileEntry {
            source: "u".into(),
            replicate: rep,
            window: wi,
            profile,
          });
        }
      }
      Ok(v)
    })
    .collect::<Result<_>>()?;
  Ok(per.into_iter().flatten().collect())
}

/// Artifact families that can be turned into plot data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
  Profiles,
  Fits,
  Increments,
  Moments,
}

impl FromStr for Selection {
  type Err = Error;
  fn from_str(s: &str) -> Result<Self> {
    match s {
      "profiles" => Ok(Self::Profiles),
      "fits" => Ok(Self::Fits),
      "increments" => Ok(Self::Increments),
      "moments" => Ok(Self::Moments),
      _ => Err(Error::Usage(format!(
        "unknown selection `{s}`; expected profiles, fits, increments or moments"
      ))),
    }
  }
}

fn read_artifact<T: for<'de> Deserialize<'de>>(store: &Path, name: &str) -> Result<T> {
  let p = store.join(name);
  let text = fs::read_to_string(&p).map_err(|_| Error::Lookup {
    kind: "artifact",
    name: p.display().to_string(),
  })?;
  Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
  pub slope: Option<f64>,
  pub ci: Option<(f64, f64)>,
  pub h_min: f64,
  pub h_max: f64,
  pub replicates: usize,
  pub degenerate: bool,
}

/// Writes tidy long-format CSV/JSON under `<store>/plot/` for the selected
/// artifact families; returns the written paths relative to `store`.
pub fn emit_plot_data(store: &Path, selection: &[Selection]) -> Result<Vec<PathBuf>> {
  let mut s = Store::new(store)?;
  for sel in selection {
    match sel {
      Selection::Profiles => {
        let p: Profiles = read_artifact(store, "profiles.json")?;
        let mut w = csv::Writer::from_writer(s.create("plot/profiles.csv")?);
        w.write_record(["t", "r", "window", "value"])?;
        for e in &p.solution {
          let label = e.label();
          for (t, v) in e.profile.times.iter().zip(&e.profile.values) {
            w.write_record([&t.to_string(), &e.profile.r.to_string(), &label, &v.to_string()])?;
          }
        }
        w.flush()?;
        drop(w);
        let mut w = csv::Writer::from_writer(s.create("plot/kernel_paths.csv")?);
        w.write_record(["d", "r", "h", "right", "left", "to_zero"])?;
        for k in &p.kernel {
          for i in 0..k.hs.len() {
            w.write_record([
              k.d.to_string(),
              k.r.to_string(),
              k.hs[i].to_string(),
              k.right[i].to_string(),
              k.left[i].to_string(),
              k.to_zero[i].to_string(),
            ])?;
          }
        }
        w.flush()?;
      }
      Selection::Fits => {
        let f: ExponentFit = read_artifact(store, "fits.json")?;
        let hs = &f.hs;
        let sum = FitSummary {
          slope: f.slope,
          ci: f.ci,
          h_min: hs.iter().copied().fold(f64::INFINITY, f64::min),
          h_max: hs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
          replicates: f.replicates,
          degenerate: f.degenerate,
        };
        s.json("plot/fit.json", &sum)?;
      }
      Selection::Increments => {
        let f: ExponentFit = read_artifact(store, "fits.json")?;
        let mut w = csv::Writer::from_writer(s.create("plot/increments.csv")?);
        w.write_record(["h", "product_mean", "product_se", "forward_mean"])?;
        for i in 0..f.hs.len() {
          w.write_record([
            f.hs[i].to_string(),
            f.product_means[i].to_string(),
            f.product_se[i].to_string(),
            f.forward_means[i].to_string(),
          ])?;
        }
        w.flush()?;
      }
      Selection::Moments => {
        let m: MomentScan = read_artifact(store, "moments.json")?;
        let mut w = csv::Writer::from_writer(s.create("plot/moments.csv")?);
        w.write_record(["grid", "t", "x1", "x2", "mean", "se"])?;
        for (name, tab) in [("coarse", &m.coarse), ("fine", &m.fine)] {
          let nn = tab.nodes.len();
          for (k, t) in tab.times.iter().enumerate() {
            for (j, x) in tab.nodes.iter().enumerate() {
              w.write_record([
                name.to_string(),
                t.to_string(),
                x[0].to_string(),
                x[1].to_string(),
                tab.means[k * nn + j].to_string(),
                tab.se[k * nn + j].to_string(),
              ])?;
            }
          }
        }
        w.flush()?;
      }
    }
  }
  Ok(s.files)
}

#[cfg(test)]
mod tests {
  use super::*;

  fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.run.paths = 2;
    c.run.solver_replicates = 20;
    c.run.replicates = 200;
    c
  }

  #[test]
  fn commands_parse() {
    for n in Command::NAMES {
      assert_eq!(n.parse::<Command>().unwrap().to_string(), n);
    }
    assert!(matches!("plot".parse::<Command>(), Err(Error::Usage(_))));
  }

  #[test]
  fn empty_selection_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plot_data(dir.path(), &[]).unwrap().is_empty());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
  }

  #[test]
  fn missing_artifact_is_a_lookup_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = emit_plot_data(dir.path(), &[Selection::Fits]).unwrap_err();
    assert!(matches!(e, Error::Lookup { .. }), "{e}");
  }

  #[test]
  fn zero_sigma_simulation_stores_the_free_wave() {
    let mut c = small();
    c.equation.sigma = crate::solver::Sigma::Zero;
    let dir = tempfile::tempdir().unwrap();
    let s = run_command(Command::Simulate, &c, dir.path()).unwrap();
    assert!(s.pass());
    let mut r = csv::Reader::from_path(dir.path().join("paths/path_0000.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["t", "x1", "u", "level"]);
    for row in r.records() {
      let row = row.unwrap();
      let u: f64 = row[2].parse().unwrap();
      assert_eq!(u, 1.0);
    }
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config_hash, c.hash().unwrap());
    assert!(m.files.iter().any(|f| f.path == "paths/path_0001_manifest.json"));
  }

  #[test]
  fn simulate_is_byte_reproducible() {
    let c = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_command(Command::Simulate, &c, a.path()).unwrap();
    run_command(Command::Simulate, &c, b.path()).unwrap();
    let ma = fs::read(a.path().join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.path().join("manifest.json")).unwrap());
  }
}
