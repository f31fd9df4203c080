//! Experiment configuration: JSON with six blocks, every field defaulted.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::levy_noise::{check_assumption, Assumption, LevyMeasure, NoiseMode, Truncation};
use crate::sobolev::WindowFn;
use crate::solver::{Grid, InitialData, Problem, Sigma};

/// Levy measure registry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSpec {
  Stable { alpha: f64, c_plus: f64, c_minus: f64 },
  Symmetric { alpha: f64 },
  /// exp(-lambda |z|) |z|^(-1-alpha)
  Tempered { alpha: f64, lambda: f64 },
  Zero,
}

impl MeasureSpec {
  pub fn build(&self) -> Result<LevyMeasure> {
    match *self {
      Self::Stable { alpha, c_plus, c_minus } => LevyMeasure::stable(alpha, c_plus, c_minus),
      Self::Symmetric { alpha } => LevyMeasure::symmetric(alpha),
      Self::Tempered { alpha, lambda } => {
        if !(alpha > 0.0 && alpha < 2.0 && lambda > 0.0) {
          return Err(Error::Validation {
            field: "noise.measure".into(),
            constraint: format!("tempered measure needs 0 < alpha < 2 and lambda > 0, got {alpha}, {lambda}"),
          });
        }
        LevyMeasure::density(
          "tempered",
          Arc::new(move |z: f64| (-lambda * z.abs()).exp() * z.abs().powf(-1.0 - alpha)),
          alpha,
          f64::INFINITY,
        )
      }
      Self::Zero => Ok(LevyMeasure::zero()),
    }
  }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
  pub measure: MeasureSpec,
  pub epsilon: f64,
  /// Truncation level of the solver runs.
  pub level: f64,
  /// Levels of the stopping-time law and of patched paths.
  pub levels: Vec<f64>,
  pub eta: f64,
  pub mode: NoiseMode,
  /// Noise drift b; forced to the small-jump mean when p < 1.
  pub drift: Option<f64>,
  pub gaussian: bool,
  /// Moment exponents of the integrability assumption.
  pub p: f64,
  pub q: f64,
}

impl Default for NoiseConfig {
  fn default() -> Self {
    Self {
      measure: MeasureSpec::Symmetric { alpha: 1.5 },
      epsilon: 1e-2,
      level: 4.0,
      levels: vec![2.0, 4.0, 8.0],
      eta: 1.0,
      mode: NoiseMode::WithDrift,
      drift: None,
      gaussian: false,
      p: 2.0,
      q: 1.0,
    }
  }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquationConfig {
  pub d: usize,
  pub sigma: Sigma,
  pub initial: InitialData,
}

impl Default for EquationConfig {
  fn default() -> Self {
    Self {
      d: 1,
      sigma: Sigma::Linear {
        slope: 1.0,
        intercept: 0.0,
      },
      initial: InitialData::Constant { u0: 1.0, v0: 0.0 },
    }
  }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
  pub t_end: f64,
  /// Evaluation radius A.
  pub a: f64,
  /// Simulation radius R.
  pub r: f64,
  pub dt: f64,
  pub dx: f64,
}

impl Default for GridConfig {
  fn default() -> Self {
    Self {
      t_end: 1.0,
      a: 1.0,
      r: 2.0,
      dt: 1.0 / 16.0,
      dx: 1.0 / 16.0,
    }
  }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
  /// Sobolev indices for path profiles; the first drives the exponent fit.
  pub r: Vec<f64>,
  /// Increment lags in time steps.
  pub h_steps: Vec<usize>,
  /// Bump windows; empty means one window filling |x| <= A.
  pub windows: Vec<WindowFn>,
  pub moment_p: f64,
  pub sweep_points: usize,
  pub cone_level: u32,
  pub mc_samples: usize,
  pub jump_replicates: usize,
  pub fit_replicates: usize,
  pub bootstrap: usize,
  pub speed_replicates: usize,
}

impl Default for AnalysisConfig {
  fn default() -> Self {
    Self {
      r: vec![-1.5],
      h_steps: vec![1, 2, 4],
      windows: Vec::new(),
      moment_p: 2.0,
      sweep_points: 10_000,
      cone_level: 3,
      mc_samples: 200_000,
      jump_replicates: 100,
      fit_replicates: 1000,
      bootstrap: 1000,
      speed_replicates: 20,
    }
  }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
  pub seed: u64,
  /// Replicates of the noise-level Monte Carlo checks.
  pub replicates: usize,
  /// Replicates of the solver moment table (doubled on the refined grid).
  pub solver_replicates: usize,
  /// Stored solution paths of `simulate`.
  pub paths: usize,
  pub tolerance: f64,
  pub max_iters: usize,
}

impl Default for RunConfig {
  fn default() -> Self {
    Self {
      seed: 0,
      replicates: 10_000,
      solver_replicates: 1000,
      paths: 4,
      tolerance: 1e-6,
      max_iters: 400,
    }
  }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
  Csv,
  Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
  pub directory: String,
  pub formats: Vec<Format>,
}

impl Default for OutputConfig {
  fn default() -> Self {
    Self {
      directory: "levywave-out".into(),
      formats: vec![Format::Csv, Format::Json],
    }
  }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
  pub noise: NoiseConfig,
  pub equation: EquationConfig,
  pub grid: GridConfig,
  pub analysis: AnalysisConfig,
  pub run: RunConfig,
  pub output: OutputConfig,
}

fn invalid(field: &str, constraint: impl Into<String>) -> Error {
  Error::Validation {
    field: field.into(),
    constraint: constraint.into(),
  }
}

impl ExperimentConfig {
  pub fn from_json(text: &str) -> Result<Self> {
    let c: Self = serde_json::from_str(text)?;
    c.validate()?;
    Ok(c)
  }

  pub fn to_json(&self) -> Result<String> {
    Ok(serde_json::to_string_pretty(self)?)
  }

  /// SHA-256 of the compact serialization (defaults filled in).
  pub fn hash(&self) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
  }

  pub fn grid(&self) -> Result<Grid> {
    let g = &self.grid;
    Grid::new(self.equation.d, g.t_end, g.a, g.r, g.dt, g.dx)
  }

  pub fn assumption(&self) -> Result<Assumption> {
    check_assumption(&self.noise.measure.build()?, self.noise.p, self.noise.q, self.equation.d, self.noise.drift)
  }

  /// Solver problem at truncation level `level`.
  pub fn problem(&self, level: f64) -> Result<Problem> {
    let a = self.assumption()?;
    let n = &self.noise;
    let (mode, drift) = if a.mode == NoiseMode::NoDrift { (NoiseMode::NoDrift, a.drift) } else { (n.mode, a.drift) };
    Ok(Problem {
      grid: self.grid()?,
      init: self.equation.initial,
      sigma: self.equation.sigma,
      measure: n.measure.build()?,
      mode,
      drift,
      trunc: Truncation::new(level, n.eta)?,
      gaussian: n.gaussian,
      eps: n.epsilon,
    })
  }

  /// Configured windows, or one bump filling |x| <= A.
  pub fn windows(&self) -> Result<Vec<WindowFn>> {
    if self.analysis.windows.is_empty() {
      Ok(vec![WindowFn::new([0.0, 0.0], self.grid.a - 0.5 * self.grid.dx, 1.0)?])
    } else {
      Ok(self.analysis.windows.clone())
    }
  }

  pub fn validate(&self) -> Result<()> {
    let n = &self.noise;
    if !(n.epsilon > 0.0 && n.epsilon <= 1.0) {
      return Err(invalid("noise.epsilon", format!("need 0 < epsilon <= 1, got {}", n.epsilon)));
    }
    for (field, l) in std::iter::once(("noise.level", n.level)).chain(n.levels.iter().map(|&l| ("noise.levels", l))) {
      if !(l >= 1.0 && l.fract() == 0.0) {
        return Err(invalid(field, format!("truncation levels are integers >= 1, got {l}")));
      }
    }
    if n.levels.windows(2).any(|w| w[0] >= w[1]) {
      return Err(invalid("noise.levels", "levels must be strictly increasing"));
    }
    if !(n.eta > 0.0) {
      return Err(invalid("noise.eta", format!("need eta > 0, got {}", n.eta)));
    }
    let d = self.equation.d;
    if d != 1 && d != 2 {
      return Err(invalid("equation.d", format!("dimension must be 1 or 2, got {d}")));
    }
    n.measure.build().map_err(|e| invalid("noise.measure", e.to_string()))?;
    self.assumption().map_err(|e| invalid("noise", format!("integrability assumption fails: {e}")))?;
    let g = &self.grid;
    if g.r < g.a + g.t_end - 1e-12 {
      return Err(invalid(
        "grid.r",
        format!(
          "R = {} must be at least A + T = {}: by finite speed of propagation the solution on |x| <= A \
           depends on noise in |x| <= A + T",
          g.r,
          g.a + g.t_end
        ),
      ));
    }
    self.grid().map_err(|e| invalid("grid", e.to_string()))?;
    let a = &self.analysis;
    if a.r.is_empty() {
      return Err(invalid("analysis.r", "need at least one Sobolev index"));
    }
    let mut steps = a.h_steps.clone();
    steps.sort_unstable();
    steps.dedup();
    if steps.len() < 2 || steps[0] == 0 || *steps.last().unwrap() > 4 {
      return Err(invalid("analysis.h_steps", "need at least two distinct lags in 1..=4 time steps"));
    }
    for w in &a.windows {
      WindowFn::new(w.center, w.radius, w.smoothness).map_err(|e| invalid("analysis.windows", e.to_string()))?;
    }
    if !(a.moment_p > 0.0) {
      return Err(invalid("analysis.moment_p", "need p > 0"));
    }
    if a.jump_replicates == 0 || a.speed_replicates == 0 || a.sweep_points < 10 || a.mc_samples < 2 {
      return Err(invalid("analysis", "replicate and sample counts must be positive (sweep_points >= 10)"));
    }
    if a.fit_replicates < crate::sobolev::MIN_REPLICATES {
      return Err(invalid(
        "analysis.fit_replicates",
        format!("exponent fits need at least {} replicates", crate::sobolev::MIN_REPLICATES),
      ));
    }
    let r = &self.run;
    if r.replicates < 2 || r.solver_replicates < 2 {
      return Err(invalid("run.replicates", "need at least 2 replicates"));
    }
    if !(r.tolerance > 0.0) || r.max_iters == 0 {
      return Err(invalid("run.tolerance", "need tolerance > 0 and max_iters > 0"));
    }
    Ok(())
  }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
  let text = std::fs::read_to_string(path)?;
  ExperimentConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn minimal_config_gets_defaults() {
    let c = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(c.noise.epsilon, 1e-2);
    assert_eq!(c.run.replicates, 10_000);
    assert_eq!(c.grid.r, 2.0);
  }

  #[test]
  fn radius_below_cone_is_rejected() {
    let e = ExperimentConfig::from_json(r#"{"grid": {"t_end": 1, "a": 1, "r": 1.5}}"#).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("grid.r") && msg.contains("finite speed of propagation"), "{msg}");
  }

  #[test]
  fn round_trip_is_identity() {
    let text = r#"{"noise": {"measure": {"kind": "tempered", "alpha": 0.7, "lambda": 2.0}, "p": 2.0, "q": 1.0},
                   "equation": {"d": 2, "sigma": {"kind": "bounded-saturating", "a": 0.5, "b": 1.0}},
                   "analysis": {"windows": [{"center": [0.1, 0.0], "radius": 0.5}]}}"#;
    let err = ExperimentConfig::from_json(text).unwrap_err();
    assert!(err.to_string().contains("noise"), "{err}");
    let text = text.replace("\"p\": 2.0", "\"p\": 1.5");
    let a = ExperimentConfig::from_json(&text).unwrap();
    let b = ExperimentConfig::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
  }

  #[test]
  fn unknown_fields_and_kinds_are_named() {
    let e = ExperimentConfig::from_json(r#"{"grid": {"dy": 1}}"#).unwrap_err().to_string();
    assert!(e.contains("dy"), "{e}");
    let e = ExperimentConfig::from_json(r#"{"equation": {"sigma": {"kind": "cubic"}}}"#).unwrap_err().to_string();
    assert!(e.contains("cubic"), "{e}");
  }

  #[test]
  fn bad_fields_are_named() {
    for (text, field) in [
      (r#"{"noise": {"epsilon": 0}}"#, "noise.epsilon"),
      (r#"{"noise": {"levels": [4, 2]}}"#, "noise.levels"),
      (r#"{"noise": {"level": 2.5}}"#, "noise.level"),
      (r#"{"equation": {"d": 3}}"#, "equation.d"),
      (r#"{"analysis": {"h_steps": [1]}}"#, "analysis.h_steps"),
      (r#"{"noise": {"measure": {"kind": "symmetric", "alpha": 2.5}}}"#, "noise.measure"),
    ] {
      let e = ExperimentConfig::from_json(text).unwrap_err().to_string();
      assert!(e.contains(field), "{text}: {e}");
    }
  }

  #[test]
  fn problem_follows_config() {
    let c = ExperimentConfig::default();
    let p = c.problem(4.0).unwrap();
    assert_eq!(p.trunc.level, 4.0);
    assert_eq!(p.grid.lattice().unwrap().nx, 64);
    assert_eq!(c.windows().unwrap().len(), 1);
  }
}
