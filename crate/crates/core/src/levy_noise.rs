//! Levy measures, moment functionals, truncated noise sampling and the
//! exceedance stopping time.
//!
//! A realization stores two atom streams over a box window: small atoms with
//! eps < |z| <= 1 and all atoms with |z| > 1. The latter is split at run
//! time into the large band |z| <= N h(x) and the overflow band
//! |z| > N h(x), with h(x) = 1 + |x|^eta, so every truncation level is a
//! thinning of the same stream.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{diverge, param, Error, Result};
use crate::grid::{norm, Lattice};
use crate::quad::{adaptive, adaptive_inf, adaptive_log_inf, require, Tol};
use crate::rng::{stream, tile_index, Purpose, StreamKey};
use crate::special::{beta, unit_ball_volume};

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Density of a Levy measure on R \ {0} with declared integrability:
/// |z|^p is integrable near zero iff p > `small_index`, and |z|^q is
/// integrable at infinity iff q < `tail_index`.
#[derive(Clone)]
pub struct UserDensity {
  pub name: String,
  pub density: DensityFn,
  pub small_index: f64,
  pub tail_index: f64,
}

impl fmt::Debug for UserDensity {
  fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    f.debug_struct("UserDensity")
      .field("name", &self.name)
      .field("small_index", &self.small_index)
      .field("tail_index", &self.tail_index)
      .finish()
  }
}

#[derive(Debug, Clone)]
pub enum LevyMeasure {
  /// c_plus z^(-1-alpha) on z > 0 and c_minus |z|^(-1-alpha) on z < 0.
  Stable { alpha: f64, c_plus: f64, c_minus: f64 },
  Density(UserDensity),
}

impl LevyMeasure {
  pub fn stable(alpha: f64, c_plus: f64, c_minus: f64) -> Result<Self> {
    let m = Self::Stable {
      alpha,
      c_plus,
      c_minus,
    };
    m.validate()?;
    if !(c_plus + c_minus > 0.0) {
      return param("stable weights must have a positive sum");
    }
    Ok(m)
  }

  /// The zero measure (no jumps at all).
  pub fn zero() -> Self {
    Self::Stable {
      alpha: 1.0,
      c_plus: 0.0,
      c_minus: 0.0,
    }
  }

  /// User density with declared integrability indices. The Levy condition
  /// int (z^2 ^ 1) nu(dz) < inf is verified by quadrature.
  pub fn density(name: &str, density: DensityFn, small_index: f64, tail_index: f64) -> Result<Self> {
    let m = Self::Density(UserDensity {
      name: name.to_string(),
      density,
      small_index,
      tail_index,
    });
    m.validate()?;
    let near = m.band_abs_moment(0.0, 1.0, 2.0)?;
    let far = m.tail(1.0)?;
    if !(near.is_finite() && far.is_finite()) {
      return diverge(format!("int (z^2 ^ 1) nu(dz) for `{name}`"), "quadrature is not finite");
    }
    Ok(m)
  }

  /// Symmetric stable measure with c_plus = c_minus = 1.
  pub fn symmetric(alpha: f64) -> Result<Self> {
    Self::stable(alpha, 1.0, 1.0)
  }

  pub fn validate(&self) -> Result<()> {
    match self {
      Self::Stable {
        alpha,
        c_plus,
        c_minus,
      } => {
        if !(*alpha > 0.0 && *alpha < 2.0) {
          return param(format!("stable index must lie in (0, 2), got {alpha}"));
        }
        if !(*c_plus >= 0.0 && *c_minus >= 0.0) {
          return param("stable weights must be non-negative");
        }
      }
      Self::Density(u) => {
        if !(u.small_index < 2.0) {
          return param("density small index must be below 2 so that z^2 is integrable near 0");
        }
        if !(u.tail_index > 0.0) {
          return param("density tail index must be positive");
        }
      }
    }
    Ok(())
  }

  fn c(&self) -> f64 {
    match self {
      Self::Stable {
        c_plus, c_minus, ..
      } => c_plus + c_minus,
      Self::Density(_) => f64::NAN,
    }
  }

  /// nu(z) + nu(-z) for z > 0.
  fn radial(&self, z: f64) -> f64 {
    match self {
      Self::Stable {
        alpha,
        c_plus,
        c_minus,
      } => (c_plus + c_minus) * z.powf(-1.0 - alpha),
      Self::Density(u) => (u.density)(z) + (u.density)(-z),
    }
  }

  /// nu(z) - nu(-z) for z > 0.
  fn odd(&self, z: f64) -> f64 {
    match self {
      Self::Stable {
        alpha,
        c_plus,
        c_minus,
      } => (c_plus - c_minus) * z.powf(-1.0 - alpha),
      Self::Density(u) => (u.density)(z) - (u.density)(-z),
    }
  }

  /// Integral of g(|z|) w(|z|) over a < |z| <= b by log substitution.
  fn radial_quad(&self, a: f64, b: f64, odd: bool, g: impl Fn(f64) -> f64, what: &str) -> Result<f64> {
    let w = |z: f64| if odd { self.odd(z) } else { self.radial(z) };
    let f = |s: f64| {
      let z = s.exp();
      let v = g(z) * w(z) * z;
      if v.is_finite() {
        v
      } else {
        0.0
      }
    };
    let tol = Tol {
      abs: 1e-13,
      rel: 1e-10,
      max_panels: 4000,
    };
    let mut total = 0.0;
    let (la, lb) = (a.ln(), b.ln());
    match (a > 0.0, b.is_finite()) {
      (true, true) => total += require(adaptive(f, la, lb, &[], tol), what)?,
      (true, false) => total += require(adaptive_inf(f, la, tol), what)?,
      (false, true) => total += require(adaptive_inf(|s| f(-s), -lb, tol), what)?,
      (false, false) => {
        total += require(adaptive_inf(|s| f(-s), 0.0, tol), what)?;
        total += require(adaptive_inf(f, 0.0, tol), what)?;
      }
    }
    Ok(total)
  }

  /// Integral of |z|^k over a < |z| <= b (b may be infinite, a may be 0).
  pub fn band_abs_moment(&self, a: f64, b: f64, k: f64) -> Result<f64> {
    if !(0.0 <= a && a <= b) {
      return param(format!("band requires 0 <= a <= b, got ({a}, {b})"));
    }
    if a == b {
      return Ok(0.0);
    }
    let what = format!("|z|^{k} over ({a}, {b}]");
    match self {
      Self::Stable { alpha, .. } => {
        let c = self.c();
        if c == 0.0 {
          return Ok(0.0);
        }
        let e = k - alpha;
        if a == 0.0 && e <= 0.0 {
          return diverge(what, format!("needs k > alpha = {alpha} near zero"));
        }
        if b.is_infinite() && e >= 0.0 {
          return diverge(what, format!("needs k < alpha = {alpha} at infinity"));
        }
        if e.abs() < 1e-14 {
          return Ok(c * (b / a).ln());
        }
        let pa = if a == 0.0 { 0.0 } else { a.powf(e) };
        let pb = if b.is_infinite() { 0.0 } else { b.powf(e) };
        Ok(c * (pb - pa) / e)
      }
      Self::Density(u) => {
        if a == 0.0 && k <= u.small_index {
          return diverge(what, format!("needs k > {} near zero", u.small_index));
        }
        if b.is_infinite() && k >= u.tail_index {
          return diverge(what, format!("needs k < {} at infinity", u.tail_index));
        }
        self.radial_quad(a, b, false, |z| z.powf(k), &what)
      }
    }
  }

  /// nu(a < |z| <= b).
  pub fn band_mass(&self, a: f64, b: f64) -> Result<f64> {
    self.band_abs_moment(a, b, 0.0)
  }

  /// nu(|z| > u).
  pub fn tail(&self, u: f64) -> Result<f64> {
    self.band_mass(u, f64::INFINITY)
  }

  /// Signed first moment over a < |z| <= b.
  pub fn band_first(&self, a: f64, b: f64) -> Result<f64> {
    if a == b {
      return Ok(0.0);
    }
    let what = format!("z over ({a}, {b}]");
    match self {
      Self::Stable {
        alpha,
        c_plus,
        c_minus,
      } => {
        let s = c_plus - c_minus;
        if s == 0.0 {
          return Ok(0.0);
        }
        let e = 1.0 - alpha;
        if a == 0.0 && e <= 0.0 {
          return diverge(what, "first moment diverges near zero for alpha >= 1");
        }
        if b.is_infinite() && e >= 0.0 {
          return diverge(what, "first moment diverges at infinity for alpha <= 1");
        }
        if e.abs() < 1e-14 {
          return Ok(s * (b / a).ln());
        }
        let pa = if a == 0.0 { 0.0 } else { a.powf(e) };
        let pb = if b.is_infinite() { 0.0 } else { b.powf(e) };
        Ok(s * (pb - pa) / e)
      }
      Self::Density(u) => {
        if a == 0.0 && u.small_index >= 1.0 {
          return diverge(what, "first moment diverges near zero");
        }
        if b.is_infinite() && u.tail_index <= 1.0 {
          return diverge(what, "first moment diverges at infinity");
        }
        self.radial_quad(a, b, true, |z| z, &what)
      }
    }
  }

  /// Integral of |z|^p over |z| <= 1.
  pub fn gamma1(&self, p: f64) -> Result<f64> {
    self.band_abs_moment(0.0, 1.0, p)
  }

  /// Integral of |z|^q over |z| > 1.
  pub fn gamma2(&self, q: f64) -> Result<f64> {
    self.band_abs_moment(1.0, f64::INFINITY, q)
  }

  /// Prepared mark sampler on the band a < |z| <= b.
  pub fn band_sampler(&self, a: f64, b: f64) -> Result<BandSampler> {
    if !(0.0 < a && a < b) {
      return param(format!("sampling band needs 0 < a < b, got ({a}, {b})"));
    }
    let mass = self.band_mass(a, b)?;
    match self {
      Self::Stable {
        alpha,
        c_plus,
        c_minus,
      } => Ok(BandSampler {
        mass,
        kind: SamplerKind::Stable {
          alpha: *alpha,
          a_pow: a.powf(-alpha),
          b_pow: if b.is_finite() { b.powf(-alpha) } else { 0.0 },
          p_plus: if c_plus + c_minus > 0.0 {
            c_plus / (c_plus + c_minus)
          } else {
            0.5
          },
        },
      }),
      Self::Density(u) => {
        if !b.is_finite() {
          return param("density marks can only be sampled on bounded bands");
        }
        let n = 1024;
        let (la, lb) = (a.ln(), b.ln());
        let s: Vec<f64> = (0..=n).map(|i| la + (lb - la) * i as f64 / n as f64).collect();
        let mut tables = Vec::new();
        let mut masses = [0.0; 2];
        for (k, sign) in [1.0, -1.0].iter().enumerate() {
          let mut cdf = vec![0.0];
          let mut acc = 0.0;
          for w in s.windows(2) {
            let r = adaptive(
              |x: f64| {
                let z = x.exp();
                (u.density)(sign * z) * z
              },
              w[0],
              w[1],
              &[],
              Tol::rel(1e-10),
            );
            acc += r.value;
            cdf.push(acc);
          }
          masses[k] = acc;
          tables.push(cdf);
        }
        let total = masses[0] + masses[1];
        Ok(BandSampler {
          mass,
          kind: SamplerKind::Table {
            s,
            plus: tables[0].clone(),
            minus: tables[1].clone(),
            p_plus: if total > 0.0 { masses[0] / total } else { 0.5 },
          },
        })
      }
    }
  }
}

#[derive(Debug, Clone)]
enum SamplerKind {
  Stable {
    alpha: f64,
    a_pow: f64,
    b_pow: f64,
    p_plus: f64,
  },
  Table {
    s: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
    p_plus: f64,
  },
}

/// Mark sampler on one band, with the band mass cached.
#[derive(Debug, Clone)]
pub struct BandSampler {
  pub mass: f64,
  kind: SamplerKind,
}

impl BandSampler {
  pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
    match &self.kind {
      SamplerKind::Stable {
        alpha,
        a_pow,
        b_pow,
        p_plus,
      } => {
        let u: f64 = rng.random();
        let m = (a_pow - u * (a_pow - b_pow)).powf(-1.0 / alpha);
        if rng.random::<f64>() < *p_plus {
          m
        } else {
          -m
        }
      }
      SamplerKind::Table {
        s,
        plus,
        minus,
        p_plus,
      } => {
        let positive = rng.random::<f64>() < *p_plus;
        let cdf = if positive { plus } else { minus };
        let target = rng.random::<f64>() * cdf[cdf.len() - 1];
        let i = cdf.partition_point(|&c| c < target).clamp(1, cdf.len() - 1);
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let f = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        let m = (s[i - 1] + f * (s[i] - s[i - 1])).exp();
        if positive {
          m
        } else {
          -m
        }
      }
    }
  }
}

/// How small jumps enter the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
  /// Compensated small jumps plus the drift b |A|.
  WithDrift,
  /// Uncompensated small jumps and no drift term.
  NoDrift,
}

/// Validated moment condition with its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumption {
  pub p: f64,
  pub q: f64,
  pub gamma1: f64,
  pub gamma2: f64,
  pub drift: f64,
  pub mode: NoiseMode,
}

/// Checks the (p, q) moment condition for `measure` in dimension d. For
/// p < 1 the drift is forced to the first moment of the small jumps; a
/// supplied drift that disagrees is rejected.
pub fn check_assumption(
  measure: &LevyMeasure,
  p: f64,
  q: f64,
  d: usize,
  drift: Option<f64>,
) -> Result<Assumption> {
  measure.validate()?;
  if !(q > 0.0 && q <= p) {
    return param(format!("moment exponents need 0 < q <= p, got p = {p}, q = {q}"));
  }
  if d == 2 && p >= 2.0 {
    return param(format!("dimension 2 needs p < 2, got {p}"));
  }
  let gamma1 = measure.gamma1(p)?;
  let gamma2 = measure.gamma2(q)?;
  let (drift, mode) = if p < 1.0 {
    let b = measure.band_first(0.0, 1.0)?;
    if let Some(given) = drift {
      if (given - b).abs() > 1e-9 * b.abs().max(1.0) {
        return param(format!(
          "with p < 1 the drift must equal the small-jump first moment {b}, got {given}"
        ));
      }
    }
    (b, NoiseMode::NoDrift)
  } else {
    (drift.unwrap_or(0.0), NoiseMode::WithDrift)
  };
  Ok(Assumption {
    p,
    q,
    gamma1,
    gamma2,
    drift,
    mode,
  })
}

/// Truncation level N and cap profile h(x) = 1 + |x|^eta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
  pub level: f64,
  pub eta: f64,
}

impl Truncation {
  pub fn new(level: f64, eta: f64) -> Result<Self> {
    if !(level >= 1.0 && level.fract() == 0.0) {
      return param(format!("truncation level must be an integer >= 1, got {level}"));
    }
    if !(eta > 0.0) {
      return param(format!("cap exponent must be positive, got {eta}"));
    }
    Ok(Self { level, eta })
  }

  pub fn cap(&self, r: f64) -> f64 {
    self.level * (1.0 + r.powf(self.eta))
  }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialDomain {
  Whole,
  Ball(f64),
  Box(f64),
}

/// Rate of overflow atoms per unit time over a spatial domain.
pub fn exceedance_rate(
  measure: &LevyMeasure,
  trunc: &Truncation,
  d: usize,
  domain: SpatialDomain,
) -> Result<f64> {
  let shell = |r: f64| if d == 1 { 2.0 } else { 2.0 * std::f64::consts::PI * r };
  let tail = |r: f64| measure.tail(trunc.cap(r)).unwrap_or(f64::NAN);
  let radial = |rmax: f64| -> Result<f64> {
    let f = |r: f64| tail(r) * shell(r);
    let tol = Tol::rel(1e-11);
    let r = if rmax.is_finite() {
      adaptive(f, 0.0, rmax, &[1.0], tol)
    } else {
      let head = adaptive(f, 0.0, 1.0, &[], tol);
      let rest = adaptive_log_inf(f, 1.0, tol);
      crate::quad::QuadResult {
        value: head.value + rest.value,
        error: head.error + rest.error,
        converged: head.converged && rest.converged,
        evals: head.evals + rest.evals,
      }
    };
    require(r, "exceedance rate")
  };
  match domain {
    SpatialDomain::Whole => {
      let index = match measure {
        LevyMeasure::Stable { alpha, .. } => *alpha,
        LevyMeasure::Density(u) => u.tail_index,
      };
      if index * trunc.eta <= d as f64 {
        return diverge(
          "exceedance rate over the whole space",
          format!("needs tail index * eta > d, got {index} * {} <= {d}", trunc.eta),
        );
      }
      radial(f64::INFINITY)
    }
    SpatialDomain::Ball(r) => radial(r),
    SpatialDomain::Box(r) => {
      if d == 1 {
        return radial(r);
      }
      let inner = |x: f64| {
        adaptive(|y: f64| tail(x.hypot(y)), 0.0, r, &[], Tol::rel(1e-11)).value
      };
      Ok(4.0 * require(adaptive(inner, 0.0, r, &[], Tol::rel(1e-10)), "box exceedance")?)
    }
  }
}

/// Closed form c w_d N^-alpha B(alpha - d/eta, d/eta + 1) of the whole-space
/// exceedance rate of a stable measure.
pub fn stable_exceedance_rate(alpha: f64, c: f64, trunc: &Truncation, d: usize) -> Result<f64> {
  let k = d as f64 / trunc.eta;
  if alpha <= k {
    return diverge("stable exceedance rate", format!("needs alpha * eta > d ({alpha} <= {k})"));
  }
  Ok(c * unit_ball_volume(d) * trunc.level.powf(-alpha) * beta(alpha - k, k + 1.0))
}

/// P(tau_N <= t) for a constant exceedance rate.
pub fn exceedance_probability(rate: f64, t: f64) -> f64 {
  -(-rate * t).exp_m1()
}

/// One jump atom. `x[1]` is unused in dimension 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
  pub t: f64,
  pub x: [f64; 2],
  pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
  Small,
  Large,
  Overflow,
}

impl Band {
  pub fn label(self) -> &'static str {
    match self {
      Band::Small => "small",
      Band::Large => "large",
      Band::Overflow => "overflow",
    }
  }

  fn parse(s: &str) -> Result<Self> {
    match s {
      "small" => Ok(Band::Small),
      "large" => Ok(Band::Large),
      "overflow" => Ok(Band::Overflow),
      _ => Err(Error::Lookup {
        kind: "band",
        name: s.into(),
      }),
    }
  }
}

/// Box window [0, T] x [-R, R]^d tiled into cubes of side `tile`; each tile
/// draws from its own stream so enlarging the window leaves existing atoms
/// untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
  pub d: usize,
  pub t_end: f64,
  pub radius: f64,
  pub tile: f64,
}

impl Window {
  pub fn new(d: usize, t_end: f64, radius: f64) -> Result<Self> {
    if d != 1 && d != 2 {
      return param(format!("dimension must be 1 or 2, got {d}"));
    }
    if !(t_end > 0.0 && radius > 0.0) {
      return param("window extents must be positive");
    }
    Ok(Self {
      d,
      t_end,
      radius,
      tile: 0.5,
    })
  }

  pub fn volume(&self) -> f64 {
    self.t_end * (2.0 * self.radius).powi(self.d as i32)
  }

  pub fn contains(&self, a: &Atom) -> bool {
    a.t > 0.0
      && a.t <= self.t_end
      && a.x[0].abs() <= self.radius
      && (self.d == 1 || a.x[1].abs() <= self.radius)
  }

  /// Whether the backward light cone of (t, x) lies in the window.
  pub fn covers_cone(&self, t: f64, x: &[f64; 2]) -> bool {
    t <= self.t_end + 1e-12
      && x[0].abs() + t <= self.radius + 1e-12
      && (self.d == 1 || x[1].abs() + t <= self.radius + 1e-12)
  }

  pub fn sample_atoms(
    &self,
    sampler: &BandSampler,
    seed: u64,
    replicate: u64,
    purpose: Purpose,
  ) -> Result<Vec<Atom>> {
    let mut out = Vec::new();
    if sampler.mass == 0.0 {
      return Ok(out);
    }
    let tile = self.tile;
    let nt = (self.t_end / tile).ceil() as i64;
    let lo = (-self.radius / tile).floor() as i64;
    let hi = (self.radius / tile).ceil() as i64;
    let cube = tile.powi(1 + self.d as i32);
    let pois = Poisson::new(cube * sampler.mass).map_err(|e| Error::Parameter(e.to_string()))?;
    let ys: Vec<i64> = if self.d == 1 { vec![0] } else { (lo..hi).collect() };
    for ti in 0..nt {
      for xi in lo..hi {
        for &yi in &ys {
          let key = StreamKey::new(replicate, purpose).with_tile(tile_index(&[ti, xi, yi]));
          let mut rng = stream(seed, key);
          let n = pois.sample(&mut rng) as usize;
          for _ in 0..n {
            let t = (ti as f64 + rng.random::<f64>()) * tile;
            let x0 = (xi as f64 + rng.random::<f64>()) * tile;
            let x1 = if self.d == 2 {
              (yi as f64 + rng.random::<f64>()) * tile
            } else {
              0.0
            };
            let z = sampler.sample(&mut rng);
            let a = Atom { t, x: [x0, x1], z };
            if self.contains(&a) {
              out.push(a);
            }
          }
        }
      }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(out)
  }
}

/// One replicate of the truncated noise on a window.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
  pub window: Window,
  pub epsilon: f64,
  pub seed: u64,
  pub replicate: u64,
  pub small: Vec<Atom>,
  /// Every atom with |z| > 1, before splitting by a truncation level.
  pub big: Vec<Atom>,
}

impl NoiseRealization {
  pub fn sample(
    measure: &LevyMeasure,
    window: Window,
    epsilon: f64,
    seed: u64,
    replicate: u64,
  ) -> Result<Self> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
      return param(format!("small-jump cutoff must lie in (0, 1], got {epsilon}"));
    }
    // eps = 1 leaves the small band empty
    let small = if epsilon < 1.0 {
      window.sample_atoms(&measure.band_sampler(epsilon, 1.0)?, seed, replicate, Purpose::SmallJumps)?
    } else {
      Vec::new()
    };
    let big = match measure {
      LevyMeasure::Stable { .. } => {
        window.sample_atoms(&measure.band_sampler(1.0, f64::INFINITY)?, seed, replicate, Purpose::BigJumps)?
      }
      LevyMeasure::Density(u) => {
        // Densities are sampled on a bounded band; report the neglected tail
        // mass through a parameter error when it is not negligible.
        let top = 1e6;
        let rest = measure.tail(top)?;
        if rest * window.volume() > 1e-9 {
          return param(format!(
            "density `{}` has tail mass {rest} beyond {top}; cannot sample its big jumps exactly",
            u.name
          ));
        }
        window.sample_atoms(&measure.band_sampler(1.0, top)?, seed, replicate, Purpose::BigJumps)?
      }
    };
    Ok(Self {
      window,
      epsilon,
      seed,
      replicate,
      small,
      big,
    })
  }

  /// Noise with no atoms.
  pub fn empty(window: Window, epsilon: f64) -> Self {
    Self {
      window,
      epsilon,
      seed: 0,
      replicate: 0,
      small: Vec::new(),
      big: Vec::new(),
    }
  }

  fn is_large(&self, a: &Atom, trunc: &Truncation) -> bool {
    a.z.abs() <= trunc.cap(norm(self.window.d, &a.x))
  }

  pub fn large(&self, trunc: &Truncation) -> Vec<Atom> {
    self.big.iter().copied().filter(|a| self.is_large(a, trunc)).collect()
  }

  pub fn overflow(&self, trunc: &Truncation) -> Vec<Atom> {
    self.big.iter().copied().filter(|a| !self.is_large(a, trunc)).collect()
  }

  /// Time of the earliest overflow atom inside the window, or +inf.
  pub fn stopping_time(&self, trunc: &Truncation) -> f64 {
    stopping_time(&self.overflow(trunc))
  }

  /// Labelled atoms for a truncation level, sorted by time.
  pub fn jump_set(&self, trunc: &Truncation) -> JumpSet {
    let mut atoms: Vec<(Atom, Band)> = self.small.iter().map(|a| (*a, Band::Small)).collect();
    for a in &self.big {
      let band = if self.is_large(a, trunc) {
        Band::Large
      } else {
        Band::Overflow
      };
      atoms.push((*a, band));
    }
    atoms.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
    JumpSet {
      d: self.window.d,
      atoms,
    }
  }

  /// Per-cell small-jump increments on a lattice inside the window. In
  /// with-drift mode the compensator |cell| * int_{eps<|z|<=1} z nu is
  /// subtracted. With `gaussian` set, each cell also receives a normal
  /// variable standing in for the jumps below the cutoff.
  pub fn cell_increments(
    &self,
    lattice: &Lattice,
    measure: &LevyMeasure,
    mode: NoiseMode,
    gaussian: bool,
  ) -> Result<Vec<f64>> {
    if lattice.d != self.window.d
      || lattice.radius > self.window.radius + 1e-12
      || lattice.t_end() > self.window.t_end + 1e-12
    {
      return Err(Error::Coverage(format!(
        "lattice (T = {}, R = {}) exceeds the noise window (T = {}, R = {})",
        lattice.t_end(),
        lattice.radius,
        self.window.t_end,
        self.window.radius
      )));
    }
    let pts = lattice.points();
    let mut out = vec![0.0; lattice.nt * pts];
    for a in &self.small {
      if let Some((m, i)) = lattice.cell_of(a.t, &a.x) {
        out[m * pts + i] += a.z;
      }
    }
    let vol = lattice.cell_volume();
    let shift = match mode {
      NoiseMode::WithDrift => vol * measure.band_first(self.epsilon, 1.0)?,
      NoiseMode::NoDrift => 0.0,
    };
    if shift != 0.0 {
      out.iter_mut().for_each(|v| *v -= shift);
    }
    if gaussian {
      let var = vol * measure.band_abs_moment(0.0, self.epsilon, 2.0)?;
      let mean = match mode {
        NoiseMode::WithDrift => 0.0,
        NoiseMode::NoDrift => vol * measure.band_first(0.0, self.epsilon)?,
      };
      let normal = Normal::new(mean, var.sqrt()).map_err(|e| Error::Parameter(e.to_string()))?;
      // one stream per cell, keyed by absolute cell indices, so the field
      // restricted to a sub-box does not depend on the box
      let (n, h) = (lattice.nx, lattice.half());
      for (c, v) in out.iter_mut().enumerate() {
        let (m, i) = (c / pts, c % pts);
        let (a0, a1) = if lattice.d == 1 { (i as i64 - h, 0) } else { ((i / n) as i64 - h, (i % n) as i64 - h) };
        let key = StreamKey::new(self.replicate, Purpose::Gaussian)
          .with_tile(tile_index(&[m as i64, a0, a1, (lattice.dx * 1e9).round() as i64]));
        let mut rng: ChaCha8Rng = stream(self.seed, key);
        *v += normal.sample(&mut rng);
      }
    }
    Ok(out)
  }
}

pub fn stopping_time(overflow: &[Atom]) -> f64 {
  overflow.iter().map(|a| a.t).fold(f64::INFINITY, f64::min)
}

/// Exact sample of the overflow atoms over the whole space for a stable
/// measure: the magnitude is N / V with V ~ Beta(alpha - d/eta, d/eta + 1)
/// and the position is uniform in the ball |x| < (|z|/N - 1)^(1/eta).
pub fn sample_overflow_whole(
  measure: &LevyMeasure,
  trunc: &Truncation,
  d: usize,
  t_end: f64,
  seed: u64,
  replicate: u64,
) -> Result<Vec<Atom>> {
  let LevyMeasure::Stable {
    alpha,
    c_plus,
    c_minus,
  } = measure
  else {
    return param("whole-space overflow sampling needs a stable measure");
  };
  let c = c_plus + c_minus;
  let rate = stable_exceedance_rate(*alpha, c, trunc, d)?;
  let mut rng = stream(seed, StreamKey::new(replicate, Purpose::Overflow));
  if rate == 0.0 {
    return Ok(Vec::new());
  }
  let k = d as f64 / trunc.eta;
  let bdist = Beta::new(alpha - k, k + 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
  let n = Poisson::new(rate * t_end)
    .map_err(|e| Error::Parameter(e.to_string()))?
    .sample(&mut rng) as usize;
  let mut atoms = Vec::with_capacity(n);
  for _ in 0..n {
    let t = rng.random::<f64>() * t_end;
    let v: f64 = bdist.sample(&mut rng);
    let m = trunc.level / v;
    let rho = (m / trunc.level - 1.0).max(0.0).powf(1.0 / trunc.eta);
    let x = if d == 1 {
      [rho * (2.0 * rng.random::<f64>() - 1.0), 0.0]
    } else {
      let r = rho * rng.random::<f64>().sqrt();
      let th = 2.0 * std::f64::consts::PI * rng.random::<f64>();
      [r * th.cos(), r * th.sin()]
    };
    let z = if rng.random::<f64>() * c < *c_plus { m } else { -m };
    atoms.push(Atom { t, x, z });
  }
  atoms.sort_by(|a, b| a.t.total_cmp(&b.t));
  Ok(atoms)
}

/// Atoms tagged with their band, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSet {
  pub d: usize,
  pub atoms: Vec<(Atom, Band)>,
}

impl JumpSet {
  pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if self.d == 1 {
      wr.write_record(["t", "x1", "z", "band"])?;
    } else {
      wr.write_record(["t", "x1", "x2", "z", "band"])?;
    }
    for (a, b) in &self.atoms {
      let mut rec = vec![a.t.to_string(), a.x[0].to_string()];
      if self.d == 2 {
        rec.push(a.x[1].to_string());
      }
      rec.push(a.z.to_string());
      rec.push(b.label().to_string());
      wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
  }

  pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let d = match headers.len() {
      4 => 1,
      5 => 2,
      n => return param(format!("jump set needs 4 or 5 columns, found {n}")),
    };
    let num = |s: &str| -> Result<f64> {
      s.parse::<f64>()
        .map_err(|e| Error::Parameter(format!("bad number `{s}`: {e}")))
    };
    let mut atoms = Vec::new();
    for rec in rd.records() {
      let rec = rec?;
      let t = num(&rec[0])?;
      let x0 = num(&rec[1])?;
      let (x1, zi) = if d == 2 { (num(&rec[2])?, 3) } else { (0.0, 2) };
      let z = num(&rec[zi])?;
      let band = Band::parse(&rec[zi + 1])?;
      atoms.push((Atom { t, x: [x0, x1], z }, band));
    }
    Ok(Self { d, atoms })
  }
}

#[cfg(test)]
mod tests {
  use super::*;

  fn sym(alpha: f64) -> LevyMeasure {
    LevyMeasure::symmetric(alpha).unwrap()
  }

  #[test]
  fn stable_closed_forms() {
    let m = sym(1.5);
    assert!((m.gamma1(2.0).unwrap() - 4.0).abs() < 1e-14);
    assert!((m.gamma2(1.0).unwrap() - 4.0).abs() < 1e-14);
    assert!((m.tail(1.0).unwrap() - 4.0 / 3.0).abs() < 1e-14);
    // band second moment with eps = 0.1: 4 (1 - 0.1^0.5)
    let v = m.band_abs_moment(0.1, 1.0, 2.0).unwrap();
    assert!((v - 2.735_088_935_932_648).abs() < 1e-12, "{v}");
  }

  #[test]
  fn divergences_reported() {
    let m = sym(1.5);
    assert!(matches!(m.gamma1(1.4), Err(Error::Divergence { .. })));
    assert!(matches!(m.gamma2(1.6), Err(Error::Divergence { .. })));
    assert!(matches!(
      check_assumption(&m, 1.6, 1.0, 2, None),
      Ok(Assumption {
        mode: NoiseMode::WithDrift,
        ..
      })
    ));
    assert!(check_assumption(&m, 2.0, 1.0, 2, None).is_err());
    assert!(check_assumption(&m, 1.0, 1.2, 1, None).is_err());
  }

  #[test]
  fn no_drift_mode_forces_drift() {
    let m = LevyMeasure::stable(0.5, 2.0, 1.0).unwrap();
    let a = check_assumption(&m, 0.8, 0.3, 1, None).unwrap();
    assert_eq!(a.mode, NoiseMode::NoDrift);
    assert!((a.drift - 1.0 / 0.5).abs() < 1e-14);
    assert!(check_assumption(&m, 0.8, 0.3, 1, Some(0.0)).is_err());
    assert!(check_assumption(&m, 0.8, 0.3, 1, Some(2.0)).is_ok());
  }

  fn tempered() -> LevyMeasure {
    LevyMeasure::density(
      "tempered",
      Arc::new(|z: f64| (-z.abs()).exp() * z.abs().powf(-1.7)),
      0.7,
      f64::INFINITY,
    )
    .unwrap()
  }

  #[test]
  fn density_quadrature_matches_stable() {
    let d = LevyMeasure::Density(UserDensity {
      name: "stable-as-density".into(),
      density: Arc::new(|z: f64| z.abs().powf(-2.5)),
      small_index: 1.5,
      tail_index: 1.5,
    });
    let s = sym(1.5);
    for (a, b, k) in [(0.0, 1.0, 2.0), (1.0, f64::INFINITY, 1.0), (0.1, 3.0, 0.0)] {
      let x = d.band_abs_moment(a, b, k).unwrap();
      let y = s.band_abs_moment(a, b, k).unwrap();
      assert!((x - y).abs() < 1e-8 * y, "{a} {b} {k}: {x} vs {y}");
    }
    assert!(matches!(d.gamma1(1.5), Err(Error::Divergence { .. })));
    assert!(tempered().gamma2(3.0).is_ok());
  }

  #[test]
  fn exceedance_rate_closed_form() {
    let m = sym(1.5);
    let tr = Truncation::new(4.0, 1.0).unwrap();
    let closed = stable_exceedance_rate(1.5, 2.0, &tr, 1).unwrap();
    assert!((closed - 2.0 / 3.0).abs() < 1e-12);
    let quad = exceedance_rate(&m, &tr, 1, SpatialDomain::Whole).unwrap();
    assert!((quad - closed).abs() < 1e-9, "{quad}");
    let tr2 = Truncation::new(2.0, 2.0).unwrap();
    let closed = stable_exceedance_rate(1.5, 2.0, &tr2, 2).unwrap();
    let quad = exceedance_rate(&m, &tr2, 2, SpatialDomain::Whole).unwrap();
    assert!((quad - closed).abs() < 1e-8 * closed, "{quad} {closed}");
    assert!(exceedance_rate(&m, &Truncation::new(2.0, 1.0).unwrap(), 2, SpatialDomain::Whole).is_err());
    let ball = exceedance_rate(&m, &tr2, 2, SpatialDomain::Ball(1.0)).unwrap();
    let bx = exceedance_rate(&m, &tr2, 2, SpatialDomain::Box(1.0)).unwrap();
    assert!(ball < bx && bx < closed);
  }

  #[test]
  fn tiles_are_stable_under_enlargement() {
    let m = sym(1.5);
    let w1 = Window::new(1, 1.0, 2.0).unwrap();
    let w2 = Window::new(1, 1.0, 4.0).unwrap();
    let a = NoiseRealization::sample(&m, w1, 0.05, 11, 3).unwrap();
    let b = NoiseRealization::sample(&m, w2, 0.05, 11, 3).unwrap();
    let inner: Vec<Atom> = b.small.iter().copied().filter(|x| w1.contains(x)).collect();
    assert_eq!(a.small, inner);
    let inner: Vec<Atom> = b.big.iter().copied().filter(|x| w1.contains(x)).collect();
    assert_eq!(a.big, inner);
  }

  #[test]
  fn split_partitions_big_stream() {
    let m = sym(1.5);
    let w = Window::new(2, 1.0, 2.0).unwrap();
    let r = NoiseRealization::sample(&m, w, 0.1, 5, 0).unwrap();
    for n in [1.0, 2.0, 8.0] {
      let tr = Truncation::new(n, 1.0).unwrap();
      assert_eq!(r.large(&tr).len() + r.overflow(&tr).len(), r.big.len());
    }
    let t2 = r.stopping_time(&Truncation::new(2.0, 1.0).unwrap());
    let t8 = r.stopping_time(&Truncation::new(8.0, 1.0).unwrap());
    assert!(t2 <= t8);
  }

  #[test]
  fn jumpset_csv_round_trip() {
    let m = sym(1.2);
    for d in [1, 2] {
      let w = Window::new(d, 0.5, 1.0).unwrap();
      let r = NoiseRealization::sample(&m, w, 0.2, 9, 1).unwrap();
      let js = r.jump_set(&Truncation::new(2.0, 1.0).unwrap());
      let mut buf = Vec::new();
      js.write_csv(&mut buf).unwrap();
      let back = JumpSet::read_csv(buf.as_slice()).unwrap();
      assert_eq!(js, back);
    }
  }

  #[test]
  fn density_sampler_band() {
    let m = tempered();
    let s = m.band_sampler(0.1, 1.0).unwrap();
    let mut rng = stream(1, StreamKey::new(0, Purpose::Oracle));
    let n = 20000;
    let mut acc = 0.0;
    for _ in 0..n {
      let z: f64 = s.sample(&mut rng);
      assert!(z.abs() > 0.1 && z.abs() <= 1.0);
      acc += z * z;
    }
    let want = m.band_abs_moment(0.1, 1.0, 2.0).unwrap() / s.mass;
    assert!((acc / n as f64 - want).abs() < 0.03 * want);
  }

  #[test]
  fn constructor_preconditions() {
    assert!(LevyMeasure::stable(1.5, 0.0, 0.0).is_err());
    assert!(LevyMeasure::stable(2.0, 1.0, 1.0).is_err());
    assert!(LevyMeasure::stable(0.0, 1.0, 1.0).is_err());
    assert!(Truncation::new(2.5, 1.0).is_err());
    assert!(Truncation::new(0.0, 1.0).is_err());
    // z^2 is not integrable near zero for this density
    let bad = LevyMeasure::density("heavy", Arc::new(|z: f64| z.abs().powf(-3.2)), 2.2, 2.2);
    assert!(bad.is_err());
    let w = Window::new(1, 1.0, 1.0).unwrap();
    let m = sym(1.5);
    assert!(NoiseRealization::sample(&m, w, 0.0, 1, 0).is_err());
    assert!(NoiseRealization::sample(&m, w, 1.5, 1, 0).is_err());
  }

  #[test]
  fn unit_cutoff_gives_zero_field() {
    let m = sym(1.5);
    let w = Window::new(1, 1.0, 1.0).unwrap();
    let r = NoiseRealization::sample(&m, w, 1.0, 4, 0).unwrap();
    assert!(r.small.is_empty());
    let lat = Lattice::new(1, 1.0, 1.0, 0.25, 0.25).unwrap();
    let inc = r.cell_increments(&lat, &m, NoiseMode::WithDrift, false).unwrap();
    assert!(inc.iter().all(|&v| v == 0.0));
  }

  #[test]
  fn large_jump_count_mean() {
    // d = 1, T = 1, |x| <= 1: mean count 2 nu(|z| > 1) = 8/3
    let m = sym(1.5);
    let w = Window::new(1, 1.0, 1.0).unwrap();
    let n = 10_000;
    let counts: Vec<f64> = (0..n)
      .map(|rep| NoiseRealization::sample(&m, w, 1.0, 77, rep).unwrap().big.len() as f64)
      .collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - 8.0 / 3.0).abs() < 3.0 * se, "{mean} {se}");
  }

  #[test]
  fn large_marks_follow_restricted_measure() {
    let (alpha, top) = (1.5f64, 8.0f64);
    let s = LevyMeasure::stable(alpha, 2.0, 1.0).unwrap().band_sampler(1.0, top).unwrap();
    let mut rng = stream(5, StreamKey::new(0, Purpose::Oracle));
    let n = 10_000;
    let mut zs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
    let pos = zs.iter().filter(|z| **z > 0.0).count() as f64 / n as f64;
    assert!((pos - 2.0 / 3.0).abs() < 3.0 * (2.0f64 / 9.0 / n as f64).sqrt());
    zs.iter_mut().for_each(|z| *z = z.abs());
    zs.sort_by(f64::total_cmp);
    let cdf = |m: f64| (1.0 - m.powf(-alpha)) / (1.0 - top.powf(-alpha));
    let ks = zs
      .iter()
      .enumerate()
      .map(|(i, &m)| {
        let f = cdf(m);
        (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
      })
      .fold(0.0, f64::max);
    // 1% critical value of the Kolmogorov distribution
    assert!(ks < 1.63 / (n as f64).sqrt(), "{ks}");
  }

  #[test]
  fn small_cell_variance() {
    // cell of volume 1/4, eps = 0.1: variance 2.735.. / 4
    let m = sym(1.5);
    let w = Window::new(1, 0.5, 0.5).unwrap();
    let lat = Lattice::new(1, 0.5, 0.5, 0.5, 0.5).unwrap();
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
      .map(|rep| {
        let r = NoiseRealization::sample(&m, w, 0.1, 21, rep).unwrap();
        r.cell_increments(&lat, &m, NoiseMode::WithDrift, false).unwrap()[0]
      })
      .collect();
    let vol = 0.25;
    let var = vol * m.band_abs_moment(0.1, 1.0, 2.0).unwrap();
    let mu4 = vol * m.band_abs_moment(0.1, 1.0, 4.0).unwrap() + 3.0 * var * var;
    let est = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let se = ((mu4 - var * var) / n as f64).sqrt();
    assert!((est - var).abs() < 3.0 * se, "{est} {var} {se}");
    let mean = xs.iter().sum::<f64>() / n as f64;
    assert!(mean.abs() < 3.0 * (var / n as f64).sqrt());
  }

  #[test]
  fn zero_measure_is_silent() {
    let m = LevyMeasure::zero();
    let w = Window::new(1, 1.0, 1.0).unwrap();
    let r = NoiseRealization::sample(&m, w, 0.1, 1, 0).unwrap();
    assert!(r.small.is_empty() && r.big.is_empty());
  }
}
