//! Fractional Sobolev norms of lattice fields and path-regularity
//! diagnostics.
//!
//! Convention: Ff(xi) = int f(x) e^{-i xi.x} dx and
//! ||f||^2_{H^r} = int |Ff(xi)|^2 (1 + |xi|^2)^r dxi, so a unit point mass
//! has |Ff| = 1 and Parseval reads int |Ff|^2 = (2 pi)^d int f^2.
//! All norms below are returned squared unless the name says otherwise.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::Lattice;
use crate::quad::{adaptive, Tol};
use crate::rng::{stream, Purpose, StreamKey};

/// Uniform spatial sampling: n points per axis at x0 + j dx.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
  pub d: usize,
  pub n: usize,
  pub dx: f64,
  pub x0: f64,
}

impl SpatialGrid {
  pub fn new(d: usize, n: usize, dx: f64, x0: f64) -> Result<Self> {
    if !(d == 1 || d == 2) || n < 2 || !(dx > 0.0) {
      return param(format!("spatial grid needs d in {{1, 2}}, n >= 2, dx > 0 (got d = {d}, n = {n}, dx = {dx})"));
    }
    Ok(Self { d, n, dx, x0 })
  }

  pub fn coord(&self, j: usize) -> f64 {
    self.x0 + j as f64 * self.dx
  }

  pub fn points(&self) -> usize {
    self.n.pow(self.d as u32)
  }

  pub fn position(&self, i: usize) -> [f64; 2] {
    match self.d {
      1 => [self.coord(i), 0.0],
      _ => [self.coord(i / self.n), self.coord(i % self.n)],
    }
  }

  pub fn nyquist(&self) -> f64 {
    PI / self.dx
  }
}

impl From<&Lattice> for SpatialGrid {
  fn from(l: &Lattice) -> Self {
    Self {
      d: l.d,
      n: l.nx,
      dx: l.dx,
      x0: l.coord(0),
    }
  }
}

/// Smooth bump phi(x) = exp(k (1 - 1 / (1 - s^2))), s = |x - c| / radius,
/// and 0 for s >= 1. Equals 1 at the centre; every derivative vanishes at
/// the support edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFn {
  pub center: [f64; 2],
  pub radius: f64,
  #[serde(default = "unit")]
  pub smoothness: f64,
}

fn unit() -> f64 {
  1.0
}

impl WindowFn {
  pub fn new(center: [f64; 2], radius: f64, smoothness: f64) -> Result<Self> {
    if !(radius > 0.0 && smoothness > 0.0) {
      return param(format!("window needs radius > 0 and smoothness > 0, got {radius}, {smoothness}"));
    }
    Ok(Self {
      center,
      radius,
      smoothness,
    })
  }

  pub fn eval(&self, d: usize, x: &[f64; 2]) -> f64 {
    let mut s2 = (x[0] - self.center[0]).powi(2);
    if d == 2 {
      s2 += (x[1] - self.center[1]).powi(2);
    }
    s2 /= self.radius * self.radius;
    if s2 >= 1.0 {
      0.0
    } else {
      (self.smoothness * (1.0 - 1.0 / (1.0 - s2))).exp()
    }
  }

  /// Is the support strictly inside the sampled region?
  pub fn fits(&self, g: &SpatialGrid) -> bool {
    let (lo, hi) = (g.coord(0), g.coord(g.n - 1));
    (0..g.d).all(|a| self.center[a] - self.radius >= lo && self.center[a] + self.radius <= hi)
  }
}

/// Canonical cover of [-a, a]^d by bumps of radius `radius` on a grid of
/// spacing radius / 2, which realizes the local norm on that region.
pub fn window_cover(d: usize, a: f64, radius: f64) -> Vec<WindowFn> {
  let step = 0.5 * radius;
  let m = (a / step).ceil() as i64;
  let centers: Vec<f64> = (-m..=m).map(|k| k as f64 * step).collect();
  let mut out = Vec::new();
  for &c0 in &centers {
    if d == 1 {
      out.push(WindowFn {
        center: [c0, 0.0],
        radius,
        smoothness: 1.0,
      });
    } else {
      for &c1 in &centers {
        out.push(WindowFn {
          center: [c0, c1],
          radius,
          smoothness: 1.0,
        });
      }
    }
  }
  out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrNorm {
  /// Band-limited squared norm.
  pub value: f64,
  /// Radius of the spectral disc that was summed.
  pub band: f64,
  /// Bound on the part of the integral beyond the band; None when the
  /// weight is not integrable there (then the value is band-limited).
  pub tail_bound: Option<f64>,
}

impl HrNorm {
  pub fn band_limited(&self) -> bool {
    self.tail_bound.is_none()
  }
}

/// int_{|xi| > band} (1 + |xi|^2)^r dxi, or None when infinite.
pub fn weight_tail(d: usize, r: f64, band: f64) -> Option<f64> {
  match d {
    1 if 2.0 * r < -1.0 => Some(2.0 * band.powf(2.0 * r + 1.0) / (-2.0 * r - 1.0)),
    2 if r < -1.0 => Some(PI * (1.0 + band * band).powf(r + 1.0) / (-r - 1.0)),
    _ => None,
  }
}

/// Spectral H^r norm (squared) of (phi f) for a field sampled on `g`.
/// `band` defaults to, and is capped at, the Nyquist radius pi / dx.
pub fn hr_norm(g: &SpatialGrid, f: &[f64], r: f64, window: Option<&WindowFn>, band: Option<f64>) -> Result<HrNorm> {
  if f.len() != g.points() {
    return param(format!("field has {} samples, grid has {}", f.len(), g.points()));
  }
  if let Some(w) = window {
    if !w.fits(g) {
      return param("window support exceeds the sampled region");
    }
  }
  let band = band.unwrap_or(f64::INFINITY).min(g.nyquist());
  let vals: Vec<f64> = match window {
    Some(w) => f.iter().enumerate().map(|(i, v)| v * w.eval(g.d, &g.position(i))).collect(),
    None => f.to_vec(),
  };
  let mass: f64 = vals.iter().map(|v| v.abs()).sum::<f64>() * g.dx.powi(g.d as i32);
  if mass == 0.0 {
    return Ok(HrNorm {
      value: 0.0,
      band,
      tail_bound: Some(0.0),
    });
  }
  let spec = power_spectrum(g, &vals);
  let n = g.n;
  let dxi = 2.0 * PI / (n as f64 * g.dx);
  let freq = |k: usize| {
    let s = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    s * dxi
  };
  let scale = g.dx.powi(2 * g.d as i32) * dxi.powi(g.d as i32);
  let mut acc = 0.0;
  for (c, p) in spec.iter().enumerate() {
    let rho = match g.d {
      1 => freq(c).abs(),
      _ => freq(c / n).hypot(freq(c % n)),
    };
    if rho <= band {
      acc += p * (1.0 + rho * rho).powf(r);
    }
  }
  Ok(HrNorm {
    value: acc * scale,
    band,
    tail_bound: weight_tail(g.d, r, band).map(|t| t * mass * mass),
  })
}

/// |DFT|^2 of the samples (d = 2 layout: index ix * n + iy).
fn power_spectrum(g: &SpatialGrid, vals: &[f64]) -> Vec<f64> {
  let n = g.n;
  let fft = FftPlanner::new().plan_fft_forward(n);
  let mut buf: Vec<Complex<f64>> = vals.iter().map(|&v| Complex::new(v, 0.0)).collect();
  if g.d == 1 {
    fft.process(&mut buf);
  } else {
    for row in buf.chunks_mut(n) {
      fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for j in 0..n {
      for i in 0..n {
        col[i] = buf[i * n + j];
      }
      fft.process(&mut col);
      for i in 0..n {
        buf[i * n + j] = col[i];
      }
    }
  }
  buf.iter().map(|c| c.norm_sqr()).collect()
}

/// Radial integral int_{|xi| <= band} g(|xi|) dxi by adaptive quadrature,
/// with panel breaks at the given spacing (for oscillatory integrands).
pub fn radial_integral<F: Fn(f64) -> f64>(d: usize, band: f64, period: Option<f64>, g: F) -> f64 {
  let mut breaks: Vec<f64> = (0..=40).map(|k| 2f64.powi(k - 20)).filter(|&b| b < band).collect();
  if let Some(p) = period {
    let count = (band / p).ceil().min(200_000.0) as usize;
    let step = band / count.max(1) as f64;
    breaks.extend((1..count).map(|k| k as f64 * step));
  }
  let tol = Tol {
    abs: 1e-13,
    rel: 1e-10,
    max_panels: breaks.len() + 20_000,
  };
  match d {
    1 => 2.0 * adaptive(&g, 0.0, band, &breaks, tol).value,
    _ => 2.0 * PI * adaptive(|rho| rho * g(rho), 0.0, band, &breaks, tol).value,
  }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
  Converges,
  Diverges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScan {
  pub d: usize,
  pub r: f64,
  pub radii: Vec<f64>,
  /// int_{|xi| <= B} (1 + |xi|^2)^r dxi per radius.
  pub partials: Vec<f64>,
  /// Ratio of successive increments over doubling radii.
  pub ratios: Vec<f64>,
  pub verdict: Verdict,
  /// Geometric extrapolation of the partials when convergent.
  pub limit: Option<f64>,
}

/// Convergence ratio threshold for doubling increments.
pub const GEOMETRIC_RATIO: f64 = 0.95;

/// Partial integrals of the squared H^r norm of a point mass over growing
/// discs. Radii are expected to double; the verdict is "converges" when the
/// last two increment ratios are below `GEOMETRIC_RATIO`.
pub fn delta_membership_scan(d: usize, r: f64, radii: &[f64]) -> Result<DeltaScan> {
  if radii.len() < 4 || radii.windows(2).any(|w| !(w[1] > w[0])) || radii[0] <= 0.0 {
    return param("delta scan needs at least 4 increasing positive radii");
  }
  let partials: Vec<f64> = radii
    .iter()
    .map(|&b| radial_integral(d, b, None, |rho| (1.0 + rho * rho).powf(r)))
    .collect();
  let inc: Vec<f64> = std::iter::once(partials[0]).chain(partials.windows(2).map(|w| w[1] - w[0])).collect();
  let ratios: Vec<f64> = inc.windows(2).skip(1).map(|w| w[1] / w[0]).collect();
  let last = &ratios[ratios.len() - 2..];
  let conv = last.iter().all(|&q| q < GEOMETRIC_RATIO);
  let limit = conv.then(|| {
    let q = last[1];
    partials[partials.len() - 1] + inc[inc.len() - 1] * q / (1.0 - q)
  });
  Ok(DeltaScan {
    d,
    r,
    radii: radii.to_vec(),
    partials,
    ratios,
    verdict: if conv { Verdict::Converges } else { Verdict::Diverges },
    limit,
  })
}

/// Doubling radii base * 2^k, k = 0..count.
pub fn doubling(base: f64, count: usize) -> Vec<f64> {
  (0..count).map(|k| base * 2f64.powi(k as i32)).collect()
}

/// Path t -> F(t) = G_{t - t0}(. - x0) for t >= t0 and 0 before, with the
/// time-zero value taken as G_0 = delta_{x0} in d = 2 and the L^2-null
/// G_0 = (1/2) 1_{x0} (the zero field) in d = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
  pub d: usize,
  pub r: f64,
  pub t0: f64,
  pub band: f64,
  pub hs: Vec<f64>,
  /// ||F(t0 + h) - F(t0)||^2
  pub right: Vec<f64>,
  /// ||F(t0 - h) - F(t0-)||^2
  pub left: Vec<f64>,
  /// ||F(t0) - F(t0-)||^2
  pub jump: f64,
  /// ||F(t0 + h)||^2: distance to the zero field, whose vanishing shows
  /// where the path actually goes as h decreases.
  pub to_zero: Vec<f64>,
}

pub fn check_path_order(d: usize, r: f64) -> Result<()> {
  match d {
    1 if r < 0.5 => Ok(()),
    2 if r < -1.0 => Ok(()),
    1 | 2 => param(format!(
      "kernel paths need r < {} in dimension {d}, got {r}",
      if d == 1 { "1/2" } else { "-1" }
    )),
    _ => param(format!("dimension must be 1 or 2, got {d}")),
  }
}

/// Spectral transform of G_t at radius rho: sin(t rho) / rho.
fn g_hat(t: f64, rho: f64) -> f64 {
  if rho == 0.0 {
    t
  } else {
    (t * rho).sin() / rho
  }
}

pub fn kernel_path_profile(d: usize, t0: f64, _x0: [f64; 2], r: f64, hs: &[f64], band: f64) -> Result<PathProfile> {
  check_path_order(d, r)?;
  if hs.iter().any(|&h| !(h > 0.0)) || !(band > 0.0) {
    return param("increments and band must be positive");
  }
  // translation leaves |F| unchanged, so x0 drops out of every norm
  let w = |rho: f64| (1.0 + rho * rho).powf(r);
  let g0 = if d == 2 { 1.0 } else { 0.0 };
  let right = hs
    .iter()
    .map(|&h| radial_integral(d, band, Some(PI / h), |rho| (g_hat(h, rho) - g0).powi(2) * w(rho)))
    .collect();
  let to_zero = hs
    .iter()
    .map(|&h| radial_integral(d, band, Some(PI / h), |rho| g_hat(h, rho).powi(2) * w(rho)))
    .collect();
  let jump = if d == 2 { radial_integral(2, band, None, w) } else { 0.0 };
  Ok(PathProfile {
    d,
    r,
    t0,
    band,
    hs: hs.to_vec(),
    right,
    left: vec![0.0; hs.len()],
    jump,
    to_zero,
  })
}

/// Do the values decrease strictly as h decreases and vanish like a power
/// (fitted log-log slope over the smallest three h at least `min_slope`)?
pub fn vanishes_monotonically(hs: &[f64], vals: &[f64], min_slope: f64) -> bool {
  let mut idx: Vec<usize> = (0..hs.len()).collect();
  idx.sort_by(|&a, &b| hs[b].total_cmp(&hs[a]));
  let mono = idx.windows(2).all(|w| vals[w[1]] < vals[w[0]]);
  if !mono || idx.len() < 3 {
    return false;
  }
  let tail: Vec<(f64, f64)> = idx[idx.len() - 3..].iter().map(|&i| (hs[i].ln(), vals[i].ln())).collect();
  matches!(ls_slope(&tail), Some(s) if s >= min_slope)
}

/// Least-squares slope of y on x.
pub fn ls_slope(pts: &[(f64, f64)]) -> Option<f64> {
  let n = pts.len() as f64;
  if pts.len() < 2 || pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
    return None;
  }
  let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
  let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
  let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
  let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
  (sxx > 0.0).then(|| sxy / sxx)
}

/// Pointwise bound sin^2(t rho) / rho^2 <= 2 max(t^2, 1) / (1 + rho^2)
/// over random (t, rho), log-uniform in t on [1e-3, 1e2] and rho on
/// [1e-4, 1e4]. Returns (violations, largest lhs / rhs).
pub fn key_estimate_sweep(samples: usize, seed: u64) -> (usize, f64) {
  let mut rng = stream(seed, StreamKey::new(0, Purpose::Oracle).with_tile(0x6b6579));
  let mut bad = 0;
  let mut worst: f64 = 0.0;
  for _ in 0..samples {
    let t = 10f64.powf(rng.random_range(-3.0..2.0));
    let rho = 10f64.powf(rng.random_range(-4.0..4.0));
    let lhs = g_hat(t, rho).powi(2);
    let rhs = 2.0 * (t * t).max(1.0) / (1.0 + rho * rho);
    worst = worst.max(lhs / rhs);
    if lhs > rhs * (1.0 + 1e-12) {
      bad += 1;
    }
  }
  (bad, worst)
}

/// Squared H^r distances of one path at snapshot k: forward to k + s and
/// backward to k - s, for each step count s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementRecord {
  pub h: f64,
  pub forward: f64,
  pub backward: f64,
}

pub fn snapshot_increments<'a, S>(
  g: &SpatialGrid,
  snapshot: S,
  k: usize,
  steps: &[usize],
  dt: f64,
  r: f64,
  window: Option<&WindowFn>,
) -> Result<Vec<IncrementRecord>>
where
  S: Fn(usize) -> &'a [f64],
{
  let here = snapshot(k);
  let dist = |other: &[f64]| -> Result<f64> {
    let diff: Vec<f64> = other.iter().zip(here).map(|(a, b)| a - b).collect();
    Ok(hr_norm(g, &diff, r, window, None)?.value)
  };
  steps
    .iter()
    .map(|&s| {
      if s == 0 || s > k {
        return param(format!("step {s} not usable at snapshot {k}"));
      }
      Ok(IncrementRecord {
        h: s as f64 * dt,
        forward: dist(snapshot(k + s))?,
        backward: dist(snapshot(k - s))?,
      })
    })
    .collect()
}

/// Minimum replicate count for an exponent fit.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
  pub replicates: usize,
  pub hs: Vec<f64>,
  /// Mean of forward * backward per h.
  pub product_means: Vec<f64>,
  pub product_se: Vec<f64>,
  /// Mean of the forward distance per h.
  pub forward_means: Vec<f64>,
  /// Log-log slope of the product moment; None when degenerate.
  pub slope: Option<f64>,
  pub ci: Option<(f64, f64)>,
  pub degenerate: bool,
}

fn product_slope(samples: &[Vec<IncrementRecord>], idx: &[usize], hs: &[f64]) -> Option<f64> {
  let pts: Vec<(f64, f64)> = (0..hs.len())
    .map(|j| {
      let m = idx.iter().map(|&i| samples[i][j].forward * samples[i][j].backward).sum::<f64>() / idx.len() as f64;
      (hs[j].ln(), m.ln())
    })
    .collect();
  ls_slope(&pts)
}

/// Fit of E[||u(t+h) - u(t)||^2 ||u(t-h) - u(t)||^2] ~ h^slope with a
/// percentile bootstrap over replicates.
pub fn fit_increment_exponent(samples: &[Vec<IncrementRecord>], boot: usize, seed: u64) -> Result<ExponentFit> {
  if samples.len() < MIN_REPLICATES {
    return Err(Error::Statistics(format!(
      "exponent fit needs at least {MIN_REPLICATES} replicates, got {}",
      samples.len()
    )));
  }
  let hs: Vec<f64> = samples[0].iter().map(|s| s.h).collect();
  if samples.iter().any(|s| s.len() != hs.len() || s.iter().zip(&hs).any(|(a, h)| a.h != *h)) {
    return param("all replicates must use the same increments");
  }
  let n = samples.len();
  let nf = n as f64;
  let mut product_means = Vec::new();
  let mut product_se = Vec::new();
  let mut forward_means = Vec::new();
  for j in 0..hs.len() {
    let prods: Vec<f64> = samples.iter().map(|s| s[j].forward * s[j].backward).collect();
    let m = prods.iter().sum::<f64>() / nf;
    let var = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (nf - 1.0);
    product_means.push(m);
    product_se.push((var / nf).sqrt());
    forward_means.push(samples.iter().map(|s| s[j].forward).sum::<f64>() / nf);
  }
  let degenerate = product_means.iter().any(|&m| !(m > 0.0));
  let all: Vec<usize> = (0..n).collect();
  let slope = if degenerate { None } else { product_slope(samples, &all, &hs) };
  let ci = slope.map(|_| {
    let mut rng = stream(seed, StreamKey::new(0, Purpose::Bootstrap));
    let mut reps: Vec<f64> = (0..boot)
      .filter_map(|_| {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        product_slope(samples, &idx, &hs)
      })
      .collect();
    reps.sort_by(f64::total_cmp);
    let q = |p: f64| reps[((p * (reps.len() - 1) as f64).round() as usize).min(reps.len() - 1)];
    (q(0.025), q(0.975))
  });
  Ok(ExponentFit {
    replicates: n,
    hs,
    product_means,
    product_se,
    forward_means,
    slope,
    ci,
    degenerate,
  })
}

/// Jump threshold relative to the neighbouring increments.
pub const JUMP_FACTOR: f64 = 5.0;
const NEIGHBOURS: usize = 3;

/// Times t_{k+1} at which |v_{k+1} - v_k| exceeds JUMP_FACTOR times the
/// median of the increments within NEIGHBOURS steps on either side.
pub fn detect_jumps(times: &[f64], values: &[f64]) -> Vec<f64> {
  let inc: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
  flag(&inc).into_iter().map(|k| times[k + 1]).collect()
}

/// Times t_k at which the second difference |v_{k+1} - 2 v_k + v_{k-1}|
/// stands out by the same rule: a kink (jump in the time derivative)
/// between t_{k-1} and t_{k+1}.
pub fn detect_kinks(times: &[f64], values: &[f64]) -> Vec<f64> {
  let sec: Vec<f64> = values.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).collect();
  flag(&sec).into_iter().map(|k| times[k + 1]).collect()
}

fn flag(x: &[f64]) -> Vec<usize> {
  (0..x.len())
    .filter(|&k| {
      let mut nb: Vec<f64> = (k.saturating_sub(NEIGHBOURS)..(k + NEIGHBOURS + 1).min(x.len()))
        .filter(|&j| j != k)
        .map(|j| x[j])
        .collect();
      if nb.is_empty() {
        return false;
      }
      nb.sort_by(f64::total_cmp);
      let med = if nb.len() % 2 == 1 {
        nb[nb.len() / 2]
      } else {
        0.5 * (nb[nb.len() / 2 - 1] + nb[nb.len() / 2])
      };
      x[k] > JUMP_FACTOR * med && x[k] > 0.0
    })
    .collect()
}

/// H^r profile of a path sampled at snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevProfile {
  pub r: f64,
  pub window: Option<WindowFn>,
  pub times: Vec<f64>,
  /// ||phi u(t_k)||_{H^r} (not squared).
  pub values: Vec<f64>,
  pub increments: Vec<IncrementRecord>,
  pub jumps: Vec<f64>,
  pub kinks: Vec<f64>,
}

pub fn sobolev_profile<'a, S>(
  g: &SpatialGrid,
  snapshot: S,
  times: &[f64],
  r: f64,
  window: Option<&WindowFn>,
) -> Result<SobolevProfile>
where
  S: Fn(usize) -> &'a [f64],
{
  let values: Vec<f64> = (0..times.len())
    .map(|k| hr_norm(g, snapshot(k), r, window, None).map(|n| n.value.sqrt()))
    .collect::<Result<_>>()?;
  if values.iter().any(|v| !v.is_finite()) {
    return Err(Error::Numerical("non-finite Sobolev profile value".into()));
  }
  Ok(SobolevProfile {
    r,
    window: window.copied(),
    times: times.to_vec(),
    jumps: detect_jumps(times, &values),
    kinks: detect_kinks(times, &values),
    values,
    increments: Vec::new(),
  })
}

/// Does every atom time have a detected time within one step, and every
/// detected time an atom? Returns (matched atoms, unmatched detections).
pub fn match_times(atoms: &[f64], detected: &[f64], dt: f64) -> (usize, usize) {
  let near = |a: f64, b: f64| (a - b).abs() <= dt * (1.0 + 1e-9);
  let hit = atoms.iter().filter(|&&a| detected.iter().any(|&t| near(a, t))).count();
  let spurious = detected.iter().filter(|&&t| !atoms.iter().any(|&a| near(a, t))).count();
  (hit, spurious)
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::wave_kernel::kernel;
  use proptest::prelude::*;

  fn line(n: usize, dx: f64) -> SpatialGrid {
    SpatialGrid::new(1, n, dx, -(n as f64) * dx / 2.0 + 0.5 * dx).unwrap()
  }

  #[test]
  fn zero_field_has_zero_norm() {
    let g = line(64, 0.1);
    assert_eq!(hr_norm(&g, &vec![0.0; 64], -1.0, None, None).unwrap().value, 0.0);
  }

  #[test]
  fn kernel_l2_norm_d1() {
    let g = line(4096, 1.0 / 512.0);
    let f: Vec<f64> = (0..g.n).map(|j| kernel(1, 1.0, g.coord(j).abs())).collect();
    let v = hr_norm(&g, &f, 0.0, None, None).unwrap().value;
    assert!((v / (2.0 * PI) - 0.5).abs() < 1e-3, "{v}");
  }

  #[test]
  fn point_mass_d2() {
    // dxi = 2 pi / (n dx) = 0.5 and Nyquist = 200
    let dx = PI / 200.0;
    let n = 800;
    let g = SpatialGrid::new(2, n, dx, -(n as f64) / 2.0 * dx).unwrap();
    let mut f = vec![0.0; n * n];
    f[(n / 2) * n + n / 2] = 1.0 / (dx * dx);
    let v = hr_norm(&g, &f, -1.5, None, Some(200.0)).unwrap();
    assert!((v.value / (2.0 * PI) - 1.0).abs() < 0.02, "{}", v.value);
    // analytic value of the disc: 2 pi (1 - (1 + B^2)^(-1/2))
    let disc = 2.0 * PI * (1.0 - (1.0f64 + 4e4).powf(-0.5));
    assert!((v.value - disc).abs() < 1e-3 * disc);
    assert!(v.tail_bound.unwrap() > 0.0);
  }

  #[test]
  fn parseval_smooth_field() {
    for d in [1, 2] {
      let n = if d == 1 { 512 } else { 128 };
      let dx = 16.0 / n as f64;
      let g = SpatialGrid::new(d, n, dx, -8.0).unwrap();
      let f: Vec<f64> = (0..g.points())
        .map(|i| {
          let x = g.position(i);
          (-(x[0] * x[0] + x[1] * x[1])).exp()
        })
        .collect();
      let spatial: f64 = f.iter().map(|v| v * v).sum::<f64>() * dx.powi(d as i32);
      let spec = hr_norm(&g, &f, 0.0, None, None).unwrap().value;
      assert!((spec / (2.0 * PI).powi(d as i32) - spatial).abs() < 1e-6 * spatial);
    }
  }

  #[test]
  fn window_is_local_and_flat_at_edge() {
    let g = line(256, 0.05);
    let w = WindowFn::new([0.3, 0.0], 1.5, 1.0).unwrap();
    assert!(w.eval(1, &[0.3 + 1.5 * (1.0 - 1e-2), 0.0]) < 1e-20);
    let f: Vec<f64> = (0..g.n).map(|j| (3.0 * g.coord(j)).sin()).collect();
    let mut f2 = f.clone();
    for j in 0..g.n {
      if (g.coord(j) - 0.3).abs() >= 1.5 {
        f2[j] += 7.0;
      }
    }
    let a = hr_norm(&g, &f, -0.7, Some(&w), None).unwrap().value;
    let b = hr_norm(&g, &f2, -0.7, Some(&w), None).unwrap().value;
    assert_eq!(a, b);
    let too_big = WindowFn::new([0.0, 0.0], 100.0, 1.0).unwrap();
    assert!(hr_norm(&g, &f, 0.0, Some(&too_big), None).is_err());
    assert!(!window_cover(2, 1.0, 0.5).is_empty());
  }

  #[test]
  fn delta_scan_verdicts() {
    let radii = doubling(25.0, 8);
    let s = delta_membership_scan(2, -1.5, &radii).unwrap();
    assert_eq!(s.verdict, Verdict::Converges);
    assert!((s.limit.unwrap() - 2.0 * PI).abs() < 1e-3);
    // closed form of each partial
    for (b, p) in radii.iter().zip(&s.partials) {
      assert!((p - 2.0 * PI * (1.0 - (1.0 + b * b).powf(-0.5))).abs() < 1e-8);
    }
    let s = delta_membership_scan(2, -1.0, &radii).unwrap();
    assert_eq!(s.verdict, Verdict::Diverges);
    let inc = s.partials[7] - s.partials[6];
    assert!((inc - 2.0 * PI * 2f64.ln()).abs() < 1e-3);
    assert_eq!(delta_membership_scan(2, 0.0, &radii).unwrap().verdict, Verdict::Diverges);
  }

  #[test]
  fn path_profile_d1_matches_pi_h() {
    let hs = [0.5, 0.25, 0.125, 0.0625];
    let p = kernel_path_profile(1, 0.0, [0.0, 0.0], 0.0, &hs, 4000.0).unwrap();
    for (h, v) in hs.iter().zip(&p.right) {
      // band tail of int sin^2(h rho) / rho^2 over |rho| > B is about 1 / B
      assert!((v + 1.0 / 4000.0 - PI * h).abs() < 1e-3 * PI * h, "{h} {v}");
    }
    assert!(p.left.iter().all(|&v| v == 0.0));
    assert!(vanishes_monotonically(&hs, &p.right, 0.5));
    assert!(kernel_path_profile(1, 0.0, [0.0, 0.0], 0.5, &hs, 100.0).is_err());
    assert!(kernel_path_profile(2, 0.0, [0.0, 0.0], -1.0, &hs, 100.0).is_err());
  }

  #[test]
  fn path_profile_d2_anchors() {
    let hs = [0.4, 0.2, 0.1, 0.05];
    let p = kernel_path_profile(2, 0.0, [0.0, 0.0], -1.5, &hs, 200.0).unwrap();
    assert!((p.jump / (2.0 * PI) - 1.0).abs() < 0.02);
    // the distance to zero vanishes; the distance to delta does not
    assert!(vanishes_monotonically(&hs, &p.to_zero, 1.0));
    assert!(p.right.iter().all(|&v| v > 0.5 * p.jump));
  }

  #[test]
  fn deterministic_linear_path_slope_four() {
    let n = 16;
    let g = line(n, 0.25);
    let f: Vec<f64> = (0..n).map(|j| (g.coord(j)).cos()).collect();
    let snaps: Vec<Vec<f64>> = (0..=20).map(|k| f.iter().map(|v| v * k as f64 * 0.1).collect()).collect();
    let recs = snapshot_increments(&g, |k| &snaps[k][..], 10, &[1, 2, 4, 8], 0.1, -0.5, None).unwrap();
    let samples = vec![recs; MIN_REPLICATES];
    let fit = fit_increment_exponent(&samples, 50, 1).unwrap();
    assert!((fit.slope.unwrap() - 4.0).abs() < 1e-9);
    let zero = vec![vec![IncrementRecord { h: 0.1, forward: 0.0, backward: 0.0 }, IncrementRecord { h: 0.2, forward: 0.0, backward: 0.0 }]; MIN_REPLICATES];
    assert!(fit_increment_exponent(&zero, 10, 1).unwrap().degenerate);
    assert!(fit_increment_exponent(&zero[..10], 10, 1).is_err());
  }

  #[test]
  fn jump_detector() {
    let times: Vec<f64> = (0..30).map(|k| k as f64 * 0.1).collect();
    let vals: Vec<f64> = (0..30).map(|k| 0.01 * k as f64 + if k >= 12 { 1.0 } else { 0.0 }).collect();
    assert_eq!(detect_jumps(&times, &vals), vec![times[12]]);
    let kinks: Vec<f64> = (0..30).map(|k| if k >= 10 { (k - 10) as f64 } else { 0.0 }).collect();
    assert_eq!(detect_kinks(&times, &kinks), vec![times[10]]);
    assert_eq!(match_times(&[1.15], &[1.2], 0.1), (1, 0));
  }

  #[test]
  fn key_estimate_holds() {
    assert_eq!(key_estimate_sweep(100_000, 3).0, 0);
  }

  proptest! {
    #[test]
    fn key_estimate_pointwise(t in 1e-3f64..50.0, rho in 1e-4f64..1e4) {
      prop_assert!(g_hat(t, rho).powi(2) <= 2.0 * (t * t).max(1.0) / (1.0 + rho * rho) * (1.0 + 1e-12));
    }

    #[test]
    fn norm_decreases_in_r(seed in 0u64..1000) {
      let g = line(32, 0.2);
      let f: Vec<f64> = (0..32).map(|j| ((j as u64 * 2654435761 + seed) % 97) as f64 / 97.0 - 0.5).collect();
      let a = hr_norm(&g, &f, -1.0, None, None).unwrap().value;
      let b = hr_norm(&g, &f, -0.5, None, None).unwrap().value;
      let c = hr_norm(&g, &f, 0.0, None, None).unwrap().value;
      prop_assert!(a <= b && b <= c && a >= 0.0);
    }
  }
}
