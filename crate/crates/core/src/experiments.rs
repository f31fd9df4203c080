//! Named experiments that bundle the module checks into pass/fail lines.
//! The command line and the acceptance harness both run these.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::norm;
use crate::levy_noise::{
  exceedance_probability, exceedance_rate, sample_overflow_whole, stable_exceedance_rate, LevyMeasure, NoiseMode,
  NoiseRealization, SpatialDomain, Truncation, Window,
};
use crate::report::CheckRecord;
use crate::rng::{stream, Purpose, StreamKey};
use crate::sobolev::{
  delta_membership_scan, doubling, fit_increment_exponent, hr_norm, kernel_path_profile, key_estimate_sweep,
  match_times, snapshot_increments, sobolev_profile, vanishes_monotonically, ExponentFit, IncrementRecord,
  PathProfile, SpatialGrid, Verdict, WindowFn,
};
use crate::solver::{
  additive_sources, convolve_at, picard_solve, Engine, Grid, InitialData, Problem, Sigma,
};
use crate::verification::{moment_bound_scan, rosenthal_check, BoxTerm, MomentScan, SimpleIntegrand};
use crate::wave_kernel::{
  beta_chain, beta_chain_nested, beta_chain_simplex_mc, check_cone_bound, check_power_comparison,
  check_subsemigroup_d1, fourier_dft_gap, fourier_hankel_d2, kernel_fourier, p_mass, p_mass_quadrature, ConeBound,
};

/// One pass/fail line of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
  pub label: String,
  pub pass: bool,
  pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
  pub lines: Vec<Line>,
  pub records: Vec<CheckRecord>,
}

impl Outcome {
  pub fn pass(&self) -> bool {
    self.lines.iter().all(|l| l.pass) && self.records.iter().all(|r| r.pass)
  }

  fn line(&mut self, label: &str, pass: bool, detail: String) {
    self.lines.push(Line {
      label: label.into(),
      pass,
      detail,
    });
  }

  pub fn extend(&mut self, o: Outcome) {
    self.lines.extend(o.lines);
    self.records.extend(o.records);
  }
}

/// Closed-form p-masses against quadrature, the mass identity and the
/// Fourier transform against a DFT (d = 1) and a Hankel integral (d = 2).
pub fn kernel_identities() -> Result<Outcome> {
  let mut out = Outcome::default();
  let ts = [0.25, 1.0, 4.0];
  let mut worst: f64 = 0.0;
  for (d, ps) in [(1usize, [0.5, 1.0, 2.0, 4.0]), (2, [0.5, 1.0, 1.5, 1.9])] {
    for p in ps {
      for t in ts {
        let exact = p_mass(d, p, t)?;
        let quad = p_mass_quadrature(d, p, t)?;
        let rel = (quad - exact).abs() / exact;
        worst = worst.max(rel);
        out.records.push(
          CheckRecord::new("p-mass", "closed-form-vs-quadrature", quad, exact, rel <= 1e-6)
            .param("d", d as f64)
            .param("p", p)
            .param("t", t),
        );
      }
    }
  }
  out.line("p-mass closed form vs quadrature", worst <= 1e-6, format!("max rel err {worst:.2e} (gate 1e-6)"));
  let mut worst: f64 = 0.0;
  for d in [1usize, 2] {
    for t in ts {
      let m = p_mass_quadrature(d, 1.0, t)?;
      worst = worst.max((m - t).abs() / t);
    }
  }
  out.line("mass identity int G_t = t", worst <= 1e-6, format!("max rel err {worst:.2e} (gate 1e-6)"));
  let mut gap: f64 = 0.0;
  for t in ts {
    let hw = 2.0 * t + 4.0;
    let n = (2.0 * hw * 1024.0) as usize;
    gap = gap.max(fourier_dft_gap(t, hw, n, 20.0));
  }
  out.line("Fourier transform vs DFT, |xi| <= 20", gap <= 1e-3, format!("max abs gap {gap:.2e} (gate 1e-3)"));
  let mut gap2: f64 = 0.0;
  for t in ts {
    for k in 0..=40 {
      let rho = 0.5 * k as f64;
      gap2 = gap2.max((fourier_hankel_d2(t, rho) - kernel_fourier(t, rho)).abs());
    }
  }
  out.line("Fourier transform vs Hankel integral (d = 2)", gap2 <= 1e-3, format!("max abs gap {gap2:.2e} (gate 1e-3)"));
  Ok(out)
}

/// 20 random chains: n <= 2 against nested quadrature, n = 3, 4 against
/// simplex Monte Carlo. Monte Carlo chains draw exponents above -1/2 so the
/// estimator has finite variance.
pub fn beta_chains(seed: u64, mc_samples: usize) -> Result<Outcome> {
  let mut out = Outcome::default();
  let mut rng = stream(seed, StreamKey::new(0, Purpose::Oracle).with_tile(2));
  let (mut worst_q, mut worst_mc): (f64, f64) = (0.0, 0.0);
  for chain in 0..20u64 {
    let n = 1 + (chain % 4) as usize;
    let t = rng.random_range(0.5..3.0);
    let lo = if n <= 2 { -0.9 } else { -0.45 };
    let betas: Vec<f64> = (0..n).map(|_| rng.random_range(lo..2.0)).collect();
    let exact = beta_chain(t, &betas)?;
    let mut rec = if n <= 2 {
      let q = beta_chain_nested(t, &betas)?;
      let rel = (q - exact).abs() / exact;
      worst_q = worst_q.max(rel);
      CheckRecord::new("beta-chain", "closed-form-vs-nested-quadrature", q, exact, rel <= 1e-8)
    } else {
      let (m, se) = beta_chain_simplex_mc(t, &betas, mc_samples, seed.wrapping_add(chain));
      let rel = (m - exact).abs() / exact;
      worst_mc = worst_mc.max(rel);
      let mut r = CheckRecord::new("beta-chain", "closed-form-vs-simplex-mc", m, exact, rel <= 0.01);
      r.lhs_se = Some(se);
      r.replicates = Some(mc_samples as u64);
      r
    };
    rec = rec.param("n", n as f64).param("t", t);
    for (j, b) in betas.iter().enumerate() {
      rec = rec.param(&format!("beta{j}"), *b);
    }
    out.records.push(rec);
  }
  out.line("beta chain vs nested quadrature (n <= 2)", worst_q <= 1e-8, format!("max rel err {worst_q:.2e} (gate 1e-8)"));
  out.line("beta chain vs simplex Monte Carlo (n = 3, 4)", worst_mc <= 0.01, format!("max rel err {worst_mc:.2e} (gate 1e-2)"));
  Ok(out)
}

/// Cone-bound parameter sets: (q, delta) for the power bound; (q, p) for
/// the weighted and mixed bounds.
pub fn cone_bounds() -> Vec<ConeBound> {
  let qd = [(0.6, 1.2), (0.75, 1.2), (0.9, 1.05)];
  let mut v: Vec<ConeBound> = qd.iter().map(|&(q, delta)| ConeBound::Power { q, delta }).collect();
  for &(q, _) in &qd {
    for p in [0.5, 0.9] {
      v.push(ConeBound::Weighted { q, p });
      v.push(ConeBound::Mixed { q, p });
    }
  }
  v
}

/// Random sweeps of the pointwise kernel inequalities and mesh-halving
/// stability of the cone-bound constants.
pub fn inequality_sweeps(seed: u64, sweep: usize, level: u32) -> Result<Outcome> {
  let mut out = Outcome::default();
  let mut rng = stream(seed, StreamKey::new(0, Purpose::Oracle).with_tile(3));
  let mut bad = 0;
  for _ in 0..sweep {
    let mut ts = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
    ts.sort_by(f64::total_cmp);
    let x = rng.random_range(-6.0..6.0);
    if !check_subsemigroup_d1(ts[0], ts[1], ts[2], x).pass {
      bad += 1;
    }
  }
  out.line("sub-semigroup sweep (d = 1)", bad == 0, format!("{bad} violations in {sweep} draws"));
  let n_key = 10 * sweep;
  let (bad, worst) = key_estimate_sweep(n_key, seed);
  out.line("key spectral estimate sweep", bad == 0, format!("{bad} violations in {n_key} draws, max ratio {worst:.4}"));
  let mut bad = 0;
  let n_pow = sweep / 10;
  for _ in 0..n_pow {
    let a = rng.random_range(0.01..1.99);
    let b = rng.random_range(0.01..1.99);
    let (p, q) = if a <= b { (a, b) } else { (b, a) };
    let t = rng.random_range(0.05..5.0);
    let rho = t * rng.random::<f64>();
    if !check_power_comparison(p, q, t, rho).pass {
      bad += 1;
    }
  }
  out.line("kernel power comparison sweep", bad == 0, format!("{bad} violations in {n_pow} draws"));
  let rhos = [0.0, 0.15, 0.3, 0.5, 0.7, 0.9];
  for b in cone_bounds() {
    let rep = check_cone_bound(b, 0.0, 1.0, &rhos, level)?;
    out.line(
      &format!("{} {:?}", b.name(), b),
      rep.pass,
      format!(
        "constant {:.5} -> {:.5}, drift {:.2}% (gate 5%)",
        rep.constant_coarse,
        rep.constant_fine,
        100.0 * rep.drift
      ),
    );
    out.records.extend(rep.records);
  }
  Ok(out)
}

/// Empirical P(tau_N <= T) for symmetric stable alpha = 1.5, eta = 1,
/// d = 1: whole-space sampler against 1 - exp(-Lambda_N T), and atoms of a
/// finite window against the quadrature rate of that window.
pub fn stopping_time_law(seed: u64, replicates: usize, levels: &[f64], t_end: f64, radius: f64) -> Result<Outcome> {
  let mut out = Outcome::default();
  let m = LevyMeasure::symmetric(1.5)?;
  let anchor = stable_exceedance_rate(1.5, 2.0, &Truncation::new(4.0, 1.0)?, 1)?;
  out.line("whole-line rate anchor Lambda_4 = 2/3", (anchor - 2.0 / 3.0).abs() < 1e-12, format!("{anchor:.15}"));
  let window = Window::new(1, t_end, radius)?;
  let noises: Vec<NoiseRealization> = (0..replicates as u64)
    .into_par_iter()
    .map(|rep| NoiseRealization::sample(&m, window, 1.0, seed, rep))
    .collect::<Result<_>>()?;
  for &n in levels {
    let tr = Truncation::new(n, 1.0)?;
    for (label, rate, hits) in [
      (
        "whole line",
        stable_exceedance_rate(1.5, 2.0, &tr, 1)?,
        (0..replicates as u64)
          .map(|rep| sample_overflow_whole(&m, &tr, 1, t_end, seed, rep).map(|a| !a.is_empty()))
          .collect::<Result<Vec<bool>>>()?,
      ),
      (
        "window",
        exceedance_rate(&m, &tr, 1, SpatialDomain::Box(radius))?,
        noises.iter().map(|nz| nz.stopping_time(&tr) <= t_end).collect(),
      ),
    ] {
      let p = exceedance_probability(rate, t_end);
      let k = hits.iter().filter(|&&h| h).count() as f64;
      let emp = k / replicates as f64;
      let se = (p * (1.0 - p) / replicates as f64).sqrt();
      let pass = (emp - p).abs() <= 3.0 * se;
      let mut rec = CheckRecord::new("stopping-time-law", label, emp, p, pass).param("N", n).param("rate", rate);
      rec.lhs_se = Some(se);
      rec.replicates = Some(replicates as u64);
      rec.seed = Some(seed);
      out.records.push(rec);
      out.line(
        &format!("P(tau_{n} <= T), {label}"),
        pass,
        format!("empirical {emp:.4} vs {p:.4}, |diff| = {:.2} SE", (emp - p).abs() / se),
      );
    }
  }
  Ok(out)
}

/// Three box integrands used by the isometry check.
pub fn isometry_integrands() -> Result<Vec<SimpleIntegrand>> {
  Ok(vec![
    SimpleIntegrand::unit(1, 1.0),
    SimpleIntegrand::new(1, vec![
      BoxTerm {
        t: [0.0, 0.5],
        lo: [-1.0, 0.0],
        hi: [0.0, 0.0],
        value: 2.0,
      },
      BoxTerm {
        t: [0.25, 1.0],
        lo: [0.5, 0.0],
        hi: [1.5, 0.0],
        value: -1.0,
      },
    ])?,
    SimpleIntegrand::new(2, vec![BoxTerm {
      t: [0.0, 1.0],
      lo: [0.0, 0.0],
      hi: [1.0, 0.5],
      value: 0.5,
    }])?,
  ])
}

/// Compensated-Poisson isometry for three box integrands with skewed
/// stable marks on (eps, 1].
pub fn isometry(seed: u64, replicates: usize, eps: f64) -> Result<Outcome> {
  let mut out = Outcome::default();
  let m = LevyMeasure::stable(1.5, 1.0, 0.5)?;
  for (i, h) in isometry_integrands()?.iter().enumerate() {
    let recs = rosenthal_check(h, 2.0, &m, eps, replicates, seed.wrapping_add(i as u64))?;
    let iso = &recs[1];
    out.line(
      &format!("isometry, integrand {}", i + 1),
      iso.pass,
      format!(
        "E|X_T|^2 = {:.5} +- {:.5} vs {:.5} ({:.2} SE)",
        iso.lhs,
        iso.lhs_se.unwrap_or(f64::NAN),
        iso.rhs,
        (iso.lhs - iso.rhs).abs() / iso.lhs_se.unwrap_or(f64::NAN)
      ),
    );
    out.records.extend(recs);
  }
  Ok(out)
}

/// Truncated equation with sigma(u) = u, symmetric alpha = 1.5, N = 4,
/// eta = 1 on d = 1, A = 1, T = 1, R = 2, dx = dt = 1/16.
pub fn reference_problem(eps: f64) -> Result<Problem> {
  Ok(Problem {
    grid: Grid::new(1, 1.0, 1.0, 2.0, 1.0 / 16.0, 1.0 / 16.0)?,
    init: InitialData::Constant { u0: 1.0, v0: 0.0 },
    sigma: Sigma::Linear {
      slope: 1.0,
      intercept: 0.0,
    },
    measure: LevyMeasure::symmetric(1.5)?,
    mode: NoiseMode::WithDrift,
    drift: 0.0,
    trunc: Truncation::new(4.0, 1.0)?,
    gaussian: false,
    eps,
  })
}

/// Refinement stability of the sup moment.
pub fn moment_refinement(
  problem: &Problem,
  p: f64,
  replicates: usize,
  seed: u64,
  max_iters: usize,
  tol: f64,
) -> Result<(Outcome, MomentScan)> {
  let scan = moment_bound_scan(problem, p, replicates, seed, Engine::Auto, max_iters, tol)?;
  let mut out = Outcome::default();
  out.line(
    "sup E|u|^p stable under mesh halving and replicate doubling",
    scan.record.pass,
    format!(
      "sup {:.5} +- {:.5} ({} reps, nx {}) -> {:.5} +- {:.5} ({} reps, nx {}), drift {:.2}% (gate 10%), \
       difference {:.2} combined SE; excluded {} / {}",
      scan.coarse.sup,
      scan.coarse.sup_se,
      scan.coarse.replicates,
      (2.0 * problem.grid.radius / scan.coarse.dx).round(),
      scan.fine.sup,
      scan.fine.sup_se,
      scan.fine.replicates,
      (2.0 * problem.grid.radius / scan.fine.dx).round(),
      100.0 * scan.drift,
      (scan.fine.sup - scan.coarse.sup).abs() / scan.coarse.sup_se.hypot(scan.fine.sup_se),
      scan.coarse.excluded,
      scan.fine.excluded
    ),
  );
  out.records.push(scan.record.clone());
  Ok((out, scan))
}

/// Picard convergence from recorded distance logs, plus the additive case.
pub fn picard_convergence(logs: &[Vec<f64>], tol: f64, seed: u64, problem: &Problem) -> Result<Outcome> {
  let mut out = Outcome::default();
  let ok = logs
    .iter()
    .filter(|l| l.last().is_some_and(|&d| d <= tol) && l.iter().all(|d| d.is_finite()))
    .count();
  let frac = ok as f64 / logs.len().max(1) as f64;
  let longest = logs.iter().map(|l| l.len()).max().unwrap_or(0);
  out.line(
    "Picard iterates Cauchy within tolerance",
    frac >= 0.99,
    format!("{ok} / {} replicates reached {tol:e} (gate 99%), longest log {longest}", logs.len()),
  );
  let additive = Problem {
    sigma: Sigma::Constant { c: 1.0 },
    ..problem.clone()
  };
  let mut worst = 0;
  for rep in 0..20u64 {
    let noise = NoiseRealization::sample(&additive.measure, additive.grid.window()?, additive.eps, seed, rep)?;
    let path = picard_solve(&additive, &noise, Engine::Auto, 10, 0.0)?;
    // the second sweep must reproduce the first exactly
    let effective = path.log.iter().position(|&d| d == 0.0).unwrap_or(usize::MAX);
    worst = worst.max(effective);
  }
  out.line("additive case converges in one effective iteration", worst == 1, format!("effective iterations {worst}"));
  Ok(out)
}

/// Settings of the solution-level regularity experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularitySettings {
  /// Replicates of the compound-Poisson jump-time check.
  pub jump_replicates: usize,
  /// Replicates of the small-jump exponent fit.
  pub replicates: usize,
  pub bootstrap: usize,
  /// Increment lags in time steps (at most 4).
  pub steps: Vec<usize>,
  pub r: f64,
  pub eps: f64,
}

/// Kernel-path anchors, the delta scan and the solution-level diagnostics.
pub fn path_regularity(seed: u64, s: &RegularitySettings) -> Result<(Outcome, Vec<PathProfile>, ExponentFit, Vec<crate::sobolev::SobolevProfile>)> {
  let mut out = Outcome::default();
  let hs: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
  let mut profiles = Vec::new();
  let p2 = kernel_path_profile(2, 0.0, [0.0, 0.0], -1.5, &hs, 200.0)?;
  let ok = vanishes_monotonically(&hs, &p2.right, 0.1);
  out.line(
    "d = 2, r = -1.5: right increments vanish monotonically",
    ok,
    format!(
      "||F(h) - F(0)||^2 over h = 1..1/32: {}; distance to the zero field: {}",
      fmt_list(&p2.right),
      fmt_list(&p2.to_zero)
    ),
  );
  for r in [0.0, 0.2] {
    let p1 = kernel_path_profile(1, 0.0, [0.0, 0.0], r, &hs, 2000.0)?;
    let ok = vanishes_monotonically(&hs, &p1.right, 0.1);
    out.line(
      &format!("d = 1, r = {r}: right increments vanish monotonically"),
      ok,
      fmt_list(&p1.right),
    );
    profiles.push(p1);
  }
  let jump_rel = (p2.jump / (2.0 * PI) - 1.0).abs();
  out.line(
    "d = 2 left jump equals ||delta||^2 = 2 pi (band 200)",
    jump_rel <= 0.02,
    format!("jump {:.5} vs {:.5}, rel err {:.2}% (gate 2%)", p2.jump, 2.0 * PI, 100.0 * jump_rel),
  );
  profiles.insert(0, p2);
  let radii = doubling(25.0, 8);
  let s1 = delta_membership_scan(2, -1.0, &radii)?;
  let s15 = delta_membership_scan(2, -1.5, &radii)?;
  out.line(
    "delta scan: diverges at r = -1, converges at r = -1.5",
    s1.verdict == Verdict::Diverges && s15.verdict == Verdict::Converges,
    format!(
      "r = -1: {:?} (last ratio {:.4}); r = -1.5: {:?} (limit {:.5})",
      s1.verdict,
      s1.ratios.last().unwrap_or(&f64::NAN),
      s15.verdict,
      s15.limit.unwrap_or(f64::NAN)
    ),
  );
  let (jumps_line, sprofiles) = compound_poisson_jumps(seed, s)?;
  out.lines.push(jumps_line);
  let fit = small_jump_exponent(seed, s)?;
  let pass = fit.ci.is_some_and(|c| c.0 >= 2.0);
  out.line(
    "small-jump increment moment exponent >= 2 (95% bootstrap CI)",
    pass,
    format!(
      "slope {:.3}, CI {:?}, product means {}",
      fit.slope.unwrap_or(f64::NAN),
      fit.ci.map(|c| (round4(c.0), round4(c.1))),
      fmt_list(&fit.product_means)
    ),
  );
  Ok((out, profiles, fit, sprofiles))
}

fn round4(x: f64) -> f64 {
  (x * 1e4).round() / 1e4
}

fn fmt_list(v: &[f64]) -> String {
  let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
  format!("[{}]", parts.join(", "))
}

/// Grid of the d = 2 regularity experiments: T = 0.75, A = 0.5,
/// R = 1.25, dx = dt = 1/16.
pub fn regularity_grid() -> Result<Grid> {
  Grid::new(2, 0.75, 0.5, 1.25, 1.0 / 16.0, 1.0 / 16.0)
}

fn regularity_problem(eps: f64) -> Result<Problem> {
  Ok(Problem {
    grid: regularity_grid()?,
    init: InitialData::Zero,
    sigma: Sigma::Constant { c: 1.0 },
    measure: LevyMeasure::symmetric(1.5)?,
    mode: NoiseMode::WithDrift,
    drift: 0.0,
    trunc: Truncation::new(4.0, 1.0)?,
    gaussian: false,
    eps,
  })
}

/// Evaluation sub-grid |x_i| <= A of a lattice.
fn eval_block(g: &Grid) -> Result<(Vec<usize>, SpatialGrid)> {
  let l = g.lattice()?;
  let idx: Vec<usize> = (0..l.nx).filter(|&j| l.coord(j).abs() <= g.eval_radius).collect();
  let n = idx.len();
  let nodes = if l.d == 1 {
    idx.clone()
  } else {
    idx.iter().flat_map(|&a| idx.iter().map(move |&b| a * l.nx + b)).collect()
  };
  Ok((nodes, SpatialGrid::new(l.d, n, l.dx, l.coord(idx[0]))?))
}

/// H^r profile of the compound-Poisson component on the evaluation block;
/// detected jump times must coincide with the atom times in every
/// replicate.
fn compound_poisson_jumps(seed: u64, s: &RegularitySettings) -> Result<(Line, Vec<crate::sobolev::SobolevProfile>)> {
  let problem = regularity_problem(s.eps)?;
  let l = problem.grid.lattice()?;
  let (nodes, sg) = eval_block(&problem.grid)?;
  let window = WindowFn::new([0.0, 0.0], problem.grid.eval_radius - 0.5 * l.dx, 1.0)?;
  let ks: Vec<usize> = (0..=l.nt).collect();
  let times: Vec<f64> = ks.iter().map(|&k| l.time(k)).collect();
  let results: Vec<(bool, usize, usize, usize, crate::sobolev::SobolevProfile)> = (0..s.jump_replicates as u64)
    .into_par_iter()
    .map(|rep| -> Result<_> {
      let mut noise = NoiseRealization::sample(&problem.measure, problem.grid.window()?, 1.0, seed, rep)?;
      noise.small.clear();
      let src = additive_sources(&problem, &noise)?;
      let vals = convolve_at(&src, &ks, &nodes);
      let snaps: Vec<Vec<f64>> = vals.iter().map(|row| row.iter().map(|v| v[1]).collect()).collect();
      let prof = sobolev_profile(&sg, |k| &snaps[k][..], &times, s.r, Some(&window))?;
      // atoms whose cone reaches the window before T
      let atoms: Vec<f64> = src
        .atoms
        .iter()
        .filter(|(a, _)| norm(2, &a.x) - window.radius < problem.grid.t_end - a.t)
        .map(|(a, _)| a.t)
        .collect();
      let (hit, spurious) = match_times(&atoms, &prof.jumps, l.dt);
      let (khit, _) = match_times(&atoms, &prof.kinks, l.dt);
      Ok((hit == atoms.len() && spurious == 0, atoms.len(), hit, khit, prof))
    })
    .collect::<Result<_>>()?;
  let ok = results.iter().filter(|r| r.0).count();
  let atoms: usize = results.iter().map(|r| r.1).sum();
  let hits: usize = results.iter().map(|r| r.2).sum();
  let khits: usize = results.iter().map(|r| r.3).sum();
  let line = Line {
    label: "compound-Poisson H^r jump times coincide with atom times".into(),
    pass: ok == results.len(),
    detail: format!(
      "{ok} / {} replicates exact; {hits} / {atoms} atoms matched by a jump, {khits} / {atoms} by a kink",
      results.len()
    ),
  };
  Ok((line, results.into_iter().take(5).map(|r| r.4).collect()))
}

/// Product-moment exponent of the small-jump component at t = 0.5 with
/// h = dt, 2 dt, 4 dt.
fn small_jump_exponent(seed: u64, s: &RegularitySettings) -> Result<ExponentFit> {
  let problem = regularity_problem(s.eps)?;
  let l = problem.grid.lattice()?;
  let (nodes, sg) = eval_block(&problem.grid)?;
  let window = WindowFn::new([0.0, 0.0], problem.grid.eval_radius - 0.5 * l.dx, 1.0)?;
  let k0 = 8;
  let steps = &s.steps;
  let reach = steps.iter().copied().max().unwrap_or(0);
  if reach == 0 || reach > 4 {
    return Err(crate::Error::Parameter(format!("increment lags must lie in 1..=4 steps, got {steps:?}")));
  }
  let ks: Vec<usize> = (k0 - reach..=k0 + reach).collect();
  let samples: Vec<Vec<IncrementRecord>> = (0..s.replicates as u64)
    .into_par_iter()
    .map(|rep| -> Result<Vec<IncrementRecord>> {
      let mut noise = NoiseRealization::sample(&problem.measure, problem.grid.window()?, s.eps, seed, rep)?;
      noise.big.clear();
      let src = additive_sources(&problem, &noise)?;
      let vals = convolve_at(&src, &ks, &nodes);
      let snaps: Vec<Vec<f64>> = vals.iter().map(|row| row.iter().map(|v| v[0]).collect()).collect();
      snapshot_increments(&sg, |k| &snaps[k - (k0 - reach)][..], k0, steps, l.dt, s.r, Some(&window))
    })
    .collect::<Result<_>>()?;
  fit_increment_exponent(&samples, s.bootstrap, seed)
}

/// Finite speed of propagation: doubling R changes nothing on |x| <= A.
pub fn finite_speed(seed: u64, replicates: usize) -> Result<Outcome> {
  let mut out = Outcome::default();
  let cases = [
    (Grid::new(1, 1.0, 1.0, 2.0 + 1.0 / 16.0, 1.0 / 16.0, 1.0 / 16.0)?, Sigma::Linear { slope: 1.0, intercept: 0.0 }),
    (
      Grid::new(2, 0.5, 0.5, 1.125, 0.125, 0.125)?,
      Sigma::BoundedSaturating { a: 0.5, b: 1.0 },
    ),
  ];
  for (grid, sigma) in cases {
    let base = Problem {
      grid,
      init: InitialData::PlaneWave { k: 1.0, a: 1.0, b: 0.5 },
      sigma,
      measure: LevyMeasure::stable(1.5, 1.0, 0.5)?,
      mode: NoiseMode::WithDrift,
      drift: 0.2,
      trunc: Truncation::new(4.0, 1.0)?,
      gaussian: true,
      eps: 0.05,
    };
    let big = Problem {
      grid: grid.doubled(),
      ..base.clone()
    };
    let diffs: Vec<f64> = (0..replicates as u64)
      .into_par_iter()
      .map(|rep| -> Result<f64> {
        let n1 = NoiseRealization::sample(&base.measure, base.grid.window()?, base.eps, seed, rep)?;
        let n2 = NoiseRealization::sample(&big.measure, big.grid.window()?, big.eps, seed, rep)?;
        let a = picard_solve(&base, &n1, Engine::Direct, 400, 0.0)?;
        let b = picard_solve(&big, &n2, Engine::Direct, 400, 0.0)?;
        let (la, lb) = (a.lattice, b.lattice);
        let off = (lb.half() - la.half()) as usize;
        let mut worst: f64 = 0.0;
        for k in 0..=la.nt {
          for i in a.eval_nodes() {
            let jb = if la.d == 1 {
              i + off
            } else {
              (i / la.nx + off) * lb.nx + i % la.nx + off
            };
            worst = worst.max((a.u[k * la.points() + i] - b.u[k * lb.points() + jb]).abs());
          }
        }
        Ok(worst)
      })
      .collect::<Result<_>>()?;
    let worst = diffs.iter().cloned().fold(0.0, f64::max);
    out.line(
      &format!("d = {}: u on |x| <= A unchanged when R doubles", grid.d),
      worst == 0.0,
      format!("max |diff| {worst:e} over {replicates} replicates (R = {} -> {})", grid.radius, 2.0 * grid.radius),
    );
  }
  Ok(out)
}

/// Squared H^r norm of a snapshot on its lattice, optionally windowed.
pub fn snapshot_norm(grid: &Grid, snapshot: &[f64], r: f64, window: Option<&WindowFn>) -> Result<f64> {
  let l = grid.lattice()?;
  Ok(hr_norm(&SpatialGrid::from(&l), snapshot, r, window, None)?.value)
}
