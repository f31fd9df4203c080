//! Space-time lattice shared by the noise binning and the solver.
//!
//! Time nodes are t_k = k dt for k = 0..=nt. Spatial nodes sit at cell
//! centres y_j = -R + (j + 1/2) dx, j = 0..nx, in each coordinate. Cell
//! (m, j) covers [t_m, t_{m+1}) x [y_j - dx/2, y_j + dx/2)^d.
//!
//! R must be a whole multiple of dx. Coordinates and cell lookups are
//! computed from absolute indices (cell [a dx, (a+1) dx) has index a), so
//! the same physical node gets bit-identical coordinates in every box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
  pub d: usize,
  pub dt: f64,
  pub dx: f64,
  pub nt: usize,
  pub nx: usize,
  /// Half-width R of the spatial box [-R, R]^d.
  pub radius: f64,
}

fn whole(ratio: f64, what: &str) -> Result<usize> {
  let n = ratio.round();
  if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
    return Err(Error::Parameter(format!(
      "{what} must be a positive whole multiple of the step (ratio {ratio})"
    )));
  }
  Ok(n as usize)
}

impl Lattice {
  pub fn new(d: usize, t_end: f64, radius: f64, dt: f64, dx: f64) -> Result<Self> {
    if d != 1 && d != 2 {
      return Err(Error::Parameter(format!("dimension must be 1 or 2, got {d}")));
    }
    if !(dt > 0.0 && dx > 0.0 && t_end > 0.0 && radius > 0.0) {
      return Err(Error::Parameter("lattice steps and extents must be positive".into()));
    }
    let nt = whole(t_end / dt, "T")?;
    let nx = 2 * whole(radius / dx, "R")?;
    Ok(Self {
      d,
      dt,
      dx,
      nt,
      nx,
      radius,
    })
  }

  pub fn t_end(&self) -> f64 {
    self.nt as f64 * self.dt
  }

  pub fn time(&self, k: usize) -> f64 {
    k as f64 * self.dt
  }

  /// Offset from array index to absolute cell index.
  pub fn half(&self) -> i64 {
    (self.nx / 2) as i64
  }

  pub fn coord(&self, j: usize) -> f64 {
    ((j as i64 - self.half()) as f64 + 0.5) * self.dx
  }

  /// Absolute index of the cell containing v along one axis.
  pub fn abs_cell(&self, v: f64) -> i64 {
    (v / self.dx).floor() as i64
  }

  /// Linear interpolation stencil along one axis: lower node array index
  /// and weight of the upper node, clamped to the node range.
  pub fn stencil(&self, v: f64) -> (usize, f64) {
    let q = v / self.dx - 0.5;
    let a = q.floor();
    let frac = q - a;
    let j = a as i64 + self.half();
    if j < 0 {
      (0, 0.0)
    } else if j as usize >= self.nx - 1 {
      (self.nx - 2, 1.0)
    } else {
      (j as usize, frac)
    }
  }

  /// Interpolates a slice of node values at x (linear in d = 1, bilinear
  /// in d = 2), holding the edge values outside the node range.
  pub fn interpolate(&self, slice: &[f64], x: &[f64; 2]) -> f64 {
    let (j0, f0) = self.stencil(x[0]);
    if self.d == 1 {
      return slice[j0] * (1.0 - f0) + slice[j0 + 1] * f0;
    }
    let (j1, f1) = self.stencil(x[1]);
    let n = self.nx;
    let v = |a: usize, b: usize| slice[a * n + b];
    (v(j0, j1) * (1.0 - f1) + v(j0, j1 + 1) * f1) * (1.0 - f0)
      + (v(j0 + 1, j1) * (1.0 - f1) + v(j0 + 1, j1 + 1) * f1) * f0
  }

  /// Spatial nodes per time slice.
  pub fn points(&self) -> usize {
    self.nx.pow(self.d as u32)
  }

  /// Coordinates of flat spatial index `i` (row-major, last axis fastest).
  pub fn position(&self, i: usize) -> [f64; 2] {
    match self.d {
      1 => [self.coord(i), 0.0],
      _ => [self.coord(i / self.nx), self.coord(i % self.nx)],
    }
  }

  pub fn cell_volume(&self) -> f64 {
    self.dt * self.dx.powi(self.d as i32)
  }

  /// Cell holding a space-time point, if inside the box.
  pub fn cell_of(&self, t: f64, x: &[f64; 2]) -> Option<(usize, usize)> {
    let m = (t / self.dt).floor();
    if m < 0.0 || m as usize >= self.nt {
      return None;
    }
    let axis = |v: f64| -> Option<usize> {
      let j = self.abs_cell(v) + self.half();
      (j >= 0 && (j as usize) < self.nx).then_some(j as usize)
    };
    let i = match self.d {
      1 => axis(x[0])?,
      _ => axis(x[0])? * self.nx + axis(x[1])?,
    };
    Some((m as usize, i))
  }

  /// Grid halved in both steps over the same extents.
  pub fn refined(&self) -> Self {
    Self {
      dt: self.dt / 2.0,
      dx: self.dx / 2.0,
      nt: self.nt * 2,
      nx: self.nx * 2,
      ..*self
    }
  }
}

pub fn norm(d: usize, x: &[f64; 2]) -> f64 {
  if d == 1 {
    x[0].abs()
  } else {
    x[0].hypot(x[1])
  }
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn lattice_geometry() {
    let l = Lattice::new(1, 1.0, 2.0, 0.0625, 0.0625).unwrap();
    assert_eq!((l.nt, l.nx), (16, 64));
    assert!((l.coord(0) + 2.0 - 0.03125).abs() < 1e-15);
    assert_eq!(l.cell_of(0.5, &[0.0, 0.0]), Some((8, 32)));
    assert_eq!(l.cell_of(1.0, &[0.0, 0.0]), None);
    let f = l.refined();
    assert_eq!((f.nt, f.nx), (32, 128));
    assert!(Lattice::new(1, 1.0, 2.0, 0.3, 0.1).is_err());
    assert!(Lattice::new(1, 1.0, 1.0, 0.5, 0.4).is_err());
  }

  #[test]
  fn coordinates_independent_of_box() {
    let a = Lattice::new(1, 1.0, 2.0, 0.1, 0.1).unwrap();
    let b = Lattice::new(1, 1.0, 4.0, 0.1, 0.1).unwrap();
    let off = (b.half() - a.half()) as usize;
    for j in 0..a.nx {
      assert_eq!(a.coord(j).to_bits(), b.coord(j + off).to_bits());
    }
    let x = [0.537, 0.0];
    let (ja, fa) = a.stencil(x[0]);
    let (jb, fb) = b.stencil(x[0]);
    assert_eq!((ja + off, fa.to_bits()), (jb, fb.to_bits()));
  }

  #[test]
  fn interpolation_is_exact_for_affine() {
    let l = Lattice::new(2, 1.0, 1.0, 0.25, 0.25).unwrap();
    let vals: Vec<f64> = (0..l.points())
      .map(|i| {
        let p = l.position(i);
        1.0 + 2.0 * p[0] - 3.0 * p[1]
      })
      .collect();
    let x = [0.31, -0.44];
    assert!((l.interpolate(&vals, &x) - (1.0 + 0.62 + 1.32)).abs() < 1e-13);
  }

  #[test]
  fn flat_positions_2d() {
    let l = Lattice::new(2, 1.0, 1.0, 0.5, 0.5).unwrap();
    assert_eq!(l.points(), 16);
    let p = l.position(5);
    assert_eq!(p, [l.coord(1), l.coord(1)]);
    assert_eq!(l.cell_of(0.1, &p), Some((0, 5)));
  }
}
