//! Gamma-family helpers.

pub fn ln_gamma(x: f64) -> f64 {
  libm::lgamma(x)
}

pub fn gamma(x: f64) -> f64 {
  libm::tgamma(x)
}

/// Euler beta function for positive arguments.
pub fn beta(a: f64, b: f64) -> f64 {
  (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// Volume of the unit ball in dimension 1 or 2.
pub fn unit_ball_volume(d: usize) -> f64 {
  match d {
    1 => 2.0,
    2 => std::f64::consts::PI,
    _ => f64::NAN,
  }
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn known_values() {
    assert!((gamma(5.0) - 24.0).abs() < 1e-12);
    assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    assert!((beta(2.0, 3.0) - 1.0 / 12.0).abs() < 1e-14);
    assert!((beta(0.5, 0.5) - std::f64::consts::PI).abs() < 1e-12);
  }
}
