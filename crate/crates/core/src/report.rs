//! Check records shared by the kernel, Sobolev and moment checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
  pub check: String,
  /// Short tag naming the property under test.
  pub property: String,
  pub params: BTreeMap<String, f64>,
  pub lhs: f64,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub lhs_se: Option<f64>,
  pub rhs: f64,
  pub ratio: f64,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub mesh: Option<u32>,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub replicates: Option<u64>,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub seed: Option<u64>,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub note: Option<String>,
  pub pass: bool,
}

impl CheckRecord {
  pub fn new(check: &str, property: &str, lhs: f64, rhs: f64, pass: bool) -> Self {
    Self {
      check: check.into(),
      property: property.into(),
      params: BTreeMap::new(),
      lhs,
      lhs_se: None,
      rhs,
      ratio: ratio(lhs, rhs),
      mesh: None,
      replicates: None,
      seed: None,
      note: None,
      pass,
    }
  }

  pub fn param(mut self, k: &str, v: f64) -> Self {
    self.params.insert(k.into(), v);
    self
  }

  pub fn note(mut self, n: impl Into<String>) -> Self {
    self.note = Some(n.into());
    self
  }
}

/// lhs / rhs with 0/0 read as 1.
pub fn ratio(lhs: f64, rhs: f64) -> f64 {
  if lhs == 0.0 && rhs == 0.0 {
    1.0
  } else {
    lhs / rhs
  }
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: std::io::Write>(mut w: W, recs: &[CheckRecord]) -> crate::Result<()> {
  for r in recs {
    serde_json::to_writer(&mut w, r)?;
    w.write_all(b"\n")?;
  }
  Ok(())
}
