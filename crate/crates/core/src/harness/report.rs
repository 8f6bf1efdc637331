//! Bound reports: rows of LHS/RHS ratios, fitted constants and stability.

use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::config::CheckType;
use crate::harness::lemmas::LemmaReport;
use crate::harness::rhs::{Rhs, Term};
use crate::lattice::{EVector, Shape};
use crate::sampler::fmt_float;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub shape: Shape,
    pub e: EVector,
    pub q: f64,
    /// Target `δ_e` for calibrated local rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub terms: Vec<Term>,
    pub factors: Vec<Term>,
    pub ratio: f64,
}

impl BoundRow {
    pub fn new(shape: &Shape, e: EVector, q: f64, delta: Option<f64>, lhs: f64, lhs_se: f64, rhs: Rhs) -> Result<Self> {
        let ratio = lhs / rhs.value;
        if !ratio.is_finite() {
            return Err(Error::Degenerate(format!("ratio {lhs}/{} is not finite", rhs.value)));
        }
        Ok(BoundRow {
            shape: shape.clone(),
            e,
            q,
            delta,
            lhs,
            lhs_se,
            rhs: rhs.value,
            terms: rhs.terms,
            factors: rhs.factors,
            ratio,
        })
    }
}

/// Rows sharing `(e, q)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub e: EVector,
    pub q: f64,
    pub rows: usize,
    pub fitted_constant: f64,
    pub stability: f64,
    /// LHS non-decreasing along the rows within `z` combined SE
    /// (calibrated local checks only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub check: CheckType,
    pub seed: u64,
    pub model: String,
    pub class: String,
    pub rows: Vec<BoundRow>,
    pub groups: Vec<GroupSummary>,
    /// Largest group constant; absent for the lemma suites.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<f64>,
    pub stability_threshold: f64,
    /// Per-direction entropy inputs (fitted VC characteristics and the like).
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemmas: Option<LemmaReport>,
    pub pass: bool,
}

/// Groups rows by `(e, q)` in first-seen order and summarizes each.
pub fn summarize(rows: &[BoundRow], stability_threshold: f64, monotone_z: Option<f64>) -> Vec<GroupSummary> {
    let mut keys: Vec<(EVector, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(e, q)| e == r.e && q == r.q) {
            keys.push((r.e, r.q));
        }
    }
    keys.into_iter()
        .map(|(e, q)| {
            let g: Vec<&BoundRow> = rows.iter().filter(|r| r.e == e && r.q == q).collect();
            let hi = g.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
            let lo = g.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
            let stability = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            let monotone = monotone_z.map(|z| {
                g.windows(2).all(|w| w[1].lhs >= w[0].lhs - z * (w[0].lhs_se.powi(2) + w[1].lhs_se.powi(2)).sqrt())
            });
            let pass = stability <= stability_threshold && monotone.unwrap_or(true);
            GroupSummary { e, q, rows: g.len(), fitted_constant: hi, stability, monotone, pass }
        })
        .collect()
}

/// Rounds every float in a JSON tree to 12 significant digits.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
            serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

impl BoundReport {
    pub fn to_json(&self) -> Result<Value> {
        // serde_json writes non-finite floats as null; keep them readable
        let mut v = serde_json::to_value(self)?;
        if let Some(s) = self.stability.filter(|s| !s.is_finite()) {
            v["stability"] = Value::String(s.to_string());
        }
        for (i, g) in self.groups.iter().enumerate() {
            if !g.stability.is_finite() {
                v["groups"][i]["stability"] = Value::String(g.stability.to_string());
            }
        }
        Ok(round_floats(v))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json()?)? + "\n")
    }

    /// Columns `shape,e,q,delta,lhs,lhs_se,rhs,term_1,term_2,ratio`; one
    /// line per row, suitable for gnuplot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "shape,e,q,delta,lhs,lhs_se,rhs,term_1,term_2,ratio")?;
        for r in &self.rows {
            let dims: Vec<String> = r.shape.dims().iter().map(|d| d.to_string()).collect();
            let t = |i: usize| r.terms.get(i).map(|t| fmt_float(t.value)).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                dims.join("x"),
                r.e,
                fmt_float(r.q),
                r.delta.map(fmt_float).unwrap_or_default(),
                fmt_float(r.lhs),
                fmt_float(r.lhs_se),
                fmt_float(r.rhs),
                t(0),
                t(1),
                fmt_float(r.ratio)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, e: &str, q: f64, lhs: f64, se: f64, rhs: f64) -> BoundRow {
        let r = Rhs { value: rhs, terms: vec![Term { name: "t".into(), value: rhs }], factors: vec![] };
        BoundRow::new(&Shape::square(n, 2).unwrap(), EVector::parse(e).unwrap(), q, None, lhs, se, r).unwrap()
    }

    #[test]
    fn groups_and_stability() {
        let rows = vec![
            row(8, "10", 1.0, 1.0, 0.01, 2.0),
            row(16, "10", 1.0, 1.5, 0.01, 2.0),
            row(8, "11", 1.0, 1.0, 0.01, 1.0),
            row(16, "11", 1.0, 1.0, 0.01, 1.0),
        ];
        let g = summarize(&rows, 2.0, None);
        assert_eq!(g.len(), 2);
        assert!((g[0].stability - 1.5).abs() < 1e-15);
        assert_eq!(g[0].fitted_constant, 0.75);
        assert!(g[0].pass && g[1].pass);
        for r in &rows {
            assert!(r.lhs <= g.iter().find(|x| x.e == r.e).unwrap().fitted_constant * r.rhs);
        }
        assert!(!summarize(&rows, 1.2, None)[0].pass);
    }

    #[test]
    fn monotone_within_se() {
        let rows = vec![row(8, "10", 1.0, 1.0, 0.01, 1.0), row(8, "10", 1.0, 0.98, 0.01, 1.0)];
        assert_eq!(summarize(&rows, 2.0, Some(4.0))[0].monotone, Some(true));
        let rows = vec![row(8, "10", 1.0, 1.0, 0.01, 1.0), row(8, "10", 1.0, 0.9, 0.01, 1.0)];
        let g = summarize(&rows, 2.0, Some(4.0));
        assert_eq!(g[0].monotone, Some(false));
        assert!(!g[0].pass);
    }

    #[test]
    fn rounding() {
        let v = round_floats(serde_json::json!({"a": [0.1 + 0.2, 1u64], "b": 1.0 / 3.0}));
        assert_eq!(v["a"][0].as_f64().unwrap(), 0.3);
        assert_eq!(v["a"][1].as_u64().unwrap(), 1);
        assert_eq!(v["b"].as_f64().unwrap(), 0.333333333333);
    }

    #[test]
    fn rejects_infinite_ratio() {
        let r = Rhs { value: 0.0, terms: vec![], factors: vec![] };
        assert!(BoundRow::new(&Shape::square(2, 2).unwrap(), EVector::parse("10").unwrap(), 1.0, None, 1.0, 0.0, r).is_err());
    }
}
