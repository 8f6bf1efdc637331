//! Uniform entropy integrals `J(δ) = ∫_0^δ sup_Q (1 + log N(τ‖F‖_Q))^{k/2} dτ`.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::function_class::{evaluate, EmpiricalMeasure, FunctionClass, MeasuredClass, VcCharacteristics};
use crate::quadrature::integrate;
use crate::sampler::fmt_float;

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta = {delta} outside (0, 1]")));
    }
    Ok(())
}

/// Integral over `[0, delta]` of the largest normalized covering integrand
/// among the supplied measures. The integrand is a step function whose jumps
/// sit at pairwise distances over `‖F‖_Q`; each step is integrated
/// separately to absolute tolerance 1e-6.
pub fn entropy_integral_measured(measured: &mut [MeasuredClass], delta: f64, k: usize) -> Result<f64> {
    check_delta(delta)?;
    if measured.is_empty() {
        return Err(invalid("entropy integral needs at least one measure"));
    }
    let mut cuts = vec![0.0, delta];
    for m in measured.iter_mut() {
        if m.envelope_norm > 0.0 {
            m.geometry.profile();
            let f = m.envelope_norm;
            cuts.extend(m.geometry.breakpoints().iter().map(|r| r / f).filter(|&t| t > 0.0 && t < delta));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let half_k = k as f64 / 2.0;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        // constant on (a, b): read it once at the midpoint
        let mid = 0.5 * (a + b);
        let level = measured
            .iter_mut()
            .map(|m| (1.0 + (m.normalized_cover(mid) as f64).ln()).powf(half_k))
            .fold(1.0, f64::max);
        total += integrate(|_| level, a, b, 1e-6 * (b - a), 0.0).value;
    }
    Ok(total)
}

/// [`entropy_integral_measured`] for a class evaluated on each measure.
pub fn entropy_integral_empirical(
    class: &FunctionClass,
    measures: &[EmpiricalMeasure],
    delta: f64,
    k: usize,
) -> Result<f64> {
    check_delta(delta)?;
    let mut measured = measured_classes(class, measures)?;
    entropy_integral_measured(&mut measured, delta, k)
}

pub fn measured_classes(class: &FunctionClass, measures: &[EmpiricalMeasure]) -> Result<Vec<MeasuredClass>> {
    if measures.is_empty() {
        return Err(invalid("entropy integral needs at least one measure"));
    }
    measures
        .iter()
        .map(|q| Ok(MeasuredClass::from_eval(&evaluate(class, &q.points)?, q)))
        .collect()
}

/// `∫_0^δ (1 + v log(A/τ))^{k/2} dτ`, integrated in `u = −log τ` so the
/// logarithmic singularity at zero becomes an exponentially decaying tail.
pub fn entropy_integral_vc(a: f64, v: f64, k: usize, delta: f64) -> Result<f64> {
    VcCharacteristics::new(a, v)?;
    check_delta(delta)?;
    let half_k = k as f64 / 2.0;
    let la = a.ln();
    let u0 = -delta.ln();
    let g = |u: f64| (1.0 + v * (la + u)).powf(half_k) * (-u).exp();
    let mut total = 0.0;
    // unit-width panels near the start, then wider ones through the tail
    let mut lo = u0;
    for width in [1.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        let hi = lo + width;
        total += integrate(g, lo, hi, 1e-13, 1e-14).value;
        lo = hi;
    }
    Ok(total)
}

/// `J` on a grid of `δ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyProfile {
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
    pub k: usize,
    pub method: String,
}

impl EntropyProfile {
    pub fn vc(vc: VcCharacteristics, k: usize, deltas: &[f64]) -> Result<Self> {
        let values = deltas.iter().map(|&d| entropy_integral_vc(vc.a, vc.v, k, d)).collect::<Result<_>>()?;
        Ok(EntropyProfile { deltas: deltas.to_vec(), values, k, method: "vc-analytic".into() })
    }

    pub fn empirical(measured: &mut [MeasuredClass], k: usize, deltas: &[f64]) -> Result<Self> {
        let values = deltas
            .iter()
            .map(|&d| entropy_integral_measured(measured, d, k))
            .collect::<Result<_>>()?;
        Ok(EntropyProfile { deltas: deltas.to_vec(), values, k, method: "empirical".into() })
    }

    /// `δ_j = j/n`, `j = 1..n`.
    pub fn uniform_grid(n: usize) -> Vec<f64> {
        (1..=n).map(|j| j as f64 / n as f64).collect()
    }

    /// Piecewise-linear interpolation through `(0, 0)` and the grid.
    pub fn interpolate(&self, delta: f64) -> f64 {
        let j = self.deltas.partition_point(|&d| d < delta);
        let (x0, y0) = if j == 0 { (0.0, 0.0) } else { (self.deltas[j - 1], self.values[j - 1]) };
        if j >= self.deltas.len() {
            return *self.values.last().unwrap_or(&0.0);
        }
        let (x1, y1) = (self.deltas[j], self.values[j]);
        if x1 == x0 {
            return y1;
        }
        y0 + (y1 - y0) * (delta - x0) / (x1 - x0)
    }

    /// CSV with columns `delta,value,method`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "delta,value,method")?;
        for (d, v) in self.deltas.iter().zip(&self.values) {
            writeln!(w, "{},{},{}", fmt_float(*d), fmt_float(*v), self.method)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub pass: bool,
    pub worst_violation: f64,
}

impl PropertyCheck {
    fn from_defects<I: IntoIterator<Item = f64>>(defects: I, tol: f64) -> Self {
        let worst = defects.into_iter().fold(0.0f64, f64::max);
        PropertyCheck { pass: worst <= tol, worst_violation: worst }
    }
}

/// Structural properties of an entropy profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JPropertiesReport {
    /// Non-decreasing and concave along the grid.
    pub monotone_concave: PropertyCheck,
    /// `J(cδ) ≤ c·J(δ)` for `c ∈ {2, 5}` at grid points with `cδ` on the grid.
    pub scaling: PropertyCheck,
    /// `J(δ)/δ` non-increasing.
    pub ratio_decreasing: PropertyCheck,
    /// `(x, y) ↦ J(√(x/y))·√y` midpoint concave on `0 < x ≤ y ≤ 1`, using the
    /// interpolated profile.
    pub joint_concavity: PropertyCheck,
}

impl JPropertiesReport {
    pub fn passed(&self) -> bool {
        self.monotone_concave.pass && self.scaling.pass && self.ratio_decreasing.pass && self.joint_concavity.pass
    }

    pub fn worst_violation(&self) -> f64 {
        [&self.monotone_concave, &self.scaling, &self.ratio_decreasing, &self.joint_concavity]
            .iter()
            .map(|c| c.worst_violation)
            .fold(0.0, f64::max)
    }
}

pub const J_TOLERANCE: f64 = 1e-6;

pub fn check_j_properties(profile: &EntropyProfile) -> Result<JPropertiesReport> {
    check_j_properties_with(profile, J_TOLERANCE)
}

pub fn check_j_properties_with(profile: &EntropyProfile, tol: f64) -> Result<JPropertiesReport> {
    let d = &profile.deltas;
    let j = &profile.values;
    if d.len() < 5 || d.len() != j.len() {
        return Err(invalid("profile needs at least five grid points"));
    }
    if d.windows(2).any(|w| !(w[1] > w[0])) || d[0] <= 0.0 || (d[d.len() - 1] - 1.0).abs() > 1e-12 {
        return Err(invalid("profile grid must be increasing inside (0, 1] and end at 1"));
    }

    // (i): include the origin so the first chord is checked as well
    let mut xs = vec![0.0];
    xs.extend_from_slice(d);
    let mut ys = vec![0.0];
    ys.extend_from_slice(j);
    let mut defects = Vec::new();
    for w in ys.windows(2) {
        defects.push(w[0] - w[1]);
    }
    for i in 1..xs.len() - 1 {
        let t = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
        let chord = ys[i - 1] + t * (ys[i + 1] - ys[i - 1]);
        defects.push(chord - ys[i]);
    }
    let monotone_concave = PropertyCheck::from_defects(defects, tol);

    // (ii)
    let mut defects = Vec::new();
    for c in [2.0, 5.0] {
        for (a, &da) in d.iter().enumerate() {
            let target = c * da;
            if target > 1.0 + 1e-12 {
                continue;
            }
            if let Some(b) = d.iter().position(|&x| (x - target).abs() <= 1e-12 * target.max(1.0)) {
                defects.push(j[b] - c * j[a]);
            }
        }
    }
    let scaling = PropertyCheck::from_defects(defects, tol);

    // (iii)
    let defects = (0..d.len() - 1).map(|a| j[a + 1] - j[a] * d[a + 1] / d[a]);
    let ratio_decreasing = PropertyCheck::from_defects(defects, tol);

    // (iv)
    let phi = |x: f64, y: f64| profile.interpolate((x / y).sqrt()) * y.sqrt();
    let g = 12;
    let pts: Vec<(f64, f64)> = (1..=g)
        .flat_map(|a| (1..=g).map(move |b| (a as f64 / g as f64, b as f64 / g as f64)))
        .filter(|(x, y)| x <= y)
        .collect();
    let mut worst = 0.0f64;
    for (i, p) in pts.iter().enumerate() {
        for q in &pts[i + 1..] {
            let mid = phi(0.5 * (p.0 + q.0), 0.5 * (p.1 + q.1));
            worst = worst.max(0.5 * (phi(p.0, p.1) + phi(q.0, q.1)) - mid);
        }
    }
    let joint_concavity = PropertyCheck { pass: worst <= tol, worst_violation: worst };

    Ok(JPropertiesReport { monotone_concave, scaling, ratio_decreasing, joint_concavity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::FunctionClass;
    use crate::model::AdditiveModel;
    use crate::rng::CounterStream;
    use std::f64::consts::E;

    fn measures(count: usize, size: usize) -> Vec<EmpiricalMeasure> {
        let mut s = CounterStream::new(77);
        (0..count)
            .map(|_| EmpiricalMeasure::uniform((0..size).map(|_| s.uniform()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn singleton_class_is_identity() {
        let qs = measures(3, 10);
        for &d in &[0.1, 0.5, 1.0] {
            let j = entropy_integral_empirical(&FunctionClass::zero(), &qs, d, 2).unwrap();
            assert!((j - d).abs() < 1e-15);
        }
        assert!(entropy_integral_empirical(&FunctionClass::zero(), &qs, 1.5, 1).is_err());
    }

    #[test]
    fn empirical_matches_fine_riemann_sum() {
        let model = AdditiveModel::new(1).unwrap();
        let thetas: Vec<f64> = (1..=20).map(|j| j as f64 / 21.0).collect();
        let class = FunctionClass::half_interval(&model, &thetas);
        let qs = measures(5, 50);
        let delta = 0.6;
        let j = entropy_integral_empirical(&class, &qs, delta, 1).unwrap();

        let mut measured = measured_classes(&class, &qs).unwrap();
        let nodes = 100_000;
        let h = delta / nodes as f64;
        let riemann: f64 = (0..nodes)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                measured
                    .iter_mut()
                    .map(|m| (1.0 + (m.normalized_cover(t) as f64).ln()).sqrt())
                    .fold(1.0, f64::max)
            })
            .sum::<f64>()
            * h;
        assert!((j - riemann).abs() < 1e-4, "{j} vs {riemann}");

        let grid = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0];
        let vals: Vec<f64> = grid.iter().map(|&d| entropy_integral_empirical(&class, &qs, d, 1).unwrap()).collect();
        for (v, d) in vals.iter().zip(grid) {
            assert!(*v >= d - 1e-12);
        }
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn vc_integral_closed_forms() {
        // e²·Γ(3/2, 2)
        let oracle = E * E * statrs::function::gamma::gamma_ur(1.5, 2.0) * statrs::function::gamma::gamma(1.5);
        let j = entropy_integral_vc(E, 1.0, 1, 1.0).unwrap();
        assert!((j - oracle).abs() < 1e-8, "{j} vs {oracle}");
        assert!((j - 1.712).abs() < 5e-4);

        for &(a, v, d) in &[(E, 1.0, 1.0), (10.0, 2.5, 0.3), (3.0, 1.0, 1e-3)] {
            let exact = d * (1.0 + v + v * (a / d).ln());
            assert!((entropy_integral_vc(a, v, 2, d).unwrap() - exact).abs() < 1e-8);
        }
        assert!(entropy_integral_vc(E, 1.0, 1, 1e-12).unwrap() < 1e-10);
        assert!(entropy_integral_vc(2.0, 1.0, 1, 0.5).is_err());
        assert!(entropy_integral_vc(E, 0.5, 1, 0.5).is_err());
    }

    #[test]
    fn vc_incomplete_gamma_general() {
        // ∫_0^δ (1+v log(A/τ))^{k/2} dτ = (A/v) e^{1/v} v^{k/2+1} Γ(k/2+1, s0/v)
        use statrs::function::gamma::{gamma, gamma_ur};
        for &(a, v, k, d) in &[(10.0, 1.5, 3usize, 0.7), (E, 2.0, 2, 0.2), (5.0, 1.0, 4, 1.0)] {
            let s0 = 1.0 + v * (a / d).ln();
            let p = k as f64 / 2.0 + 1.0;
            let oracle = (a / v) * (1.0 / v).exp() * v.powf(p) * gamma_ur(p, s0 / v) * gamma(p);
            let j = entropy_integral_vc(a, v, k, d).unwrap();
            assert!((j - oracle).abs() < 1e-8 * oracle.max(1.0), "{j} vs {oracle}");
        }
    }

    #[test]
    fn properties_of_identity_profile() {
        let grid = EntropyProfile::uniform_grid(20);
        let p = EntropyProfile { deltas: grid.clone(), values: grid, k: 1, method: "empirical".into() };
        let r = check_j_properties(&p).unwrap();
        assert!(r.passed());
        assert!(r.worst_violation() < 1e-15);
    }

    #[test]
    fn properties_of_vc_profiles() {
        let grid = EntropyProfile::uniform_grid(20);
        for &(a, v, k) in &[(E, 1.0, 1), (E, 2.0, 2), (10.0, 1.5, 3)] {
            let p = EntropyProfile::vc(VcCharacteristics::new(a, v).unwrap(), k, &grid).unwrap();
            let r = check_j_properties(&p).unwrap();
            assert!(r.passed(), "{a} {v} {k}: {r:?}");
        }
    }

    #[test]
    fn corrupted_profile_is_flagged() {
        let grid = EntropyProfile::uniform_grid(20);
        let mut p = EntropyProfile::vc(VcCharacteristics::new(E, 1.0).unwrap(), 1, &grid).unwrap();
        p.values[9] *= 0.9;
        let r = check_j_properties(&p).unwrap();
        assert!(!r.monotone_concave.pass);
        assert!(r.worst_violation() > 1e-3);
    }

    #[test]
    fn csv_export() {
        let p = EntropyProfile::vc(VcCharacteristics::new(E, 1.0).unwrap(), 1, &[0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("delta,value,method\n0.5,"));
        assert!(s.trim_end().ends_with("vc-analytic"));
    }
}
