//! Function classes over a scalar sample space, their empirical L² geometry
//! and covering numbers.
//!
//! A class is stored as a small basis of real functions plus members that are
//! sparse linear combinations of basis elements. Projections and Hoeffding
//! components are linear in `f`, so they are computed once per basis element
//! and combined per member.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::model::{FactorSet, SeModel};
use crate::rng::{derive, factor_uniform, tag};

/// A real function of the sample point.
#[derive(Clone)]
pub enum Func {
    /// `constant + slope·x + Σ w·1(x ≤ t)`; projections are available whenever
    /// the model exposes conditional means and CDFs.
    Piecewise { constant: f64, slope: f64, steps: Vec<(f64, f64)> },
    /// Arbitrary map, `scale·g(x)`; projected by inner Monte Carlo only.
    Custom { label: String, map: Arc<dyn Fn(f64) -> f64 + Send + Sync>, scale: f64 },
}

impl Func {
    pub fn constant(c: f64) -> Func {
        Func::Piecewise { constant: c, slope: 0.0, steps: Vec::new() }
    }

    pub fn identity() -> Func {
        Func::Piecewise { constant: 0.0, slope: 1.0, steps: Vec::new() }
    }

    /// `1(x ≤ t)`.
    pub fn indicator_le(t: f64) -> Func {
        Func::Piecewise { constant: 0.0, slope: 0.0, steps: vec![(t, 1.0)] }
    }

    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(label: &str, map: F) -> Func {
        Func::Custom { label: label.to_string(), map: Arc::new(map), scale: 1.0 }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Func::Piecewise { constant, slope, steps } => {
                let mut v = *constant;
                if *slope != 0.0 {
                    v += slope * x;
                }
                for &(t, w) in steps {
                    if x <= t {
                        v += w;
                    }
                }
                v
            }
            Func::Custom { map, scale, .. } => scale * map(x),
        }
    }

    pub fn scaled(&self, c: f64) -> Func {
        match self {
            Func::Piecewise { constant, slope, steps } => Func::Piecewise {
                constant: c * constant,
                slope: c * slope,
                steps: steps.iter().map(|&(t, w)| (t, c * w)).collect(),
            },
            Func::Custom { label, map, scale } => {
                Func::Custom { label: label.clone(), map: map.clone(), scale: c * scale }
            }
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            Func::Piecewise { constant, slope, steps } if *slope == 0.0 && steps.is_empty() => Some(*constant),
            _ => None,
        }
    }

    /// `E[f(X) | retained factors]` in closed form, when the model allows it.
    pub fn analytic_projection(&self, model: &dyn SeModel, retained: &FactorSet) -> Option<f64> {
        match self {
            Func::Piecewise { constant, slope, steps } => {
                let mut v = *constant;
                if *slope != 0.0 {
                    v += slope * model.conditional_mean(retained)?;
                }
                for &(t, w) in steps {
                    v += w * model.conditional_cdf(retained, t)?;
                }
                Some(v)
            }
            Func::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Func::Piecewise { constant, slope, steps } => f
                .debug_struct("Piecewise")
                .field("constant", constant)
                .field("slope", slope)
                .field("steps", steps)
                .finish(),
            Func::Custom { label, scale, .. } => write!(f, "Custom({label} x {scale})"),
        }
    }
}

/// One class member `Σ c_b·basis_b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Member {
    pub label: String,
    pub theta: Vec<f64>,
    pub terms: Vec<(usize, f64)>,
}

impl Member {
    #[inline]
    pub fn combine(&self, basis_values: &[f64]) -> f64 {
        self.terms.iter().map(|&(b, c)| c * basis_values[b]).sum()
    }
}

/// VC characteristics `(A, v)`: `sup_Q N(ε‖F‖_Q) ≤ (A/ε)^v` for `ε ∈ (0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VcCharacteristics {
    pub a: f64,
    pub v: f64,
}

impl VcCharacteristics {
    pub fn new(a: f64, v: f64) -> Result<Self> {
        if !(a >= std::f64::consts::E) || !(v >= 1.0) || !a.is_finite() || !v.is_finite() {
            return Err(invalid(format!("VC characteristics need A ≥ e and v ≥ 1, got A = {a}, v = {v}")));
        }
        Ok(VcCharacteristics { a, v })
    }
}

/// A finite skeleton `{f_θ}` with envelope.
#[derive(Clone, Debug)]
pub struct FunctionClass {
    pub name: String,
    pub basis: Vec<Func>,
    pub members: Vec<Member>,
    pub envelope: Func,
    pub vc: Option<VcCharacteristics>,
    pub centered: bool,
}

impl FunctionClass {
    pub fn new(name: &str, basis: Vec<Func>, members: Vec<Member>, envelope: Func) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("function class skeleton is empty"));
        }
        for m in &members {
            if let Some(&(b, _)) = m.terms.iter().find(|(b, _)| *b >= basis.len()) {
                return Err(invalid(format!("member {} references missing basis element {b}", m.label)));
            }
        }
        Ok(FunctionClass { name: name.to_string(), basis, members, envelope, vc: None, centered: false })
    }

    /// `{f}` with envelope `F`.
    pub fn singleton(label: &str, f: Func, envelope: Func) -> Self {
        FunctionClass {
            name: label.to_string(),
            basis: vec![f],
            members: vec![Member { label: label.to_string(), theta: Vec::new(), terms: vec![(0, 1.0)] }],
            envelope,
            vc: None,
            centered: false,
        }
    }

    /// `{f ≡ 0}` with unit envelope.
    pub fn zero() -> Self {
        let mut c = Self::singleton("zero", Func::constant(0.0), Func::constant(1.0));
        c.centered = true;
        c
    }

    /// `{x − E X}` with the constant envelope `sup |x − E X|` over the model's
    /// support.
    pub fn identity(model: &dyn SeModel) -> Self {
        let mut c = Self::singleton("identity", Func::identity(), Func::constant(1.0));
        let means = c.center(model);
        let (lo, hi) = model.support();
        let mu = means[0];
        c.envelope = Func::constant((hi - mu).abs().max((mu - lo).abs()));
        c
    }

    /// Uncentered `{1(x ≤ θ)}` over `thetas`, envelope 1.
    pub fn half_interval_raw(thetas: &[f64]) -> Self {
        let basis: Vec<Func> = thetas.iter().map(|&t| Func::indicator_le(t)).collect();
        let members = thetas
            .iter()
            .enumerate()
            .map(|(i, &t)| Member { label: format!("le({t})"), theta: vec![t], terms: vec![(i, 1.0)] })
            .collect();
        FunctionClass {
            name: "half_interval".into(),
            basis,
            members,
            envelope: Func::constant(1.0),
            vc: None,
            centered: false,
        }
    }

    /// Centered `{1(x ≤ θ) − P(X ≤ θ)}`, envelope 1.
    pub fn half_interval(model: &dyn SeModel, thetas: &[f64]) -> Self {
        let mut c = Self::half_interval_raw(thetas);
        c.center(model);
        c
    }

    /// All differences `f_b − f_a` of a centered base class whose parameters
    /// satisfy `0 < θ_b − θ_a ≤ radius` (single-parameter members only).
    /// The envelope is twice the base envelope, or the base envelope itself
    /// when the base is a centered indicator family.
    pub fn localized_differences(base: &FunctionClass, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("localization radius must be positive"));
        }
        let mut members = Vec::new();
        for (ia, a) in base.members.iter().enumerate() {
            for b in &base.members[ia + 1..] {
                let (ta, tb) = match (a.theta.first(), b.theta.first()) {
                    (Some(&x), Some(&y)) => (x, y),
                    _ => return Err(invalid("localized differences need scalar parameters")),
                };
                let (lo, hi, lo_t, hi_t) = if ta <= tb { (a, b, ta, tb) } else { (b, a, tb, ta) };
                let w = hi_t - lo_t;
                if w > 0.0 && w <= radius * (1.0 + 1e-12) {
                    let mut terms = hi.terms.clone();
                    for &(bi, c) in &lo.terms {
                        match terms.iter_mut().find(|(x, _)| *x == bi) {
                            Some(t) => t.1 -= c,
                            None => terms.push((bi, -c)),
                        }
                    }
                    terms.retain(|&(_, c)| c != 0.0);
                    members.push(Member {
                        label: format!("{}-{}", hi.label, lo.label),
                        theta: vec![lo_t, hi_t],
                        terms,
                    });
                }
            }
        }
        if members.is_empty() {
            return Err(invalid(format!("no parameter pair within radius {radius}")));
        }
        // 1(a < x ≤ b) − (p_b − p_a) lies in [−1, 1]
        let envelope = if base.name == "half_interval" { base.envelope.clone() } else { base.envelope.scaled(2.0) };
        Ok(FunctionClass {
            name: "localized_differences".into(),
            basis: base.basis.clone(),
            members,
            envelope,
            vc: base.vc,
            centered: base.centered,
        })
    }

    /// `{c·f : c ∈ scales}` for a singleton `f`; envelope `max|c|·F`.
    pub fn scaled_copies(base: &FunctionClass, scales: &[f64]) -> Result<Self> {
        if base.members.len() != 1 || scales.is_empty() {
            return Err(invalid("scaled copies need a singleton base and at least one scale"));
        }
        let m = &base.members[0];
        let members = scales
            .iter()
            .map(|&c| Member {
                label: format!("{c}*{}", m.label),
                theta: vec![c],
                terms: m.terms.iter().map(|&(b, w)| (b, c * w)).collect(),
            })
            .collect();
        let cmax = scales.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        Ok(FunctionClass {
            name: format!("scaled_{}", base.name),
            basis: base.basis.clone(),
            members,
            envelope: base.envelope.scaled(cmax),
            vc: base.vc,
            centered: base.centered,
        })
    }

    /// `{c·f_θ}` with envelope `|c|·F`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.members {
            for t in &mut m.terms {
                t.1 *= c;
            }
        }
        out.envelope = self.envelope.scaled(c.abs());
        out
    }

    /// Subtracts `E f_θ(X_1)` from every member and returns the per-member
    /// means that were removed. Closed-form means are used when the model and
    /// basis allow; otherwise a 10^6-draw Monte Carlo mean.
    pub fn center(&mut self, model: &dyn SeModel) -> Vec<f64> {
        let basis_means = basis_means(model, &self.basis);
        let const_idx = match self.basis.iter().position(|f| f.is_constant() == Some(1.0)) {
            Some(i) => i,
            None => {
                self.basis.push(Func::constant(1.0));
                self.basis.len() - 1
            }
        };
        let mut removed = Vec::with_capacity(self.members.len());
        for m in &mut self.members {
            let mean = m.combine(&basis_means);
            removed.push(mean);
            if mean != 0.0 {
                match m.terms.iter_mut().find(|(b, _)| *b == const_idx) {
                    Some(t) => t.1 -= mean,
                    None => m.terms.push((const_idx, -mean)),
                }
            }
        }
        self.centered = true;
        removed
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_value(&self, member: usize, x: f64) -> f64 {
        self.members[member].terms.iter().map(|&(b, c)| c * self.basis[b].eval(x)).sum()
    }

    pub fn basis_values(&self, x: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.basis) {
            *o = f.eval(x);
        }
    }

    /// Every basis element has a closed-form projection shape (no custom maps).
    pub fn is_piecewise(&self) -> bool {
        self.basis.iter().chain(std::iter::once(&self.envelope)).all(|f| matches!(f, Func::Piecewise { .. }))
    }
}

const CENTERING_DRAWS: usize = 1_000_000;

/// `E f(X_1)` for each basis function.
pub(crate) fn basis_means(model: &dyn SeModel, basis: &[Func]) -> Vec<f64> {
    let k = model.dim();
    let root = FactorSet::new(k, model.factor_dim(), 0);
    let analytic: Vec<Option<f64>> = basis.iter().map(|f| f.analytic_projection(model, &root)).collect();
    if analytic.iter().all(Option::is_some) {
        return analytic.into_iter().map(Option::unwrap).collect();
    }
    let full = (1u32 << k) - 1;
    let chunks = 1000;
    let per = CENTERING_DRAWS / chunks;
    let seed = derive(0, tag::CENTER, &[k as u64]);
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut fs = FactorSet::new(k, model.factor_dim(), full);
            let mut acc = vec![0.0; basis.len()];
            for d in 0..per {
                let draw = (c * per + d) as u64;
                for m in 1..=full {
                    for (comp, v) in fs.get_mut(m).iter_mut().enumerate() {
                        *v = factor_uniform(seed, tag::CENTER, m, &[draw as usize], comp);
                    }
                }
                let x = model.tau(&fs);
                for (a, f) in acc.iter_mut().zip(basis) {
                    *a += f.eval(x);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; basis.len()];
    for p in &partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    analytic
        .into_iter()
        .zip(total)
        .map(|(a, t)| a.unwrap_or(t / CENTERING_DRAWS as f64))
        .collect()
}

/// Values `f_θ(x)` for every member and point, plus the envelope row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMatrix {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub envelope: Vec<f64>,
    pub points: Vec<f64>,
}

pub fn evaluate(class: &FunctionClass, points: &[f64]) -> Result<EvalMatrix> {
    if class.members.is_empty() {
        return Err(invalid("function class skeleton is empty"));
    }
    let basis_rows: Vec<Vec<f64>> = points
        .iter()
        .map(|&x| class.basis.iter().map(|f| f.eval(x)).collect())
        .collect();
    let envelope: Vec<f64> = points.iter().map(|&x| class.envelope.eval(x)).collect();
    let rows: Vec<Vec<f64>> = class
        .members
        .par_iter()
        .map(|m| basis_rows.iter().map(|bv| m.combine(bv)).collect())
        .collect();
    for (m, row) in class.members.iter().zip(&rows) {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Evaluation { member: m.label.clone(), x: points[j], value: v });
            }
            if v.abs() > envelope[j].abs() * (1.0 + 1e-12) + 1e-12 {
                return Err(invalid(format!(
                    "envelope {} does not dominate member {} at x = {}",
                    envelope[j], m.label, points[j]
                )));
            }
        }
    }
    Ok(EvalMatrix {
        labels: class.members.iter().map(|m| m.label.clone()).collect(),
        rows,
        envelope,
        points: points.to_vec(),
    })
}

/// A finitely supported probability measure.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(invalid("measure needs matching, non-empty points and weights"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("measure weights must be non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("measure weights sum to {s}, not 1")));
        }
        Ok(EmpiricalMeasure { points, weights })
    }

    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(invalid("measure needs at least one point"));
        }
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(x: f64) -> Self {
        EmpiricalMeasure { points: vec![x], weights: vec![1.0] }
    }
}

/// `‖g‖_{Q,2}` for values at the support points of `Q`.
pub fn l2_norm(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

/// Pairwise `L²(Q)` distances among the distinct members of a class.
#[derive(Clone, Debug)]
pub struct CoverGeometry {
    n: usize,
    dist: Vec<f64>,
    radii: Vec<f64>,
    profile: Option<Vec<usize>>,
}

/// Most radii at which the greedy count is evaluated. Larger classes use
/// quantiles of their pairwise distances.
pub const MAX_LEVELS: usize = 160;

impl CoverGeometry {
    pub fn new(rows: &[Vec<f64>], weights: &[f64]) -> Self {
        let mut seen = HashSet::new();
        let distinct: Vec<&Vec<f64>> = rows
            .iter()
            .filter(|r| seen.insert(r.iter().map(|x| x.to_bits()).collect::<Vec<u64>>()))
            .collect();
        let n = distinct.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| {
                (a + 1..n)
                    .map(|b| {
                        distinct[a]
                            .iter()
                            .zip(distinct[b].iter())
                            .zip(weights)
                            .map(|((x, y), w)| w * (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect();
        let mut dist = vec![0.0; n * n];
        for (a, row) in upper.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                let b = a + 1 + j;
                dist[a * n + b] = d;
                dist[b * n + a] = d;
            }
        }
        let mut radii: Vec<f64> = upper.into_iter().flatten().collect();
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        if radii.len() > MAX_LEVELS {
            let last = radii.len() - 1;
            radii = (0..MAX_LEVELS).map(|j| radii[j * last / (MAX_LEVELS - 1)]).collect();
        }
        CoverGeometry { n, dist, radii, profile: None }
    }

    pub fn distinct(&self) -> usize {
        self.n
    }

    /// Radii in increasing order at which the reported count may change:
    /// every pairwise distance, or [`MAX_LEVELS`] quantiles of them.
    pub fn breakpoints(&self) -> &[f64] {
        &self.radii
    }

    /// One greedy pass at radius `r`: repeatedly take the first uncovered
    /// member and open, among the members within `r` of it, the one whose
    /// ball covers the most uncovered members (ties to the earliest).
    pub fn greedy(&self, r: f64) -> usize {
        let n = self.n;
        let words = n.div_ceil(64);
        let mut balls = vec![0u64; n * words];
        for a in 0..n {
            for b in 0..n {
                if self.dist[a * n + b] <= r {
                    balls[a * words + b / 64] |= 1 << (b % 64);
                }
            }
        }
        let mut uncovered = vec![0u64; words];
        for b in 0..n {
            uncovered[b / 64] |= 1 << (b % 64);
        }
        let mut centers = 0;
        for p in 0..n {
            if uncovered[p / 64] & (1 << (p % 64)) == 0 {
                continue;
            }
            let mut best = p;
            let mut best_count = 0u32;
            for c in 0..n {
                if balls[p * words + c / 64] & (1 << (c % 64)) == 0 {
                    continue;
                }
                let count: u32 =
                    (0..words).map(|w| (balls[c * words + w] & uncovered[w]).count_ones()).sum();
                if count > best_count {
                    best_count = count;
                    best = c;
                }
            }
            for w in 0..words {
                uncovered[w] &= !balls[best * words + w];
            }
            centers += 1;
        }
        centers
    }

    /// Greedy count at every breakpoint after a running minimum, so the
    /// reported covering number is non-increasing in the radius. Entry `j`
    /// applies on `[breakpoints[j], breakpoints[j+1])`.
    pub fn profile(&mut self) -> &[usize] {
        if self.profile.is_none() {
            let raw: Vec<usize> = self.radii.par_iter().map(|&r| self.greedy(r)).collect();
            let mut best = self.n;
            let p = raw
                .into_iter()
                .map(|c| {
                    best = best.min(c);
                    best
                })
                .collect();
            self.profile = Some(p);
        }
        self.profile.as_deref().unwrap()
    }

    /// Size of an internal `r`-cover.
    pub fn covering_number(&mut self, r: f64) -> usize {
        let j = self.radii.partition_point(|&d| d <= r);
        if j == 0 {
            return self.n;
        }
        self.profile()[j - 1]
    }
}

/// Greedy internal covering number of the evaluated class in `L²(measure)`.
/// `eval` must be evaluated at `measure.points`.
pub fn covering_number(eval: &EvalMatrix, measure: &EmpiricalMeasure, radius: f64) -> Result<usize> {
    if !(radius > 0.0) {
        return Err(invalid("covering radius must be positive"));
    }
    if eval.points.len() != measure.points.len() {
        return Err(invalid("evaluation matrix and measure have different supports"));
    }
    Ok(CoverGeometry::new(&eval.rows, &measure.weights).covering_number(radius))
}

/// One candidate `Q` in the supremum of a uniform entropy integral: the
/// class evaluated on its support, its weights and `‖F‖_{Q,2}`.
#[derive(Clone, Debug)]
pub struct MeasuredClass {
    pub geometry: CoverGeometry,
    pub envelope_norm: f64,
}

impl MeasuredClass {
    pub fn new(rows: &[Vec<f64>], envelope: &[f64], weights: &[f64]) -> Self {
        MeasuredClass { geometry: CoverGeometry::new(rows, weights), envelope_norm: l2_norm(envelope, weights) }
    }

    pub fn from_eval(eval: &EvalMatrix, measure: &EmpiricalMeasure) -> Self {
        Self::new(&eval.rows, &eval.envelope, &measure.weights)
    }

    /// `N(ε‖F‖_Q)`.
    pub fn normalized_cover(&mut self, eps: f64) -> usize {
        if self.envelope_norm <= 0.0 {
            return 1;
        }
        self.geometry.covering_number(eps * self.envelope_norm)
    }
}

/// Fits `(A, v)` so that `N(ε) ≤ (A/ε)^v` holds on a grid of `ε ∈ (0, 1]`,
/// with `N(ε)` the largest normalized cover over the supplied measures.
/// `v` is the least-squares slope of `log N` against `log(1/ε)` on the
/// unsaturated part of the grid (floored at 1); `A` is then the smallest
/// value consistent with every grid point, floored at `a_floor ∨ e`.
pub fn fit_vc(measured: &mut [MeasuredClass], a_floor: f64) -> Result<VcCharacteristics> {
    if measured.is_empty() {
        return Err(invalid("VC fit needs at least one measure"));
    }
    let grid: Vec<f64> = (0..=16).map(|j| 2f64.powf(-(j as f64) / 3.0)).collect();
    let counts: Vec<usize> = grid
        .iter()
        .map(|&eps| measured.iter_mut().map(|m| m.normalized_cover(eps)).max().unwrap())
        .collect();
    let saturation = measured.iter().map(|m| m.geometry.distinct()).max().unwrap();
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 1 && (c as f64) < 0.9 * saturation as f64)
        .map(|(&e, &c)| ((1.0 / e).ln(), (c as f64).ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 { sxy / sxx } else { 1.0 }
    } else {
        1.0
    };
    let v = slope.max(1.0);
    let a = grid
        .iter()
        .zip(&counts)
        .map(|(&e, &c)| e * (c as f64).powf(1.0 / v))
        .fold(a_floor.max(std::f64::consts::E), f64::max);
    VcCharacteristics::new(a, v)
}

/// Class selection as it appears in an experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    /// `{x − E X}`.
    Identity,
    /// `{f ≡ 0}`.
    Zero,
    /// Centered `{1(x ≤ θ) − P(X ≤ θ)}` on a uniform grid.
    HalfInterval {
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<[f64; 2]>,
    },
    /// Differences of centered half-interval members at parameter distance
    /// at most `radius`.
    LocalizedDifferences {
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<[f64; 2]>,
        radius: f64,
    },
    /// `{c·(x − E X) : c ∈ scales}`.
    ScaledIdentity { scales: Vec<f64> },
}

fn default_grid() -> usize {
    101
}

impl Default for ClassSpec {
    fn default() -> Self {
        ClassSpec::HalfInterval { grid: default_grid(), range: None }
    }
}

/// `grid` equally spaced points strictly inside `range` (or the model
/// support when no range is given).
pub fn theta_grid(model: &dyn SeModel, grid: usize, range: Option<[f64; 2]>) -> Result<Vec<f64>> {
    if grid == 0 {
        return Err(config("class grid must have at least one point"));
    }
    let (lo, hi) = match range {
        Some([lo, hi]) => (lo, hi),
        None => model.support(),
    };
    if !(hi > lo) {
        return Err(config(format!("empty parameter range [{lo}, {hi}]")));
    }
    let h = (hi - lo) / (grid + 1) as f64;
    Ok((1..=grid).map(|j| lo + j as f64 * h).collect())
}

impl ClassSpec {
    pub fn build(&self, model: &dyn SeModel) -> Result<FunctionClass> {
        Ok(match self {
            ClassSpec::Identity => FunctionClass::identity(model),
            ClassSpec::Zero => FunctionClass::zero(),
            ClassSpec::HalfInterval { grid, range } => {
                FunctionClass::half_interval(model, &theta_grid(model, *grid, *range)?)
            }
            ClassSpec::LocalizedDifferences { grid, range, radius } => {
                let base = FunctionClass::half_interval(model, &theta_grid(model, *grid, *range)?);
                FunctionClass::localized_differences(&base, *radius)?
            }
            ClassSpec::ScaledIdentity { scales } => {
                FunctionClass::scaled_copies(&FunctionClass::identity(model), scales)?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AdditiveModel;
    use crate::rng::CounterStream;

    fn uniform_points(n: usize, seed: u64) -> Vec<f64> {
        let mut s = CounterStream::new(seed);
        (0..n).map(|_| s.uniform()).collect()
    }

    #[test]
    fn zero_class_row() {
        let m = evaluate(&FunctionClass::zero(), &[0.1, 5.0, -3.0]).unwrap();
        assert_eq!(m.rows, vec![vec![0.0; 3]]);
    }

    #[test]
    fn half_interval_bounds() {
        let model = AdditiveModel::new(2).unwrap();
        let c = FunctionClass::half_interval(&model, &[0.5, 1.5, 2.5]);
        let m = evaluate(&c, &[0.2, 1.4, 2.9]).unwrap();
        assert!(m.rows.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(m.envelope, vec![1.0; 3]);
        // P(X ≤ 1.5) = 1/2 by symmetry
        assert!((m.rows[1][0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_matches_direct_evaluation() {
        let model = AdditiveModel::new(2).unwrap();
        let c = FunctionClass::identity(&model);
        let pts = uniform_points(10, 3).iter().map(|u| 3.0 * u).collect::<Vec<_>>();
        let m = evaluate(&c, &pts).unwrap();
        for (j, &x) in pts.iter().enumerate() {
            assert_eq!(m.rows[0][j], x - 1.5);
        }
        assert_eq!(m.envelope[0], 1.5);
    }

    #[test]
    fn evaluation_failure_names_member() {
        let c = FunctionClass::singleton("log", Func::custom("log", f64::ln), Func::constant(f64::INFINITY));
        match evaluate(&c, &[1.0, -1.0]) {
            Err(Error::Evaluation { member, x, .. }) => {
                assert_eq!(member, "log");
                assert_eq!(x, -1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn measure_validation() {
        assert!(EmpiricalMeasure::new(vec![1.0, 2.0], vec![0.5, 0.5]).is_ok());
        assert!(EmpiricalMeasure::new(vec![1.0, 2.0], vec![0.7, 0.5]).is_err());
        assert!(EmpiricalMeasure::new(vec![1.0, 2.0], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn two_point_geometry() {
        let c = FunctionClass::new(
            "pair",
            vec![Func::constant(0.0), Func::constant(0.3)],
            vec![
                Member { label: "a".into(), theta: vec![], terms: vec![(0, 1.0)] },
                Member { label: "b".into(), theta: vec![], terms: vec![(1, 1.0)] },
            ],
            Func::constant(1.0),
        )
        .unwrap();
        let q = EmpiricalMeasure::uniform(vec![0.0, 1.0]).unwrap();
        let m = evaluate(&c, &q.points).unwrap();
        assert_eq!(covering_number(&m, &q, 0.29).unwrap(), 2);
        assert_eq!(covering_number(&m, &q, 0.3).unwrap(), 1);
        let single = evaluate(&FunctionClass::zero(), &q.points).unwrap();
        assert_eq!(covering_number(&single, &q, 1e-9).unwrap(), 1);
    }

    /// Smallest internal cover by exhaustive search over center subsets.
    fn brute_force_cover(rows: &[Vec<f64>], w: &[f64], r: f64) -> usize {
        let mut distinct: Vec<&Vec<f64>> = Vec::new();
        for row in rows {
            if !distinct.contains(&row) {
                distinct.push(row);
            }
        }
        let n = distinct.len();
        let d = |a: usize, b: usize| l2_norm(&distinct[a].iter().zip(distinct[b]).map(|(x, y)| x - y).collect::<Vec<_>>(), w);
        let ball: Vec<u32> = (0..n).map(|c| (0..n).filter(|&b| d(c, b) <= r).fold(0u32, |acc, b| acc | 1 << b)).collect();
        let all = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        for size in 1..=n {
            // iterate over subsets of the given size (Gosper's hack)
            let mut s: u32 = (1u32 << size) - 1;
            while s <= all {
                let mut cov = 0u32;
                for (c, b) in ball.iter().enumerate() {
                    if s & (1 << c) != 0 {
                        cov |= b;
                    }
                }
                if cov == all {
                    return size;
                }
                let lowest = s & s.wrapping_neg();
                let ripple = s + lowest;
                if ripple == 0 || ripple > all {
                    break;
                }
                s = (((ripple ^ s) >> 2) / lowest) | ripple;
            }
        }
        n
    }

    #[test]
    fn greedy_matches_brute_force_on_half_intervals() {
        let thetas: Vec<f64> = (1..=25).map(|j| j as f64 / 26.0).collect();
        let c = FunctionClass::half_interval_raw(&thetas);
        for inst in 0..10u64 {
            let q = EmpiricalMeasure::uniform(uniform_points(20, 100 + inst)).unwrap();
            let m = evaluate(&c, &q.points).unwrap();
            for &eps in &[0.1, 0.2, 0.35, 0.5, 0.8] {
                let r = eps * l2_norm(&m.envelope, &q.weights);
                let g = covering_number(&m, &q, r).unwrap();
                assert!(g <= 21);
                assert_eq!(g, brute_force_cover(&m.rows, &q.weights, r), "instance {inst}, eps {eps}");
            }
        }
    }

    #[test]
    fn cover_is_one_beyond_diameter() {
        let model = AdditiveModel::new(2).unwrap();
        let c = FunctionClass::half_interval(&model, &theta_grid(&model, 31, None).unwrap());
        let q = EmpiricalMeasure::uniform(uniform_points(40, 1).iter().map(|u| 3.0 * u).collect()).unwrap();
        let m = evaluate(&c, &q.points).unwrap();
        let f = l2_norm(&m.envelope, &q.weights);
        assert_eq!(covering_number(&m, &q, 2.0 * f).unwrap(), 1);
    }

    #[test]
    fn localized_differences_respect_radius() {
        let model = AdditiveModel::new(1).unwrap();
        let base = FunctionClass::half_interval(&model, &[0.1, 0.2, 0.3, 0.5]);
        let c = FunctionClass::localized_differences(&base, 0.15).unwrap();
        assert_eq!(c.members.len(), 2);
        // 1(0.1 < x ≤ 0.2) − 0.1
        assert!((c.member_value(0, 0.15) - 0.9).abs() < 1e-12);
        assert!((c.member_value(0, 0.25) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn scaled_class_scales_envelope() {
        let model = AdditiveModel::new(2).unwrap();
        let c = FunctionClass::identity(&model).scaled(-2.0);
        assert_eq!(c.member_value(0, 2.0), -1.0);
        assert_eq!(c.envelope.eval(0.0), 3.0);
        let s = FunctionClass::scaled_copies(&FunctionClass::identity(&model), &[0.5, 1.0, -3.0]).unwrap();
        assert_eq!(s.envelope.eval(0.0), 4.5);
    }

    #[test]
    fn monte_carlo_centering_agrees_with_closed_form() {
        // a custom indicator forces the Monte Carlo path
        let model = AdditiveModel::new(2).unwrap();
        let means = basis_means(&model, &[Func::custom("le1", |x| (x <= 1.0) as u8 as f64)]);
        let exact = crate::model::weighted_uniform_sum_cdf(&[1.0, 1.0, 1.0], 1.0).unwrap();
        assert!((means[0] - exact).abs() < 4.0 * (exact * (1.0 - exact) / 1e6f64).sqrt());
    }

    #[test]
    fn vc_fit_is_admissible() {
        let model = AdditiveModel::new(1).unwrap();
        let c = FunctionClass::half_interval(&model, &theta_grid(&model, 41, None).unwrap());
        let mut measured: Vec<MeasuredClass> = (0..4)
            .map(|s| {
                let q = EmpiricalMeasure::uniform(uniform_points(50, s)).unwrap();
                MeasuredClass::from_eval(&evaluate(&c, &q.points).unwrap(), &q)
            })
            .collect();
        let vc = fit_vc(&mut measured, 0.0).unwrap();
        assert!(vc.a >= std::f64::consts::E && vc.v >= 1.0);
        for eps in (0..=16).map(|j| 2f64.powf(-(j as f64) / 3.0)) {
            let n = measured.iter_mut().map(|m| m.normalized_cover(eps)).max().unwrap();
            assert!((n as f64) <= (vc.a / eps).powf(vc.v) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn class_spec_parses() {
        let s: ClassSpec = toml::from_str("kind = \"localized_differences\"\nradius = 0.1\n").unwrap();
        let model = AdditiveModel::new(2).unwrap();
        let c = s.build(&model).unwrap();
        assert!(c.centered && !c.members.is_empty());
        assert!(toml::from_str::<ClassSpec>("kind = \"nope\"").is_err());
    }
}
