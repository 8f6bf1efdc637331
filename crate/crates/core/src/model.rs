//! Separately exchangeable models in AHK form.
//!
//! A model is a map `τ` from the factor collection `{U_{i⊙e}}_{e ≠ 0}` to a
//! real sample point. Models may also expose conditional moments given the
//! factors retained by a direction `e` (all `e' ≤ e`); those give exact
//! projections for the built-in function families.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::lattice::{EVector, MAX_DIM};

/// Factor values addressed by direction mask.
///
/// Only masks `m ≤ scope` carry meaningful values; the rest are scratch space
/// for Monte Carlo completions.
#[derive(Clone, PartialEq)]
pub struct FactorSet {
    dim: usize,
    factor_dim: usize,
    scope: u32,
    values: Vec<f64>,
}

impl FactorSet {
    pub fn new(dim: usize, factor_dim: usize, scope: u32) -> Self {
        FactorSet { dim, factor_dim, scope, values: vec![0.0; (1usize << dim) * factor_dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factor_dim(&self) -> usize {
        self.factor_dim
    }

    /// Mask of the conditioning direction.
    pub fn scope(&self) -> u32 {
        self.scope
    }

    pub fn set_scope(&mut self, scope: u32) {
        self.scope = scope;
    }

    pub fn is_retained(&self, mask: u32) -> bool {
        mask != 0 && mask & !self.scope == 0
    }

    pub fn get(&self, mask: u32) -> &[f64] {
        let s = mask as usize * self.factor_dim;
        &self.values[s..s + self.factor_dim]
    }

    pub fn get_mut(&mut self, mask: u32) -> &mut [f64] {
        let s = mask as usize * self.factor_dim;
        &mut self.values[s..s + self.factor_dim]
    }

    /// First component of the factor at `mask`.
    pub fn scalar(&self, mask: u32) -> f64 {
        self.values[mask as usize * self.factor_dim]
    }

    pub fn masks(&self) -> impl Iterator<Item = u32> {
        1u32..(1u32 << self.dim)
    }
}

impl fmt::Debug for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for mask in self.masks().filter(|&m| self.is_retained(m)) {
            m.entry(&mask_label(mask, self.dim), &self.get(mask));
        }
        m.finish()
    }
}

/// The AHK map `τ` plus optional closed-form conditional moments.
pub trait SeModel: Send + Sync {
    /// Index dimension `K`.
    fn dim(&self) -> usize;

    fn factor_dim(&self) -> usize {
        1
    }

    fn tau(&self, factors: &FactorSet) -> f64;

    /// `E[X | factors retained by scope]`, when available in closed form.
    fn conditional_mean(&self, _retained: &FactorSet) -> Option<f64> {
        None
    }

    /// `P(X ≤ x | factors retained by scope)`, when available in closed form.
    fn conditional_cdf(&self, _retained: &FactorSet, _x: f64) -> Option<f64> {
        None
    }

    /// Almost-sure range of `X`, used to place default threshold grids.
    fn support(&self) -> (f64, f64);

    fn description(&self) -> String;
}

impl fmt::Debug for dyn SeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.description())
    }
}

/// `X = Σ_e c_e U_e`.
#[derive(Clone, Debug)]
pub struct AdditiveModel {
    dim: usize,
    coefficients: Vec<f64>,
}

impl AdditiveModel {
    /// Unit coefficient on every factor.
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut coefficients = vec![1.0; 1 << dim];
        coefficients[0] = 0.0;
        Ok(AdditiveModel { dim, coefficients })
    }

    pub fn with_coefficients(dim: usize, coeffs: &[(EVector, f64)]) -> Result<Self> {
        let mut m = Self::new(dim)?;
        for (e, c) in coeffs {
            m.set_coefficient(*e, *c)?;
        }
        Ok(m)
    }

    pub fn set_coefficient(&mut self, e: EVector, c: f64) -> Result<()> {
        if e.dim() != self.dim || e.is_zero() {
            return Err(config(format!("coefficient direction {e} does not fit K = {}", self.dim)));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(config(format!("additive coefficient {c} must be finite and non-negative")));
        }
        self.coefficients[e.mask() as usize] = c;
        Ok(())
    }

    pub fn coefficient(&self, mask: u32) -> f64 {
        self.coefficients[mask as usize]
    }
}

impl SeModel for AdditiveModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tau(&self, factors: &FactorSet) -> f64 {
        factors.masks().map(|m| self.coefficients[m as usize] * factors.scalar(m)).sum()
    }

    fn conditional_mean(&self, retained: &FactorSet) -> Option<f64> {
        Some(
            retained
                .masks()
                .map(|m| {
                    let c = self.coefficients[m as usize];
                    if retained.is_retained(m) {
                        c * retained.scalar(m)
                    } else {
                        0.5 * c
                    }
                })
                .sum(),
        )
    }

    fn conditional_cdf(&self, retained: &FactorSet, x: f64) -> Option<f64> {
        let mut shift = 0.0;
        let mut free = Vec::new();
        for m in retained.masks() {
            let c = self.coefficients[m as usize];
            if c == 0.0 {
                continue;
            }
            if retained.is_retained(m) {
                shift += c * retained.scalar(m);
            } else {
                free.push(c);
            }
        }
        weighted_uniform_sum_cdf(&free, x - shift)
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.coefficients.iter().sum())
    }

    fn description(&self) -> String {
        let terms: Vec<String> = (1u32..(1 << self.dim))
            .filter(|&m| self.coefficients[m as usize] != 0.0)
            .map(|m| format!("{}*U[{}]", self.coefficients[m as usize], mask_label(m, self.dim)))
            .collect();
        format!("additive: X = {}", terms.join(" + "))
    }
}

/// CDF of `Σ_j c_j U_j` for independent uniforms and positive weights.
///
/// Uses the inclusion–exclusion form
/// `(m! ∏c)^{-1} Σ_S (−1)^{|S|} (x − c_S)_+^m`, reflected about the centre
/// of the support so the cancelling sum is taken on the shorter side.
/// Returns `None` beyond 20 free terms.
pub fn weighted_uniform_sum_cdf(weights: &[f64], x: f64) -> Option<f64> {
    let m = weights.len();
    if m == 0 {
        return Some(if x >= 0.0 { 1.0 } else { 0.0 });
    }
    if m > 20 {
        return None;
    }
    let total: f64 = weights.iter().sum();
    if x <= 0.0 {
        return Some(0.0);
    }
    if x >= total {
        return Some(1.0);
    }
    if m == 1 {
        return Some(x / total);
    }
    let (y, reflect) = if x > 0.5 * total { (total - x, true) } else { (x, false) };
    let mut acc = 0.0;
    for subset in 0u32..(1u32 << m) {
        let mut cs = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if subset & (1 << j) != 0 {
                cs += w;
            }
        }
        let r = y - cs;
        if r > 0.0 {
            let term = r.powi(m as i32);
            if subset.count_ones() % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
    }
    let mut denom = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        denom *= w * (j + 1) as f64;
    }
    let p = (acc / denom).clamp(0.0, 1.0);
    Some(if reflect { 1.0 - p } else { p })
}

/// `X = ∏_e (a + U_e)`: every direction interacts multiplicatively.
#[derive(Clone, Debug)]
pub struct InteractionModel {
    dim: usize,
    offset: f64,
}

impl InteractionModel {
    pub fn new(dim: usize, offset: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(config("interaction offset must be positive"));
        }
        Ok(InteractionModel { dim, offset })
    }
}

impl SeModel for InteractionModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tau(&self, factors: &FactorSet) -> f64 {
        factors.masks().map(|m| self.offset + factors.scalar(m)).product()
    }

    fn conditional_mean(&self, retained: &FactorSet) -> Option<f64> {
        Some(
            retained
                .masks()
                .map(|m| {
                    if retained.is_retained(m) {
                        self.offset + retained.scalar(m)
                    } else {
                        self.offset + 0.5
                    }
                })
                .product(),
        )
    }

    fn support(&self) -> (f64, f64) {
        let n = ((1usize << self.dim) - 1) as i32;
        (self.offset.powi(n), (self.offset + 1.0).powi(n))
    }

    fn description(&self) -> String {
        format!("interaction: X = prod_e ({} + U_e), K = {}", self.offset, self.dim)
    }
}

/// A smooth nonlinear map with no closed-form projections.
#[derive(Clone, Debug)]
pub struct OpaqueModel {
    dim: usize,
    factor_dim: usize,
}

impl OpaqueModel {
    pub fn new(dim: usize, factor_dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if factor_dim == 0 {
            return Err(config("factor_dim must be at least 1"));
        }
        Ok(OpaqueModel { dim, factor_dim })
    }
}

impl SeModel for OpaqueModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn factor_dim(&self) -> usize {
        self.factor_dim
    }

    fn tau(&self, factors: &FactorSet) -> f64 {
        let count = ((1usize << self.dim) - 1) as f64;
        let s: f64 = factors
            .masks()
            .map(|m| {
                let u = factors.get(m);
                let scale = if self.factor_dim > 1 { 0.5 + u[1] } else { 1.0 };
                (m.count_ones() as f64).sqrt() * u[0] * scale
            })
            .sum::<f64>()
            / count;
        (3.0 * s).sin() + 0.5 * s * s
    }

    fn support(&self) -> (f64, f64) {
        (-1.0, 1.0 + 0.5 * (1.5 * (self.dim as f64).sqrt()).powi(2))
    }

    fn description(&self) -> String {
        format!("opaque: X = sin(3s) + s^2/2, K = {}, factor_dim = {}", self.dim, self.factor_dim)
    }
}

/// Bit string of a mask, coordinate 1 first.
pub(crate) fn mask_label(mask: u32, dim: usize) -> String {
    (0..dim).map(|j| if mask & (1 << j) != 0 { '1' } else { '0' }).collect()
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(config(format!("model dimension K = {dim} outside [1, {MAX_DIM}]")));
    }
    Ok(())
}

/// Model selection as it appears in an experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Additive {
        /// Per-direction coefficients keyed by bit string, e.g. `"10" = 1.0`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coefficients: Option<BTreeMap<String, f64>>,
    },
    Interaction {
        #[serde(default = "default_offset")]
        offset: f64,
    },
    Opaque {
        #[serde(default = "default_factor_dim")]
        factor_dim: usize,
    },
}

fn default_offset() -> f64 {
    0.5
}

fn default_factor_dim() -> usize {
    1
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Additive { coefficients: None }
    }
}

impl ModelSpec {
    pub fn build(&self, dim: usize) -> Result<Arc<dyn SeModel>> {
        Ok(match self {
            ModelSpec::Additive { coefficients } => {
                let mut m = AdditiveModel::new(dim)?;
                if let Some(map) = coefficients {
                    for (k, &c) in map {
                        let e = EVector::parse(k).map_err(|err| config(err.to_string()))?;
                        m.set_coefficient(e, c)?;
                    }
                }
                Arc::new(m)
            }
            ModelSpec::Interaction { offset } => Arc::new(InteractionModel::new(dim, *offset)?),
            ModelSpec::Opaque { factor_dim } => Arc::new(OpaqueModel::new(dim, *factor_dim)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterStream;

    #[test]
    fn cdf_single_and_empty() {
        assert_eq!(weighted_uniform_sum_cdf(&[], 0.1), Some(1.0));
        assert_eq!(weighted_uniform_sum_cdf(&[], -0.1), Some(0.0));
        assert!((weighted_uniform_sum_cdf(&[2.0], 0.5).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cdf_triangular() {
        // U + U' has CDF x²/2 on [0,1] and 1 − (2−x)²/2 on [1,2].
        for &x in &[0.1, 0.5, 0.9, 1.0, 1.3, 1.9] {
            let exact = if x <= 1.0 { x * x / 2.0 } else { 1.0 - (2.0 - x) * (2.0f64 - x) / 2.0 };
            let got = weighted_uniform_sum_cdf(&[1.0, 1.0], x).unwrap();
            assert!((got - exact).abs() < 1e-14, "{x}: {got} vs {exact}");
        }
    }

    #[test]
    fn cdf_matches_monte_carlo() {
        let w = [1.0, 0.3, 0.7, 0.05];
        let mut s = CounterStream::new(5);
        let n = 400_000;
        let xs = [0.2, 0.8, 1.0, 1.5, 1.9];
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let v: f64 = w.iter().map(|c| c * s.uniform()).sum();
            for (i, &x) in xs.iter().enumerate() {
                if v <= x {
                    counts[i] += 1;
                }
            }
        }
        for (i, &x) in xs.iter().enumerate() {
            let p = counts[i] as f64 / n as f64;
            let exact = weighted_uniform_sum_cdf(&w, x).unwrap();
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-6);
            assert!((p - exact).abs() < 5.0 * se, "{x}: {p} vs {exact}");
        }
    }

    #[test]
    fn additive_conditional_moments() {
        let m = AdditiveModel::new(2).unwrap();
        let mut fs = FactorSet::new(2, 1, 0b01);
        fs.get_mut(0b01)[0] = 0.3;
        assert!((m.conditional_mean(&fs).unwrap() - 1.3).abs() < 1e-15);
        // X | U_{10} = 0.3 is 0.3 + triangular
        let p = m.conditional_cdf(&fs, 1.3).unwrap();
        assert!((p - 0.5).abs() < 1e-14);
    }

    #[test]
    fn interaction_mean_unconditional() {
        let m = InteractionModel::new(3, 0.5).unwrap();
        let fs = FactorSet::new(3, 1, 0);
        assert!((m.conditional_mean(&fs).unwrap() - 1.0).abs() < 1e-15);
        assert!(m.conditional_cdf(&fs, 1.0).is_none());
    }

    #[test]
    fn spec_builds() {
        let spec: ModelSpec = toml::from_str("kind = \"additive\"\n[coefficients]\n\"10\" = 2.0\n").unwrap();
        let m = spec.build(2).unwrap();
        assert_eq!(m.support(), (0.0, 4.0));
        let bad: ModelSpec = toml::from_str("kind = \"additive\"\n[coefficients]\n\"102\" = 2.0\n").unwrap();
        assert!(bad.build(2).is_err());
        let o: ModelSpec = toml::from_str("kind = \"opaque\"\nfactor_dim = 2\n").unwrap();
        assert_eq!(o.build(2).unwrap().factor_dim(), 2);
    }
}
