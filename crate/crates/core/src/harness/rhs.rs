//! Right-hand sides of the maximal inequalities.

use serde::Serialize;

use crate::entropy::{entropy_integral_vc, EntropyProfile};
use crate::error::{config, invalid, Error, Result};
use crate::function_class::{Func, FunctionClass, VcCharacteristics};
use crate::model::{FactorSet, SeModel};
use crate::rng::{derive, factor_uniform, tag};
use crate::supremum::LocalizationStats;

/// How `J_e(δ)` is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum EntropyRoute {
    Vc(VcCharacteristics),
    Profile(EntropyProfile),
}

impl EntropyRoute {
    pub fn for_class(class: &FunctionClass, profile: Option<&EntropyProfile>) -> Result<Self> {
        if let Some(vc) = class.vc {
            return Ok(EntropyRoute::Vc(vc));
        }
        match profile {
            Some(p) => Ok(EntropyRoute::Profile(p.clone())),
            None => Err(config(format!("class {} has neither VC characteristics nor an entropy profile", class.name))),
        }
    }

    pub fn j(&self, k: usize, delta: f64) -> Result<f64> {
        match self {
            EntropyRoute::Vc(vc) => entropy_integral_vc(vc.a, vc.v, k, delta),
            EntropyRoute::Profile(p) => {
                if p.k != k {
                    return Err(invalid(format!("profile is for layer {} but layer {k} was requested", p.k)));
                }
                Ok(p.interpolate(delta))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

fn term(name: &str, value: f64) -> Term {
    Term { name: name.to_string(), value }
}

/// A right-hand side: `value` is the sum of `terms`; `factors` record the
/// ingredients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rhs {
    pub value: f64,
    pub terms: Vec<Term>,
    pub factors: Vec<Term>,
}

impl Rhs {
    fn from_terms(terms: Vec<Term>, factors: Vec<Term>) -> Result<Self> {
        let value = terms.iter().fold(0.0, |a, t| a + t.value);
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Degenerate(format!("right-hand side {value} is not positive and finite")));
        }
        Ok(Rhs { value, terms, factors })
    }
}

const NORM_DRAWS: usize = 1_000_000;

/// `‖F‖_{P,p}`: exact for constant envelopes, otherwise a 10^6-draw Monte
/// Carlo average.
pub fn envelope_norm(model: &dyn SeModel, envelope: &Func, p: f64) -> f64 {
    if let Some(c) = envelope.is_constant() {
        return c.abs();
    }
    let k = model.dim();
    let full = (1u32 << k) - 1;
    let seed = derive(1, tag::CENTER, &[k as u64, p.to_bits()]);
    let chunks = 1000;
    let per = NORM_DRAWS / chunks;
    let parts: Vec<f64> = (0..chunks)
        .map(|c| {
            let mut fs = FactorSet::new(k, model.factor_dim(), full);
            let mut acc = 0.0;
            for d in 0..per {
                for m in 1..=full {
                    for (comp, v) in fs.get_mut(m).iter_mut().enumerate() {
                        *v = factor_uniform(seed, tag::CENTER, m, &[c * per + d], comp);
                    }
                }
                acc += envelope.eval(model.tau(&fs)).abs().powf(p);
            }
            acc
        })
        .collect();
    (parts.iter().sum::<f64>() / NORM_DRAWS as f64).powf(1.0 / p)
}

/// `J_e(1)·‖F‖_{P,q∨2}`.
pub fn global_rhs(route: &EntropyRoute, k: usize, envelope_norm_q: f64) -> Result<Rhs> {
    let j1 = route.j(k, 1.0)?;
    Rhs::from_terms(
        vec![term("entropy_times_envelope", j1 * envelope_norm_q)],
        vec![term("j_e_1", j1), term("envelope_norm", envelope_norm_q)],
    )
}

/// `J_e(δ_e)‖P_e F‖ + J_e²(δ_e)‖M_e‖/(√n δ_e²)`.
pub fn local_rhs(stats: &LocalizationStats, route: &EntropyRoute, k: usize) -> Result<Rhs> {
    let d = stats.delta_e;
    if !(d > 0.0) {
        return Err(Error::Degenerate("delta_e = 0".into()));
    }
    let j = route.j(k, d.min(1.0))?;
    let n = stats.n as f64;
    let t1 = j * stats.envelope_l2;
    let t2 = j * j * stats.m_e_l2 / (n.sqrt() * d * d);
    Rhs::from_terms(
        vec![term("entropy_term", t1), term("envelope_max_term", t2)],
        vec![term("j_e_delta", j), term("delta_e", d), term("n", n)],
    )
}

/// Smallest `A` allowed for a `K`-index VC bound: `max(e^{2(K−1)}/16, e)`.
pub fn vc_a_floor(dim: usize) -> f64 {
    ((2.0 * (dim as f64 - 1.0)).exp() / 16.0).max(std::f64::consts::E)
}

/// `σ_e L^{k/2} + (‖M_e‖/√n) L^k` with `L = v log(A ∨ N̄)`.
pub fn vc_rhs(stats: &LocalizationStats, vc: VcCharacteristics, k: usize, dim: usize, max_dim: usize) -> Result<Rhs> {
    let floor = vc_a_floor(dim);
    if vc.a < floor * (1.0 - 1e-12) {
        return Err(invalid(format!("A = {} is below the admissible bound max(e^(2(K-1))/16, e) = {floor}", vc.a)));
    }
    if vc.v < 1.0 {
        return Err(invalid(format!("v = {} is below the admissible bound 1", vc.v)));
    }
    let l = vc.v * vc.a.max(max_dim as f64).ln();
    let n = stats.n as f64;
    let t1 = stats.sigma_e * l.powf(k as f64 / 2.0);
    let t2 = stats.m_e_l2 / n.sqrt() * l.powi(k as i32);
    Rhs::from_terms(
        vec![term("sigma_term", t1), term("envelope_max_term", t2)],
        vec![term("log_factor", l), term("n", n)],
    )
}

/// `‖F‖ J(δ) + B·J²(δ)/(δ²√n)` with `δ = σ/‖F‖_{P,2}`.
pub fn iid_rhs(route: &EntropyRoute, n: usize, sigma: f64, envelope_l2: f64, b: f64) -> Result<Rhs> {
    if !(sigma > 0.0 && sigma <= envelope_l2 * (1.0 + 1e-12)) {
        return Err(invalid(format!("sigma = {sigma} must lie in (0, ‖F‖ = {envelope_l2}]")));
    }
    let d = (sigma / envelope_l2).min(1.0);
    let j = route.j(1, d)?;
    let t1 = envelope_l2 * j;
    let t2 = b * j * j / (d * d * (n as f64).sqrt());
    Rhs::from_terms(
        vec![term("entropy_term", t1), term("envelope_max_term", t2)],
        vec![term("j_delta", j), term("delta", d), term("b", b)],
    )
}
