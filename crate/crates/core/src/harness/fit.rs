//! VC characteristics of the projected class `P_e F = {P_e f : f ∈ F}`,
//! fitted on empirical measures over factor space.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::function_class::{fit_vc, FunctionClass, MeasuredClass, VcCharacteristics};
use crate::harness::rhs::vc_a_floor;
use crate::hoeffding::Projector;
use crate::lattice::EVector;
use crate::model::{FactorSet, SeModel};
use crate::rng::{derive, tag};
use crate::sampler::fill_factors;

/// `P_e f_θ` (member-major) and `P_e F` at independent draws of the factors
/// `{U_{e'} : e' ≤ e}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSample {
    pub members: Vec<Vec<f64>>,
    pub envelope: Vec<f64>,
}

impl ProjectedSample {
    pub fn draws(&self) -> usize {
        self.envelope.len()
    }
}

pub fn projected_sample(
    model: &dyn SeModel,
    class: &FunctionClass,
    e: EVector,
    draws: usize,
    seed: u64,
    inner_draws: usize,
) -> Result<ProjectedSample> {
    if e.is_zero() || e.dim() != model.dim() {
        return Err(invalid(format!("direction {e} does not fit a K = {} model", model.dim())));
    }
    let k = model.dim();
    let mut funcs = class.basis.clone();
    funcs.push(class.envelope.clone());
    let nf = funcs.len();
    let p = Projector::new(model, &funcs, inner_draws);
    let base = derive(seed, tag::STATS, &[e.mask() as u64]);
    let rows: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map_init(
            || FactorSet::new(k, model.factor_dim(), e.mask()),
            |fs, d| -> Result<Vec<f64>> {
                fill_factors(fs, base, tag::STATS, &vec![d + 1; k], e.mask());
                fs.set_scope(e.mask());
                let mut out = vec![0.0; nf];
                let mut se = vec![0.0; nf];
                p.project(fs, derive(base, tag::INNER, &[d as u64]), &mut out, &mut se)?;
                Ok(out)
            },
        )
        .collect::<Result<_>>()?;
    let members = class.members.iter().map(|m| rows.iter().map(|r| m.combine(r)).collect()).collect();
    let envelope = rows.iter().map(|r| r[nf - 1]).collect();
    Ok(ProjectedSample { members, envelope })
}

/// Uniform measures on `measures` disjoint blocks of the sample, plus point
/// masses where the projected envelope is smallest and largest.
pub fn measured_projections(sample: &ProjectedSample, measures: usize) -> Result<Vec<MeasuredClass>> {
    let n = sample.draws();
    if measures == 0 || n < measures {
        return Err(invalid(format!("cannot split {n} draws into {measures} measures")));
    }
    let size = n / measures;
    let mut out = Vec::with_capacity(measures + 2);
    for b in 0..measures {
        let range = b * size..(b + 1) * size;
        let rows: Vec<Vec<f64>> = sample.members.iter().map(|m| m[range.clone()].to_vec()).collect();
        let w = vec![1.0 / size as f64; size];
        out.push(MeasuredClass::new(&rows, &sample.envelope[range], &w));
    }
    let by_env = |better: fn(f64, f64) -> bool| {
        (0..n).fold(0, |best, i| if better(sample.envelope[i], sample.envelope[best]) { i } else { best })
    };
    for i in [by_env(|a, b| a < b), by_env(|a, b| a > b)] {
        let rows: Vec<Vec<f64>> = sample.members.iter().map(|m| vec![m[i]]).collect();
        out.push(MeasuredClass::new(&rows, &[sample.envelope[i]], &[1.0]));
    }
    Ok(out)
}

/// Fitted `(A, v)` for `P_e F`, with `A` floored at the admissible
/// `max(e^{2(K−1)}/16, e)`.
pub fn fit_projected_vc(sample: &ProjectedSample, dim: usize, measures: usize) -> Result<VcCharacteristics> {
    let mut measured = measured_projections(sample, measures)?;
    fit_vc(&mut measured, vc_a_floor(dim))
}

/// Differences `f − g` of members of a class with characteristics `(A, v)`
/// satisfy `N(ε) ≤ N_base(ε/2)² ≤ (2A/ε)^{2v}` under a shared envelope.
pub fn differences_vc(base: VcCharacteristics) -> Result<VcCharacteristics> {
    VcCharacteristics::new(2.0 * base.a, 2.0 * base.v)
}
