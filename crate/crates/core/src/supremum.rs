//! Monte Carlo suprema of the empirical process and of its Hoeffding
//! components, their moments, and the localization statistics `σ_e`, `δ_e`,
//! `‖M_e‖`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::function_class::{Func, FunctionClass};
use crate::hoeffding::{PiTables, Projector};
use crate::lattice::{EVector, MaskedIndexer, Shape};
use crate::model::{FactorSet, SeModel};
use crate::rng::{derive, mix64, replication_seed, tag};
use crate::sampler::{fill_factors, fmt_float, SampleArray};

pub const MAX_Q: f64 = 8.0;

/// `‖G_n‖_F = (√n/N)·max_θ |Σ_i f_θ(X_i)|` over the skeleton.
pub fn empirical_process_sup(sample: &SampleArray, class: &FunctionClass) -> f64 {
    let nb = class.basis.len();
    let mut sums = vec![0.0; nb];
    let mut buf = vec![0.0; nb];
    for &x in &sample.values {
        class.basis_values(x, &mut buf);
        for (s, v) in sums.iter_mut().zip(&buf) {
            *s += v;
        }
    }
    let n = sample.shape.min_dim() as f64;
    let total = sample.values.len() as f64;
    let best = class.members.iter().map(|m| m.combine(&sums).abs()).fold(0.0, f64::max);
    n.sqrt() / total * best
}

fn check_inputs(model: &dyn SeModel, shape: &Shape, e: &EVector) -> Result<()> {
    shape.check_dim(e)?;
    if e.is_zero() {
        return Err(invalid("zero direction has no component"));
    }
    if model.dim() != shape.dim() {
        return Err(crate::error::config(format!(
            "model has K = {} but shape {shape} has K = {}",
            model.dim(),
            shape.dim()
        )));
    }
    Ok(())
}

/// `H_N^e(f_θ)` for every member.
pub fn component_values(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    seed: u64,
    inner_draws: usize,
) -> Result<Vec<f64>> {
    check_inputs(model, shape, &e)?;
    let p = Projector::new(model, &class.basis, inner_draws);
    let tables = PiTables::build(&p, shape, seed, e)?;
    let h = tables.component(&e)?;
    Ok(class.members.iter().map(|m| m.combine(&h)).collect())
}

/// `‖H_N^e‖_F = max_θ |H_N^e(f_θ)|`, all members sharing one realization.
pub fn component_sup(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    seed: u64,
    inner_draws: usize,
) -> Result<f64> {
    Ok(component_values(model, class, shape, e, seed, inner_draws)?.iter().fold(0.0, |a, h| a.max(h.abs())))
}

/// How coordinate-wise Rademacher signs are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignMode {
    Random,
    /// Every sign `+1`.
    Fixed,
}

/// `max_θ |N_e^{-1} Σ_{i ∈ I_{N,e}} ε_{1,i_1}⋯ε_{K,i_K} π_e f_θ(i)|`, the
/// product running over `supp(e)`.
pub fn symmetrized_sup_diagnostic(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    seed: u64,
    inner_draws: usize,
    signs: SignMode,
) -> Result<f64> {
    check_inputs(model, shape, &e)?;
    let p = Projector::new(model, &class.basis, inner_draws);
    let tables = PiTables::build(&p, shape, seed, e)?;
    let t = tables.table(&e).expect("built");
    let nb = class.basis.len();
    let ix = MaskedIndexer::new(shape, &e);
    let support = e.support();
    let mut h = vec![0.0; nb];
    for (l, row) in t.chunks(nb).enumerate() {
        let sign = match signs {
            SignMode::Fixed => 1.0,
            SignMode::Random => {
                let coords = ix.tuple(l).0;
                let parity = support
                    .iter()
                    .map(|&j| derive(seed, tag::SIGN, &[j as u64, coords[j] as u64]) >> 63)
                    .fold(0, |a, b| a ^ b);
                if parity == 0 { 1.0 } else { -1.0 }
            }
        };
        for (a, v) in h.iter_mut().zip(row) {
            *a += sign * v;
        }
    }
    let rows = ix.len() as f64;
    h.iter_mut().for_each(|a| *a /= rows);
    Ok(class.members.iter().map(|m| m.combine(&h).abs()).fold(0.0, f64::max))
}

/// `|I_{N,e}|^{1/2}·(E ‖H_N^e‖_F^q)^{1/q}` with a delta-method standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub replications: usize,
    pub q: f64,
}

impl MomentEstimate {
    /// Estimate from per-replication suprema, scaled by `√scale`.
    pub fn from_sups(sups: &[f64], q: f64, scale: f64) -> Self {
        let r = sups.len() as f64;
        let pow: Vec<f64> = sups.iter().map(|s| s.powf(q)).collect();
        let m = pow.iter().sum::<f64>() / r;
        let sd = (pow.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
        let root = scale.sqrt();
        let (value, std_error) = if m > 0.0 {
            (root * m.powf(1.0 / q), root * m.powf(1.0 / q - 1.0) / q * sd / r.sqrt())
        } else {
            (0.0, 0.0)
        };
        MomentEstimate { value, std_error, replications: sups.len(), q }
    }
}

fn check_moment_args(qs: &[f64], replications: usize) -> Result<()> {
    if replications < 2 {
        return Err(invalid("moment estimates need at least two replications"));
    }
    if let Some(q) = qs.iter().find(|&&q| !(1.0..=MAX_Q).contains(&q)) {
        return Err(invalid(format!("moment order q = {q} outside [1, {MAX_Q}]")));
    }
    Ok(())
}

/// `R` suprema `‖H_N^e‖_F` under seeds `seed ⊕ mix(r)`.
pub fn component_sups(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    replications: usize,
    seed: u64,
    inner_draws: usize,
) -> Result<Vec<f64>> {
    (0..replications)
        .into_par_iter()
        .map(|r| component_sup(model, class, shape, e, replication_seed(seed, r as u64), inner_draws))
        .collect()
}

/// [`component_moment`] for several `q` on one replication set.
#[allow(clippy::too_many_arguments)]
pub fn component_moments(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    qs: &[f64],
    replications: usize,
    seed: u64,
    inner_draws: usize,
) -> Result<Vec<MomentEstimate>> {
    check_moment_args(qs, replications)?;
    let sups = component_sups(model, class, shape, e, replications, seed, inner_draws)?;
    let scale = shape.cardinality(&e) as f64;
    Ok(qs.iter().map(|&q| MomentEstimate::from_sups(&sups, q, scale)).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn component_moment(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    q: f64,
    replications: usize,
    seed: u64,
    inner_draws: usize,
) -> Result<MomentEstimate> {
    Ok(component_moments(model, class, shape, e, &[q], replications, seed, inner_draws)?.remove(0))
}

/// CSV rows `shape,e,q,R,value,std_error`.
pub fn write_moment_csv<W: Write>(mut w: W, rows: &[(Shape, EVector, MomentEstimate)]) -> Result<()> {
    writeln!(w, "shape,e,q,R,value,std_error")?;
    for (s, e, m) in rows {
        let dims: Vec<String> = s.dims().iter().map(|d| d.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            dims.join("x"),
            e,
            fmt_float(m.q),
            m.replications,
            fmt_float(m.value),
            fmt_float(m.std_error)
        )?;
    }
    Ok(())
}

/// Localization quantities for one direction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationStats {
    /// The `σ_e` used downstream, after clipping into
    /// `[sigma_estimate, envelope_l2]`.
    pub sigma_e: f64,
    /// `max_θ ‖P_e f_θ‖_{P,2}`.
    pub sigma_estimate: f64,
    pub envelope_l2: f64,
    pub delta_e: f64,
    pub m_e_l2: f64,
    pub n: usize,
    pub replications: usize,
}

impl LocalizationStats {
    /// Rebuilds the stats with `σ_e` set to `sigma`, clipped as usual.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let mut s = self.clone();
        s.sigma_e = sigma.clamp(self.sigma_estimate, self.envelope_l2);
        s.delta_e = s.sigma_e / s.envelope_l2;
        if !(s.delta_e > 0.0) {
            return Err(Error::Degenerate(format!("delta_e = {}", s.delta_e)));
        }
        Ok(s)
    }
}

/// Per-member `‖P_e f_θ‖_{P,2}`, `‖P_e F‖_{P,2}` and `‖M_e‖_{P,2}` from `R`
/// replications of the diagonal factors `(t,…,t)⊙e`, `t ∈ [n]`. Distinct
/// diagonal indices share no factor, so all `n·R` draws are independent.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedNorms {
    pub members: Vec<f64>,
    pub envelope_l2: f64,
    pub m_e_l2: f64,
    pub n: usize,
    pub replications: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn projected_norms(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    replications: usize,
    seed: u64,
    inner_draws: usize,
) -> Result<ProjectedNorms> {
    check_inputs(model, shape, &e)?;
    if replications < 2 {
        return Err(invalid("localization needs at least two replications"));
    }
    let k = shape.dim();
    let n = shape.min_dim();
    let mut funcs: Vec<Func> = class.basis.clone();
    funcs.push(class.envelope.clone());
    let nf = funcs.len();
    let p = Projector::new(model, &funcs, inner_draws);
    // rows: replication-major, then t
    let rows: Vec<Vec<f64>> = (0..replications * n)
        .into_par_iter()
        .map_init(
            || FactorSet::new(k, model.factor_dim(), e.mask()),
            |fs, idx| -> Result<Vec<f64>> {
                let (r, t) = (idx / n, idx % n + 1);
                let rs = replication_seed(seed, r as u64);
                fill_factors(fs, rs, tag::FACTOR, &vec![t; k], e.mask());
                fs.set_scope(e.mask());
                let mut out = vec![0.0; nf];
                let mut se = vec![0.0; nf];
                p.project(fs, derive(rs, tag::INNER, &[e.mask() as u64, mix64(t as u64)]), &mut out, &mut se)?;
                Ok(out)
            },
        )
        .collect::<Result<_>>()?;
    let draws = rows.len() as f64;
    let members: Vec<f64> = class
        .members
        .par_iter()
        .map(|m| (rows.iter().map(|row| m.combine(row).powi(2)).sum::<f64>() / draws).sqrt())
        .collect();
    let envelope_l2 = (rows.iter().map(|row| row[nf - 1].powi(2)).sum::<f64>() / draws).sqrt();
    let m_sq: f64 = rows
        .chunks(n)
        .map(|rep| rep.iter().map(|row| row[nf - 1]).fold(f64::NEG_INFINITY, f64::max).powi(2))
        .sum::<f64>()
        / replications as f64;
    Ok(ProjectedNorms { members, envelope_l2, m_e_l2: m_sq.sqrt(), n, replications })
}

/// `σ_e`, `‖P_e F‖`, `δ_e` and `‖M_e‖`. An override of `σ_e` is honoured
/// after clipping into the admissible interval.
#[allow(clippy::too_many_arguments)]
pub fn localization_stats(
    model: &dyn SeModel,
    class: &FunctionClass,
    shape: &Shape,
    e: EVector,
    replications: usize,
    seed: u64,
    inner_draws: usize,
    sigma_override: Option<f64>,
) -> Result<LocalizationStats> {
    let norms = projected_norms(model, class, shape, e, replications, seed, inner_draws)?;
    stats_from_norms(&norms, sigma_override)
}

pub fn stats_from_norms(norms: &ProjectedNorms, sigma_override: Option<f64>) -> Result<LocalizationStats> {
    if !(norms.envelope_l2 > 0.0) {
        return Err(Error::Degenerate("‖P_e F‖ is zero".into()));
    }
    let est = norms.members.iter().cloned().fold(0.0, f64::max).min(norms.envelope_l2);
    let base = LocalizationStats {
        sigma_e: est,
        sigma_estimate: est,
        envelope_l2: norms.envelope_l2,
        delta_e: est / norms.envelope_l2,
        m_e_l2: norms.m_e_l2,
        n: norms.n,
        replications: norms.replications,
    };
    base.with_sigma(sigma_override.unwrap_or(est))
}
