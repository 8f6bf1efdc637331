//! Conditional projections `P_e f`, recursive projections `π_e f` and the
//! components `H_N^e(f)` of the sample mean.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{invalid, Error, Result};
use crate::function_class::{Func, FunctionClass};
use crate::lattice::{all_evectors, EVector, IndexTuple, MaskedIndexer, Shape};
use crate::model::{FactorSet, SeModel};
use crate::rng::{derive, factor_uniform, tag};
use crate::sampler::{fill_factors, sample_array};

/// Evaluates `P_e f` for a list of functions at once, sharing inner Monte
/// Carlo completions across functions.
pub struct Projector<'a> {
    pub model: &'a dyn SeModel,
    pub funcs: &'a [Func],
    pub inner_draws: usize,
}

impl<'a> Projector<'a> {
    pub fn new(model: &'a dyn SeModel, funcs: &'a [Func], inner_draws: usize) -> Self {
        Projector { model, funcs, inner_draws }
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    fn full_mask(&self) -> u32 {
        (1u32 << self.model.dim()) - 1
    }

    /// Writes `P_{scope} f` into `out` and the inner standard errors into
    /// `se`. Factor slots outside the scope of `fs` are used as scratch.
    pub fn project(&self, fs: &mut FactorSet, inner_seed: u64, out: &mut [f64], se: &mut [f64]) -> Result<()> {
        let full = self.full_mask();
        se.iter_mut().for_each(|s| *s = 0.0);
        if fs.scope() == full {
            let x = self.model.tau(fs);
            for (o, f) in out.iter_mut().zip(self.funcs) {
                *o = f.eval(x);
            }
            return Ok(());
        }
        let mut missing = Vec::new();
        for (b, f) in self.funcs.iter().enumerate() {
            match f.analytic_projection(self.model, fs) {
                Some(v) => out[b] = v,
                None => missing.push(b),
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        if self.inner_draws == 0 {
            return Err(Error::NoProjection);
        }
        let scope = fs.scope();
        let free: Vec<u32> = (1..=full).filter(|m| m & !scope != 0).collect();
        let mut sum = vec![0.0; missing.len()];
        let mut sq = vec![0.0; missing.len()];
        for d in 0..self.inner_draws {
            for &m in &free {
                for (c, v) in fs.get_mut(m).iter_mut().enumerate() {
                    *v = factor_uniform(inner_seed, tag::INNER, m, &[d], c);
                }
            }
            let x = self.model.tau(fs);
            for (i, &b) in missing.iter().enumerate() {
                let y = self.funcs[b].eval(x);
                sum[i] += y;
                sq[i] += y * y;
            }
        }
        let n = self.inner_draws as f64;
        for (i, &b) in missing.iter().enumerate() {
            let mean = sum[i] / n;
            out[b] = mean;
            if self.inner_draws > 1 {
                let var = ((sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
                se[b] = (var / n).sqrt();
            }
        }
        Ok(())
    }
}

/// Conditioning set `{U_{i⊙e'}}_{e' ≤ e}` for one index.
#[derive(Clone, Debug)]
pub struct FactorAssignment {
    pub e: EVector,
    pub factors: FactorSet,
    /// Key of the inner Monte Carlo completions.
    pub inner_seed: u64,
}

impl FactorAssignment {
    pub fn new(e: EVector, mut factors: FactorSet, inner_seed: u64) -> Result<Self> {
        if factors.dim() != e.dim() {
            return Err(invalid(format!("factor set has K = {} but e = {e}", factors.dim())));
        }
        factors.set_scope(e.mask());
        Ok(FactorAssignment { e, factors, inner_seed })
    }

    /// The factors an array generated from `seed` attaches to `index ⊙ e`.
    pub fn at_index(model: &dyn SeModel, seed: u64, e: EVector, index: &IndexTuple) -> Result<Self> {
        if index.0.len() != e.dim() || model.dim() != e.dim() {
            return Err(invalid("index, direction and model dimensions differ"));
        }
        let mut fs = FactorSet::new(e.dim(), model.factor_dim(), e.mask());
        fill_factors(&mut fs, seed, tag::FACTOR, &index.0, e.mask());
        let mut words = vec![e.mask() as u64];
        words.extend(index.masked(&e).0.iter().map(|&c| c as u64));
        Ok(FactorAssignment { e, factors: fs, inner_seed: derive(seed, tag::INNER, &words) })
    }

    /// Set of retained directions, i.e. the nonzero `e' ≤ e`.
    pub fn retained(&self) -> Vec<EVector> {
        self.e.submasks()
    }

    fn restricted(&self, sub: EVector) -> FactorSet {
        let mut fs = self.factors.clone();
        fs.set_scope(sub.mask());
        fs
    }
}

/// `P_e f` at the assignment, with its inner standard error (0 when the
/// projection is analytic or `e` is full).
pub fn conditional_projection(
    model: &dyn SeModel,
    f: &Func,
    assignment: &FactorAssignment,
    inner_draws: usize,
) -> Result<(f64, f64)> {
    let funcs = std::slice::from_ref(f);
    let p = Projector::new(model, funcs, inner_draws);
    let mut fs = assignment.factors.clone();
    let (mut out, mut se) = ([0.0], [0.0]);
    p.project(&mut fs, assignment.inner_seed, &mut out, &mut se)?;
    Ok((out[0], se[0]))
}

/// `π_e f = P_e f − Σ_{0 ≠ e' < e} π_{e'} f`, memoizing each `P_{e'}`.
pub fn pi_projection(model: &dyn SeModel, f: &Func, assignment: &FactorAssignment, inner_draws: usize) -> Result<f64> {
    let funcs = std::slice::from_ref(f);
    let p = Projector::new(model, funcs, inner_draws);
    let out = pi_all(&p, assignment)?;
    Ok(out[&assignment.e.mask()][0])
}

/// `π_{e'}` for every nonzero `e' ≤ e` of the assignment, keyed by mask.
/// Each `P_{e'}` uses inner key `derive(inner_seed, INNER, [e'])`.
fn pi_all(p: &Projector<'_>, a: &FactorAssignment) -> Result<BTreeMap<u32, Vec<f64>>> {
    let nb = p.len();
    let mut memo: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut se = vec![0.0; nb];
    for sub in a.e.submasks() {
        let mut fs = a.restricted(sub);
        let mut v = vec![0.0; nb];
        p.project(&mut fs, derive(a.inner_seed, tag::INNER, &[sub.mask() as u64]), &mut v, &mut se)?;
        for lower in sub.submasks() {
            if lower.mask() == sub.mask() {
                continue;
            }
            let pl = &memo[&lower.mask()];
            for (x, y) in v.iter_mut().zip(pl) {
                *x -= y;
            }
        }
        memo.insert(sub.mask(), v);
    }
    Ok(memo)
}

/// `π_{e'}` of every basis function at every index of `I_{N,e'}`, for all
/// nonzero `e' ≤ top`, from the factor realization of `seed`.
pub struct PiTables {
    pub shape: Shape,
    pub top: EVector,
    pub width: usize,
    tables: Vec<Option<Vec<f64>>>,
    /// Root-mean-square inner standard error of `P_{e'}` over `I_{N,e'}`.
    rms_se: Vec<f64>,
}

impl PiTables {
    pub fn build(p: &Projector<'_>, shape: &Shape, seed: u64, top: EVector) -> Result<Self> {
        shape.check_dim(&top)?;
        let k = shape.dim();
        let nb = p.len();
        let mut tables: Vec<Option<Vec<f64>>> = vec![None; 1 << k];
        let mut rms_se = vec![0.0; 1 << k];
        for sub in top.submasks() {
            let ix = MaskedIndexer::new(shape, &sub);
            let lowers: Vec<(MaskedIndexer, &Vec<f64>)> = sub
                .submasks()
                .into_iter()
                .filter(|l| l.mask() != sub.mask())
                .map(|l| (MaskedIndexer::new(shape, &l), tables[l.mask() as usize].as_ref().expect("built")))
                .collect();
            let mut table = vec![0.0; ix.len() * nb];
            let se_sq: Vec<f64> = table
                .par_chunks_mut(nb)
                .enumerate()
                .map_init(
                    || (FactorSet::new(k, p.model.factor_dim(), sub.mask()), vec![0.0; nb]),
                    |(fs, se), (l, row)| -> Result<f64> {
                        let coords = ix.tuple(l).0;
                        fill_factors(fs, seed, tag::FACTOR, &coords, sub.mask());
                        fs.set_scope(sub.mask());
                        p.project(fs, derive(seed, tag::INNER, &[sub.mask() as u64, l as u64]), row, se)?;
                        for (lix, lt) in &lowers {
                            let off = lix.linear(&coords) * nb;
                            for (x, y) in row.iter_mut().zip(&lt[off..off + nb]) {
                                *x -= y;
                            }
                        }
                        Ok(se.iter().map(|s| s * s).sum::<f64>() / nb.max(1) as f64)
                    },
                )
                .collect::<Result<Vec<f64>>>()?;
            rms_se[sub.mask() as usize] = (se_sq.iter().sum::<f64>() / se_sq.len() as f64).sqrt();
            tables[sub.mask() as usize] = Some(table);
        }
        Ok(PiTables { shape: shape.clone(), top, width: nb, tables, rms_se })
    }

    pub fn table(&self, e: &EVector) -> Option<&[f64]> {
        self.tables.get(e.mask() as usize)?.as_deref()
    }

    /// `H_N^e` of every basis function: fixed-order average of the table.
    pub fn component(&self, e: &EVector) -> Result<Vec<f64>> {
        let t = self.table(e).ok_or_else(|| invalid(format!("direction {e} is not below {}", self.top)))?;
        let nb = self.width;
        let rows = t.len() / nb;
        let mut h = vec![0.0; nb];
        for row in t.chunks(nb) {
            for (a, v) in h.iter_mut().zip(row) {
                *a += v;
            }
        }
        h.iter_mut().for_each(|a| *a /= rows as f64);
        Ok(h)
    }

    /// Propagated inner Monte Carlo error of `H^e`: every `P_{e'}` with
    /// `e' ≤ e` enters `π_e` with coefficient ±1.
    pub fn component_inner_se(&self, e: &EVector) -> f64 {
        e.submasks()
            .iter()
            .map(|s| {
                let idx = MaskedIndexer::new(&self.shape, s).len() as f64;
                self.rms_se[s.mask() as usize] / idx.sqrt() * (1u64 << (e.layer() - s.layer())) as f64
            })
            .sum()
    }
}

/// The components `{e ↦ H_N^e(f)}` of one sample, plus `E_N f`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentMap {
    pub shape: Shape,
    pub f_label: String,
    pub components: Vec<(EVector, f64)>,
    pub sample_mean: f64,
    /// Propagated inner Monte Carlo error of `Σ_e H_N^e` (0 when analytic).
    pub inner_se: f64,
}

impl ComponentMap {
    pub fn get(&self, e: &EVector) -> Option<f64> {
        self.components.iter().find(|(x, _)| x == e).map(|c| c.1)
    }

    pub fn total(&self) -> f64 {
        self.components.iter().map(|c| c.1).sum()
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (e, h) in &self.components {
            m.insert(e.to_string(), round_json(*h));
        }
        m.insert("sample_mean".into(), round_json(self.sample_mean));
        Value::Object(m)
    }
}

/// A JSON number rounded to 12 significant digits.
pub fn round_json(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let r: f64 = format!("{:.11e}", x).parse().unwrap_or(x);
    serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
}

/// Hoeffding components of member `member` of `class`.
pub fn decompose(
    model: &dyn SeModel,
    class: &FunctionClass,
    member: usize,
    shape: &Shape,
    seed: u64,
    inner_draws: usize,
) -> Result<ComponentMap> {
    let m = class.members.get(member).ok_or_else(|| invalid(format!("no member {member}")))?;
    let k = shape.dim();
    if model.dim() != k {
        return Err(crate::error::config(format!("model has K = {} but shape has K = {k}", model.dim())));
    }
    let p = Projector::new(model, &class.basis, inner_draws);
    let full = EVector::full(k)?;
    let tables = PiTables::build(&p, shape, seed, full)?;
    let mut components = Vec::new();
    let mut inner_se = 0.0f64;
    for e in all_evectors(k)? {
        components.push((e, m.combine(&tables.component(&e)?)));
        inner_se += tables.component_inner_se(&e).powi(2);
    }
    let sample = sample_array(model, shape, seed)?;
    let sample_mean = sample.values.iter().map(|&x| class.member_value(member, x)).sum::<f64>() / sample.values.len() as f64;
    Ok(ComponentMap { shape: shape.clone(), f_label: m.label.clone(), components, sample_mean, inner_se: inner_se.sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub e: EVector,
    /// 0-based dropped coordinate.
    pub dropped: usize,
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub pass: bool,
}

/// Holds `{U_{i⊙e'}}_{e' ≤ e − e_ℓ}` fixed at the index `(1,…,1)`, redraws
/// the factors of every `e' ≤ e` containing `ℓ` `R` times and reports the
/// mean of `π_e f` over the redraws. Passes when `|mean| ≤ 4·SE`.
#[allow(clippy::too_many_arguments)]
pub fn degeneracy_check(
    model: &dyn SeModel,
    class: &FunctionClass,
    member: usize,
    e: EVector,
    drop: usize,
    replications: usize,
    seed: u64,
    inner_draws: usize,
) -> Result<DegeneracyReport> {
    if !e.contains(drop) {
        return Err(invalid(format!("coordinate {} is not in supp({e})", drop + 1)));
    }
    if replications < 2 {
        return Err(invalid("degeneracy check needs at least two replications"));
    }
    let m = class.members.get(member).ok_or_else(|| invalid(format!("no member {member}")))?;
    let k = e.dim();
    let base = FactorAssignment::at_index(model, seed, e, &IndexTuple(vec![1; k]))?;
    let varying: Vec<u32> = e.submasks().iter().map(|s| s.mask()).filter(|s| s & (1 << drop) != 0).collect();
    let p = Projector::new(model, &class.basis, inner_draws);
    let values: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut a = base.clone();
            let redraw = derive(seed, tag::REDRAW, &[r as u64]);
            for &mask in &varying {
                for (c, v) in a.factors.get_mut(mask).iter_mut().enumerate() {
                    *v = factor_uniform(redraw, tag::REDRAW, mask, &[], c);
                }
            }
            a.inner_seed = derive(seed, tag::INNER, &[r as u64]);
            let pi = pi_all(&p, &a)?;
            Ok(m.combine(&pi[&e.mask()]))
        })
        .collect::<Result<_>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let pass = if se > 0.0 { mean.abs() <= 4.0 * se } else { mean.abs() <= 1e-12 };
    Ok(DegeneracyReport { e, dropped: drop, mean, std_error: se, replications, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdditiveModel, InteractionModel, OpaqueModel};

    fn e(s: &str) -> EVector {
        EVector::parse(s).unwrap()
    }

    fn assignment(k: usize, scope: &str, vals: &[(&str, f64)]) -> FactorAssignment {
        let mut fs = FactorSet::new(k, 1, 0);
        for (m, v) in vals {
            fs.get_mut(e(m).mask())[0] = *v;
        }
        FactorAssignment::new(e(scope), fs, 99).unwrap()
    }

    #[test]
    fn additive_projection_is_analytic() {
        let model = AdditiveModel::new(2).unwrap();
        let f = Func::Piecewise { constant: -1.5, slope: 1.0, steps: vec![] };
        let a = assignment(2, "10", &[("10", 0.3)]);
        let (v, se) = conditional_projection(&model, &f, &a, 0).unwrap();
        assert!((v - (0.3 - 0.5)).abs() < 1e-15);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn full_direction_is_the_function_itself() {
        let model = OpaqueModel::new(2, 1).unwrap();
        let f = Func::custom("sq", |x| x * x);
        let a = assignment(2, "11", &[("10", 0.2), ("01", 0.7), ("11", 0.4)]);
        let (v, se) = conditional_projection(&model, &f, &a, 0).unwrap();
        let x = model.tau(&a.factors);
        assert_eq!(v, x * x);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn missing_projection_needs_draws() {
        let model = OpaqueModel::new(2, 1).unwrap();
        let f = Func::identity();
        let a = assignment(2, "10", &[("10", 0.2)]);
        assert!(matches!(conditional_projection(&model, &f, &a, 0), Err(Error::NoProjection)));
    }

    #[test]
    fn opaque_inner_monte_carlo_matches_large_oracle() {
        let model = OpaqueModel::new(2, 2).unwrap();
        let f = Func::identity();
        let mut fs = FactorSet::new(2, 2, 0);
        fs.get_mut(1).copy_from_slice(&[0.6, 0.3]);
        let a = FactorAssignment::new(e("10"), fs.clone(), 5).unwrap();
        let (v, se) = conditional_projection(&model, &f, &a, 10_000).unwrap();
        let oracle = FactorAssignment::new(e("10"), fs, 6).unwrap();
        let (w, _) = conditional_projection(&model, &f, &oracle, 1_000_000).unwrap();
        assert!(se > 0.0);
        assert!((v - w).abs() < 4.0 * se, "{v} vs {w} (se {se})");
    }

    #[test]
    fn analytic_and_monte_carlo_agree() {
        let add = AdditiveModel::new(2).unwrap();
        let inter = InteractionModel::new(2, 0.5).unwrap();
        let models: [&dyn SeModel; 2] = [&add, &inter];
        for model in models {
            let exact = Func::identity();
            let mc = Func::custom("id", |x| x);
            let a = assignment(2, "01", &[("01", 0.8)]);
            let (v, _) = conditional_projection(model, &exact, &a, 0).unwrap();
            let (w, se) = conditional_projection(model, &mc, &a, 20_000).unwrap();
            assert!((v - w).abs() < 4.0 * se, "{}: {v} vs {w}", model.description());
        }
        let ind = Func::indicator_le(1.2);
        let mc = Func::custom("le", |x| (x <= 1.2) as u8 as f64);
        let a = assignment(2, "10", &[("10", 0.4)]);
        let (v, _) = conditional_projection(&add, &ind, &a, 0).unwrap();
        let (w, se) = conditional_projection(&add, &mc, &a, 20_000).unwrap();
        assert!((v - w).abs() < 4.0 * se);
    }

    #[test]
    fn pi_recursion_on_additive_model() {
        let model = AdditiveModel::new(2).unwrap();
        let f = Func::Piecewise { constant: -1.5, slope: 1.0, steps: vec![] };
        let vals = [("10", 0.1), ("01", 0.65), ("11", 0.9)];
        for (dir, u) in [("10", 0.1), ("01", 0.65), ("11", 0.9)] {
            let a = assignment(2, dir, &vals);
            let pi = pi_projection(&model, &f, &a, 0).unwrap();
            assert!((pi - (u - 0.5)).abs() < 1e-14, "{dir}");
        }
        let zero = Func::constant(0.0);
        let a = assignment(2, "11", &vals);
        assert_eq!(pi_projection(&model, &zero, &a, 0).unwrap(), 0.0);
        let a = assignment(2, "10", &vals);
        let f2 = Func::indicator_le(1.0);
        assert_eq!(pi_projection(&model, &f2, &a, 0).unwrap(), conditional_projection(&model, &f2, &a, 0).unwrap().0);
    }

    #[test]
    fn decomposition_identity_analytic() {
        let model = AdditiveModel::new(2).unwrap();
        let class = FunctionClass::identity(&model);
        let cm = decompose(&model, &class, 0, &Shape::new(vec![2, 2]).unwrap(), 3, 0).unwrap();
        assert!((cm.total() - cm.sample_mean).abs() < 1e-12);
        let json = cm.to_json().to_string();
        assert!(json.starts_with("{\"10\":"));
        assert!(json.contains("\"sample_mean\":"));
    }

    #[test]
    fn single_cell_components_are_pi() {
        let model = AdditiveModel::new(2).unwrap();
        let class = FunctionClass::identity(&model);
        let shape = Shape::new(vec![1, 1]).unwrap();
        let cm = decompose(&model, &class, 0, &shape, 8, 0).unwrap();
        let f = Func::Piecewise { constant: -1.5, slope: 1.0, steps: vec![] };
        for dir in all_evectors(2).unwrap() {
            let a = FactorAssignment::at_index(&model, 8, dir, &IndexTuple(vec![1, 1])).unwrap();
            let pi = pi_projection(&model, &f, &a, 0).unwrap();
            assert!((cm.get(&dir).unwrap() - pi).abs() < 1e-14);
        }
    }

    #[test]
    fn decomposition_identity_opaque() {
        let model = OpaqueModel::new(2, 1).unwrap();
        let class = FunctionClass::singleton("sin", Func::custom("sin", f64::sin), Func::constant(1.0));
        let cm = decompose(&model, &class, 0, &Shape::new(vec![4, 4]).unwrap(), 11, 2000).unwrap();
        assert!(cm.inner_se > 0.0);
        assert!((cm.total() - cm.sample_mean).abs() <= 4.0 * cm.inner_se);
    }

    #[test]
    fn degeneracy_reports() {
        let model = AdditiveModel::new(2).unwrap();
        let class = FunctionClass::identity(&model);
        let r = degeneracy_check(&model, &class, 0, e("11"), 0, 500, 4, 0).unwrap();
        assert!(r.pass, "{r:?}");
        let r = degeneracy_check(&model, &class, 0, e("10"), 0, 500, 4, 0).unwrap();
        assert!(r.pass, "{r:?}");
        let r = degeneracy_check(&model, &FunctionClass::zero(), 0, e("11"), 1, 200, 4, 0).unwrap();
        assert_eq!(r.mean, 0.0);
        assert!(r.pass);
        assert!(degeneracy_check(&model, &class, 0, e("10"), 1, 200, 4, 0).is_err());
    }
}
