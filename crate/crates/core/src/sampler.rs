//! AHK sampling of separately exchangeable arrays.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{config, invalid, Result};
use crate::lattice::{EVector, IndexTuple, MaskedIndexer, Shape};
use crate::model::{FactorSet, SeModel};
use crate::rng::{factor_uniform, tag};

/// Address of one factor `U_{i⊙e}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UFactorKey {
    pub e: EVector,
    pub masked_index: IndexTuple,
}

impl UFactorKey {
    pub fn new(e: EVector, index: &IndexTuple) -> Self {
        UFactorKey { e, masked_index: index.masked(&e) }
    }

    pub fn is_consistent(&self) -> bool {
        self.masked_index.0.len() == self.e.dim()
            && self
                .masked_index
                .0
                .iter()
                .enumerate()
                .all(|(j, &c)| (c != 0) == self.e.contains(j))
    }
}

/// The factor vector `U_{i⊙e} ∈ [0,1]^factor_dim`.
pub fn u_factor(seed: u64, key: &UFactorKey, factor_dim: usize) -> Result<Vec<f64>> {
    if key.e.is_zero() || !key.is_consistent() {
        return Err(invalid(format!(
            "factor key {} is not consistent with direction {}",
            key.masked_index, key.e
        )));
    }
    Ok((0..factor_dim)
        .map(|c| factor_uniform(seed, tag::FACTOR, key.e.mask(), &key.masked_index.0, c))
        .collect())
}

/// Writes the factors of every nonzero `mask ≤ scope` at index `coords`
/// (unmasked, 1-based) into `fs`, drawing from `(seed, domain)`.
pub(crate) fn fill_factors(fs: &mut FactorSet, seed: u64, domain: u64, coords: &[usize], scope: u32) {
    let dim = fs.dim();
    let fdim = fs.factor_dim();
    let mut masked = [0usize; crate::lattice::MAX_DIM];
    let mut sub = scope;
    while sub != 0 {
        for j in 0..dim {
            masked[j] = if sub & (1 << j) != 0 { coords[j] } else { 0 };
        }
        let slot = fs.get_mut(sub);
        for (c, v) in slot.iter_mut().enumerate().take(fdim) {
            *v = factor_uniform(seed, domain, sub, &masked[..dim], c);
        }
        sub = (sub - 1) & scope;
    }
}

/// A realised array `{X_i : i ∈ [N]}`, stored row-major with the last
/// coordinate varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleArray {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl SampleArray {
    pub fn get(&self, index: &[usize]) -> f64 {
        let ix = self.indexer();
        self.values[ix.linear(index)]
    }

    pub fn indexer(&self) -> MaskedIndexer {
        MaskedIndexer::new(&self.shape, &EVector::full(self.shape.dim()).expect("valid K"))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// CSV with columns `i_1,…,i_K,x`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.shape.dim();
        let header: Vec<String> = (1..=k).map(|j| format!("i_{j}")).chain(["x".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        let ix = self.indexer();
        for (l, x) in self.values.iter().enumerate() {
            let t = ix.tuple(l);
            let cols: Vec<String> = t.0.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{}", cols.join(","), fmt_float(*x))?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_float(x: f64) -> String {
    format!("{:.11e}", x)
        .parse::<f64>()
        .map(|v| v.to_string())
        .unwrap_or_else(|_| x.to_string())
}

fn check_model(model: &dyn SeModel, shape: &Shape) -> Result<()> {
    if model.dim() != shape.dim() {
        return Err(config(format!(
            "model has K = {} but shape {} has K = {}",
            model.dim(),
            shape,
            shape.dim()
        )));
    }
    Ok(())
}

/// `X_i = τ({U_{i⊙e}}_{e ≠ 0})` for every `i ∈ [N]`.
pub fn sample_array(model: &dyn SeModel, shape: &Shape, seed: u64) -> Result<SampleArray> {
    sample_with(model, shape, seed, None)
}

/// The array `{X_{π(i)}}`: factors are looked up at permuted indices. Each
/// `perms[j]` is a 1-based permutation of `[N_j]`.
pub fn permuted_sample(
    model: &dyn SeModel,
    shape: &Shape,
    seed: u64,
    perms: &[Vec<usize>],
) -> Result<SampleArray> {
    if perms.len() != shape.dim() {
        return Err(invalid(format!("expected {} permutations, got {}", shape.dim(), perms.len())));
    }
    for (j, p) in perms.iter().enumerate() {
        let n = shape.dims()[j];
        let mut seen = vec![false; n];
        let ok = p.len() == n
            && p.iter().all(|&v| {
                if v == 0 || v > n || seen[v - 1] {
                    false
                } else {
                    seen[v - 1] = true;
                    true
                }
            });
        if !ok {
            return Err(invalid(format!("perms[{}] is not a permutation of [1, {n}]", j + 1)));
        }
    }
    sample_with(model, shape, seed, Some(perms))
}

fn sample_with(
    model: &dyn SeModel,
    shape: &Shape,
    seed: u64,
    perms: Option<&[Vec<usize>]>,
) -> Result<SampleArray> {
    check_model(model, shape)?;
    let k = shape.dim();
    let full = EVector::full(k)?;
    let ix = MaskedIndexer::new(shape, &full);
    let values: Vec<f64> = (0..ix.len())
        .into_par_iter()
        .map_init(
            || FactorSet::new(k, model.factor_dim(), full.mask()),
            |fs, l| {
                let mut coords = ix.tuple(l).0;
                if let Some(p) = perms {
                    for j in 0..k {
                        coords[j] = p[j][coords[j] - 1];
                    }
                }
                fill_factors(fs, seed, tag::FACTOR, &coords, full.mask());
                model.tau(fs)
            },
        )
        .collect();
    Ok(SampleArray { shape: shape.clone(), values, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AdditiveModel;

    struct Constant(f64);
    impl SeModel for Constant {
        fn dim(&self) -> usize {
            2
        }
        fn tau(&self, _: &FactorSet) -> f64 {
            self.0
        }
        fn support(&self) -> (f64, f64) {
            (self.0, self.0)
        }
        fn description(&self) -> String {
            "constant".into()
        }
    }

    fn e(s: &str) -> EVector {
        EVector::parse(s).unwrap()
    }

    #[test]
    fn factor_is_deterministic_and_checked() {
        let key = UFactorKey::new(e("10"), &IndexTuple(vec![3, 2]));
        assert_eq!(key.masked_index, IndexTuple(vec![3, 0]));
        assert_eq!(u_factor(1, &key, 2).unwrap(), u_factor(1, &key, 2).unwrap());
        let bad = UFactorKey { e: e("10"), masked_index: IndexTuple(vec![3, 2]) };
        assert!(u_factor(1, &bad, 1).is_err());
    }

    #[test]
    fn factor_mean_clt() {
        let n = 100_000;
        let mean: f64 = (1..=n)
            .map(|i| u_factor(9, &UFactorKey { e: e("10"), masked_index: IndexTuple(vec![i, 0]) }, 1).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 4.0 / (12.0 * n as f64).sqrt());
    }

    #[test]
    fn seed_change_moves_some_factor() {
        let differs = (1..=100).any(|i| {
            let k = UFactorKey { e: e("11"), masked_index: IndexTuple(vec![i, 1]) };
            u_factor(1, &k, 1).unwrap() != u_factor(2, &k, 1).unwrap()
        });
        assert!(differs);
    }

    #[test]
    fn single_cell_is_sum_of_factors() {
        let m = AdditiveModel::new(2).unwrap();
        let s = sample_array(&m, &Shape::new(vec![1, 1]).unwrap(), 42).unwrap();
        let u = |b: &str, c: Vec<usize>| {
            u_factor(42, &UFactorKey { e: e(b), masked_index: IndexTuple(c) }, 1).unwrap()[0]
        };
        let expect = u("10", vec![1, 0]) + u("01", vec![0, 1]) + u("11", vec![1, 1]);
        assert_eq!(s.values, vec![expect]);
    }

    #[test]
    fn constant_model() {
        let s = sample_array(&Constant(2.5), &Shape::new(vec![3, 4]).unwrap(), 0).unwrap();
        assert!(s.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn dimension_mismatch() {
        let m = AdditiveModel::new(3).unwrap();
        assert!(sample_array(&m, &Shape::new(vec![2, 2]).unwrap(), 0).is_err());
    }

    #[test]
    fn permutation_relabels() {
        let m = AdditiveModel::new(2).unwrap();
        let shape = Shape::new(vec![3, 2]).unwrap();
        let base = sample_array(&m, &shape, 5).unwrap();
        let id = permuted_sample(&m, &shape, 5, &[vec![1, 2, 3], vec![1, 2]]).unwrap();
        assert_eq!(base, id);
        let p = vec![vec![3, 1, 2], vec![2, 1]];
        let perm = permuted_sample(&m, &shape, 5, &p).unwrap();
        for i in 1..=3 {
            for j in 1..=2 {
                assert_eq!(perm.get(&[i, j]), base.get(&[p[0][i - 1], p[1][j - 1]]));
            }
        }
        assert!(permuted_sample(&m, &shape, 5, &[vec![1, 1, 2], vec![1, 2]]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = AdditiveModel::new(2).unwrap();
        let s = sample_array(&m, &Shape::new(vec![2, 1]).unwrap(), 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i_1,i_2,x");
        assert!(lines[1].starts_with("1,1,"));
        assert!(lines[2].starts_with("2,1,"));
    }
}
