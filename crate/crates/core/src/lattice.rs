//! Index lattice combinatorics.
//!
//! Direction vectors `e ∈ {0,1}^K` are stored as bit masks: coordinate `j`
//! (0-based) is active when bit `j` is set. Index tuples are 1-based in every
//! active coordinate and `0` in masked coordinates, so `i ⊙ e` is simply
//! "zero out the inactive coordinates".

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{config, invalid, Result};

/// Largest index dimension supported by [`enumerate_evectors`].
pub const MAX_DIM: usize = 16;

/// A binary direction vector `e ∈ {0,1}^K`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EVector {
    mask: u32,
    dim: u8,
}

impl EVector {
    pub fn from_mask(mask: u32, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(config(format!("dimension K = {dim} outside [1, {MAX_DIM}]")));
        }
        if mask >> dim != 0 {
            return Err(invalid(format!("mask {mask:#b} has bits beyond K = {dim}")));
        }
        Ok(EVector { mask, dim: dim as u8 })
    }

    /// Builds a vector from explicit 0/1 entries.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut mask = 0u32;
        for (j, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => mask |= 1 << j,
                _ => return Err(invalid(format!("direction entry {b} is not 0/1"))),
            }
        }
        Self::from_mask(mask, bits.len())
    }

    /// Parses a bit string such as `"101"` (coordinate 1 first).
    pub fn parse(s: &str) -> Result<Self> {
        let bits: Vec<u8> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(invalid(format!("bad direction string {s:?}"))),
            })
            .collect::<Result<_>>()?;
        Self::from_bits(&bits)
    }

    pub fn full(dim: usize) -> Result<Self> {
        Self::from_mask(if dim >= 32 { u32::MAX } else { (1u32 << dim) - 1 }, dim)
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Layer `k = |supp(e)|`.
    pub fn layer(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_zero(&self) -> bool {
        self.mask == 0
    }

    pub fn is_full(&self) -> bool {
        self.mask.count_ones() as usize == self.dim()
    }

    pub fn contains(&self, coord: usize) -> bool {
        coord < self.dim() && self.mask & (1 << coord) != 0
    }

    /// 0-based active coordinates in increasing order.
    pub fn support(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.contains(j)).collect()
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.dim()).map(|j| self.contains(j) as u8).collect()
    }

    /// Partial order `e' ≤ e`, i.e. `supp(e') ⊆ supp(e)`.
    pub fn le(&self, other: &EVector) -> bool {
        self.mask & !other.mask == 0
    }

    /// `e − e_ℓ` for an active coordinate `ℓ`.
    pub fn without(&self, coord: usize) -> Result<EVector> {
        if !self.contains(coord) {
            return Err(invalid(format!("coordinate {} not in supp({self})", coord + 1)));
        }
        Ok(EVector { mask: self.mask & !(1 << coord), dim: self.dim })
    }

    /// Nonzero `e' ≤ e` in increasing mask order; every proper sub-vector of
    /// an element precedes it.
    pub fn submasks(&self) -> Vec<EVector> {
        let mut out = Vec::with_capacity((1usize << self.layer()) - 1);
        let mut sub = self.mask;
        while sub != 0 {
            out.push(EVector { mask: sub, dim: self.dim });
            sub = (sub - 1) & self.mask;
        }
        out.reverse();
        out
    }
}

impl fmt::Display for EVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for EVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EVector({self})")
    }
}

impl Serialize for EVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        EVector::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// All nonzero direction vectors grouped by layer: `out[k-1]` is `E_k`.
///
/// Within a layer the order is lexicographic in the support sets, so for
/// `K = 2` the first layer is `(1,0), (0,1)`.
pub fn enumerate_evectors(dim: usize) -> Result<Vec<Vec<EVector>>> {
    if dim == 0 || dim > MAX_DIM {
        return Err(config(format!("K = {dim} outside [1, {MAX_DIM}]")));
    }
    let mut layers: Vec<Vec<EVector>> = vec![Vec::new(); dim];
    for mask in 1u32..(1u32 << dim) {
        let e = EVector { mask, dim: dim as u8 };
        layers[e.layer() - 1].push(e);
    }
    for layer in &mut layers {
        layer.sort_by_key(|e| e.support());
    }
    Ok(layers)
}

/// Flattened [`enumerate_evectors`].
pub fn all_evectors(dim: usize) -> Result<Vec<EVector>> {
    Ok(enumerate_evectors(dim)?.into_iter().flatten().collect())
}

/// Array dimensions `(N_1, …, N_K)`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_DIM {
            return Err(config(format!("shape must have 1..={MAX_DIM} dimensions")));
        }
        if dims.contains(&0) {
            return Err(config(format!("shape {dims:?} has a zero dimension")));
        }
        Ok(Shape { dims })
    }

    /// `(n, n, …, n)` with `K` entries.
    pub fn square(n: usize, dim: usize) -> Result<Self> {
        Self::new(vec![n; dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    /// `N = ∏ N_k`.
    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// `n = min_k N_k`.
    pub fn min_dim(&self) -> usize {
        *self.dims.iter().min().unwrap()
    }

    /// `N̄ = max_k N_k`.
    pub fn max_dim(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }

    /// `|I_{N,e}| = ∏_{j ∈ supp(e)} N_j`.
    pub fn cardinality(&self, e: &EVector) -> usize {
        e.support().iter().map(|&j| self.dims[j]).product()
    }

    pub fn check_dim(&self, e: &EVector) -> Result<()> {
        if e.dim() != self.dim() {
            return Err(config(format!(
                "direction {e} has K = {} but shape has K = {}",
                e.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = crate::Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.dims
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Shape{self}")
    }
}

/// A (possibly masked) K-tuple index.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexTuple(pub Vec<usize>);

impl IndexTuple {
    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    /// Hadamard product with `e`.
    pub fn masked(&self, e: &EVector) -> IndexTuple {
        IndexTuple(
            self.0
                .iter()
                .enumerate()
                .map(|(j, &c)| if e.contains(j) { c } else { 0 })
                .collect(),
        )
    }

    /// Whether this tuple is an element of `I_{N,e}`.
    pub fn is_consistent(&self, shape: &Shape, e: &EVector) -> bool {
        self.0.len() == e.dim()
            && self.0.iter().enumerate().all(|(j, &c)| {
                if e.contains(j) {
                    (1..=shape.dims()[j]).contains(&c)
                } else {
                    c == 0
                }
            })
    }
}

impl fmt::Display for IndexTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl fmt::Debug for IndexTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Mixed-radix bijection between `I_{N,e}` and `0..|I_{N,e}|`, matching the
/// lexicographic order of [`index_set`].
#[derive(Clone, Debug)]
pub struct MaskedIndexer {
    dim: usize,
    active: Vec<usize>,
    radices: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl MaskedIndexer {
    pub fn new(shape: &Shape, e: &EVector) -> Self {
        let active = e.support();
        let radices: Vec<usize> = active.iter().map(|&j| shape.dims()[j]).collect();
        let mut strides = vec![1usize; active.len()];
        for a in (0..active.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * radices[a + 1];
        }
        let len = radices.iter().product();
        MaskedIndexer { dim: shape.dim(), active, radices, strides, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Linear position of an arbitrary (unmasked or masked) tuple after
    /// masking. Coordinates outside `supp(e)` are ignored.
    pub fn linear(&self, coords: &[usize]) -> usize {
        self.active
            .iter()
            .zip(&self.strides)
            .map(|(&j, &s)| (coords[j] - 1) * s)
            .sum()
    }

    pub fn tuple(&self, mut linear: usize) -> IndexTuple {
        let mut coords = vec![0usize; self.dim];
        for a in 0..self.active.len() {
            let digit = linear / self.strides[a];
            linear %= self.strides[a];
            coords[self.active[a]] = digit + 1;
        }
        IndexTuple(coords)
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }
}

/// `I_{N,e}` in lexicographic order together with its cardinality.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSet {
    pub tuples: Vec<IndexTuple>,
    pub cardinality: usize,
}

pub fn index_set(shape: &Shape, e: &EVector) -> Result<IndexSet> {
    shape.check_dim(e)?;
    if e.is_zero() {
        return Err(invalid("zero direction has no index set"));
    }
    let ix = MaskedIndexer::new(shape, e);
    let tuples: Vec<IndexTuple> = (0..ix.len()).map(|l| ix.tuple(l)).collect();
    Ok(IndexSet { cardinality: tuples.len(), tuples })
}

/// Partition of `I_{N,e}` into transversal groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversalPartition {
    pub group_size: usize,
    pub groups: Vec<Vec<IndexTuple>>,
}

impl TransversalPartition {
    pub fn to_json(&self, shape: &Shape, e: &EVector) -> serde_json::Value {
        json!({
            "shape": shape.dims(),
            "e": e.bits(),
            "group_size": self.group_size,
            "groups": self.groups,
        })
    }
}

/// Cyclic-shift construction of transversal groups.
///
/// Active coordinates are sorted by non-increasing `N_j` (stable, so ties keep
/// coordinate order); the last one is the identity coordinate `t`, with
/// `t ∈ [m]`, `m = min_{j ∈ supp(e)} N_j`. A group is labelled by the
/// remaining active coordinates `g_j ∈ [N_j]` and contains the tuples with
/// coordinate `j` equal to `((t + g_j − 2) mod N_j) + 1`.
pub fn transversal_partition(shape: &Shape, e: &EVector) -> Result<TransversalPartition> {
    shape.check_dim(e)?;
    if e.is_zero() {
        return Err(invalid("zero direction has no index set"));
    }
    let dims = shape.dims();
    let mut order = e.support();
    order.sort_by(|&a, &b| dims[b].cmp(&dims[a]));
    let (&ident, labels) = order.split_last().unwrap();
    let m = dims[ident];

    let label_dims: Vec<usize> = labels.iter().map(|&j| dims[j]).collect();
    let group_count: usize = label_dims.iter().product();
    let mut groups = Vec::with_capacity(group_count);
    let mut g = vec![1usize; labels.len()];
    for _ in 0..group_count {
        let mut group = Vec::with_capacity(m);
        for t in 1..=m {
            let mut coords = vec![0usize; shape.dim()];
            coords[ident] = t;
            for (a, &j) in labels.iter().enumerate() {
                coords[j] = ((t + g[a] - 2) % dims[j]) + 1;
            }
            group.push(IndexTuple(coords));
        }
        groups.push(group);
        // advance the label odometer, last label fastest
        for a in (0..g.len()).rev() {
            if g[a] < label_dims[a] {
                g[a] += 1;
                break;
            }
            g[a] = 1;
        }
    }
    Ok(TransversalPartition { group_size: m, groups })
}

/// Outcome of [`verify_partition`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionReport {
    pub exact_cover: bool,
    pub disjoint: bool,
    pub transversal: bool,
    pub counterexample: Option<String>,
}

impl PartitionReport {
    pub fn passed(&self) -> bool {
        self.exact_cover && self.disjoint && self.transversal
    }
}

/// Checks cover, disjointness and transversality on `supp(e)`. Failures are
/// reported, never raised; the first counterexample found is kept.
pub fn verify_partition(shape: &Shape, e: &EVector, p: &TransversalPartition) -> PartitionReport {
    let mut report =
        PartitionReport { exact_cover: true, disjoint: true, transversal: true, counterexample: None };
    let note = |report: &mut PartitionReport, msg: String| {
        if report.counterexample.is_none() {
            report.counterexample = Some(msg);
        }
    };
    if shape.check_dim(e).is_err() || e.is_zero() {
        report.exact_cover = false;
        note(&mut report, format!("direction {e} is not valid for shape {shape}"));
        return report;
    }

    let ix = MaskedIndexer::new(shape, e);
    let mut seen = vec![false; ix.len()];
    for group in &p.groups {
        for t in group {
            if !t.is_consistent(shape, e) {
                report.exact_cover = false;
                note(&mut report, format!("tuple {t} is not in I_(N,e)"));
                continue;
            }
            let l = ix.linear(t.coords());
            if seen[l] {
                report.disjoint = false;
                note(&mut report, format!("tuple {t} appears more than once"));
            }
            seen[l] = true;
        }
    }
    if let Some(l) = seen.iter().position(|&s| !s) {
        report.exact_cover = false;
        note(&mut report, format!("tuple {} is not covered", ix.tuple(l)));
    }

    for (gi, group) in p.groups.iter().enumerate() {
        for j in e.support() {
            let mut values: Vec<usize> = group.iter().filter_map(|t| t.0.get(j).copied()).collect();
            values.sort_unstable();
            if let Some(w) = values.windows(2).find(|w| w[0] == w[1]) {
                report.transversal = false;
                note(
                    &mut report,
                    format!("group {gi} repeats value {} in coordinate {}", w[0], j + 1),
                );
            }
        }
    }
    report
}
