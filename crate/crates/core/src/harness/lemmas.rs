//! Property suites: Orlicz moment bounds, entropy-integral properties,
//! degeneracy of the projections and the transversal partitions.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::{check_j_properties, EntropyProfile};
use crate::error::Result;
use crate::function_class::{FunctionClass, VcCharacteristics};
use crate::harness::config::LemmaSettings;
use crate::hoeffding::degeneracy_check;
use crate::lattice::{all_evectors, transversal_partition, verify_partition, EVector, Shape};
use crate::model::{AdditiveModel, FactorSet, InteractionModel, SeModel};
use crate::orlicz::check_orlicz_bound;
use crate::rng::{derive, tag, CounterStream};

const MAX_LISTED_FAILURES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub passed: usize,
    pub required: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_violation: Option<f64>,
    /// The first few failing cases.
    pub failures: Vec<String>,
    pub pass: bool,
}

impl SuiteResult {
    fn new(name: &str, outcomes: Vec<(String, bool)>, required: usize, worst: Option<f64>) -> Self {
        let cases = outcomes.len();
        let passed = outcomes.iter().filter(|o| o.1).count();
        let failures =
            outcomes.into_iter().filter(|o| !o.1).map(|o| o.0).take(MAX_LISTED_FAILURES).collect();
        SuiteResult { name: name.into(), cases, passed, required, worst_violation: worst, failures, pass: passed >= required }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub suites: Vec<SuiteResult>,
    pub pass: bool,
}

pub const ORLICZ_CASES: [(f64, f64); 3] = [(1.0, 3.0), (2.0, 2.0), (2.0, 4.0)];

/// Exponential(1), standard normal and uniform(−1, 1) samples.
pub fn orlicz_samples(seed: u64, draws: usize) -> Vec<(&'static str, Vec<f64>)> {
    let rng = |d: u64| ChaCha8Rng::seed_from_u64(derive(seed, tag::STATS, &[d]));
    let mut r0 = rng(0);
    let mut r1 = rng(1);
    let mut r2 = rng(2);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    vec![
        ("exponential", (0..draws).map(|_| Exp1.sample(&mut r0)).collect()),
        ("normal", (0..draws).map(|_| StandardNormal.sample(&mut r1)).collect()),
        ("bounded", (0..draws).map(|_| unif.sample(&mut r2)).collect()),
    ]
}

pub fn orlicz_suite(seed: u64, draws: usize) -> Result<SuiteResult> {
    let mut outcomes = Vec::new();
    for (name, xs) in orlicz_samples(seed, draws) {
        for &(beta, q) in &ORLICZ_CASES {
            let r = check_orlicz_bound(&xs, beta, q)?;
            outcomes.push((format!("{name} beta={beta} q={q}: {} vs {}", r.lq_norm, r.bound), r.pass));
        }
    }
    let n = outcomes.len();
    Ok(SuiteResult::new("orlicz_bound", outcomes, n, None))
}

pub const J_CASES: [(f64, f64, usize); 3] = [(std::f64::consts::E, 1.0, 1), (std::f64::consts::E, 2.0, 2), (10.0, 1.5, 3)];

pub fn j_properties_suite() -> Result<SuiteResult> {
    let grid = EntropyProfile::uniform_grid(20);
    let mut outcomes = Vec::new();
    let mut worst = 0.0f64;
    for &(a, v, k) in &J_CASES {
        let profile = EntropyProfile::vc(VcCharacteristics::new(a, v)?, k, &grid)?;
        let r = check_j_properties(&profile)?;
        worst = worst.max(r.worst_violation());
        outcomes.push((format!("A={a} v={v} k={k}: worst violation {}", r.worst_violation()), r.passed()));
    }
    let n = outcomes.len();
    Ok(SuiteResult::new("j_properties", outcomes, n, Some(worst)))
}

/// One random `(model, f, e, ℓ)` draw of the degeneracy suite.
#[derive(Clone, Debug)]
pub struct DegeneracyCase {
    pub model: Arc<dyn SeModel>,
    pub class: FunctionClass,
    pub e: EVector,
    pub drop: usize,
    pub label: String,
}

/// Additive or interaction model with `K ∈ {2, 3}`, `f` the identity or an
/// indicator `1(x ≤ θ)` at a random draw `θ` of `X` (both centered), `e ≠ 0` and `ℓ ∈ supp(e)`, all
/// drawn from `seed`.
pub fn degeneracy_case(seed: u64, index: usize) -> Result<DegeneracyCase> {
    let mut s = CounterStream::new(derive(seed, tag::CONFIG, &[index as u64]));
    let k = 2 + s.below(2);
    let model: Arc<dyn SeModel> =
        if s.below(2) == 0 { Arc::new(AdditiveModel::new(k)?) } else { Arc::new(InteractionModel::new(k, 0.5)?) };
    let e = EVector::from_mask(1 + s.below((1 << k) - 1) as u32, k)?;
    let support = e.support();
    let drop = support[s.below(support.len())];
    let class = if s.below(2) == 0 {
        FunctionClass::identity(model.as_ref())
    } else {
        // θ is itself a draw of X, so P(X ≤ θ) is spread over (0, 1)
        let full = (1u32 << k) - 1;
        let mut fs = FactorSet::new(k, model.factor_dim(), full);
        for m in 1..=full {
            fs.get_mut(m).iter_mut().for_each(|v| *v = s.uniform());
        }
        FunctionClass::half_interval(model.as_ref(), &[model.tau(&fs)])
    };
    let label = format!("{} f={} e={e} drop={}", model.description(), class.members[0].label, drop + 1);
    Ok(DegeneracyCase { model, class, e, drop, label })
}

pub fn degeneracy_suite(seed: u64, settings: &LemmaSettings, inner_draws: usize) -> Result<SuiteResult> {
    let outcomes: Vec<(String, bool)> = (0..settings.degeneracy_configs)
        .into_par_iter()
        .map(|i| -> Result<(String, bool)> {
            let c = degeneracy_case(seed, i)?;
            let r = degeneracy_check(
                c.model.as_ref(),
                &c.class,
                0,
                c.e,
                c.drop,
                settings.degeneracy_replications,
                derive(seed, tag::REDRAW, &[i as u64]),
                inner_draws,
            )?;
            Ok((format!("{}: mean {} se {}", c.label, r.mean, r.std_error), r.pass))
        })
        .collect::<Result<_>>()?;
    Ok(SuiteResult::new("degeneracy", outcomes, settings.degeneracy_min_pass, None))
}

/// Every shape with `K ≤ max_dim`, `N_k ≤ max_n`, and every nonzero `e`.
pub fn partition_suite(max_dim: usize, max_n: usize) -> Result<SuiteResult> {
    let mut shapes = Vec::new();
    for k in 1..=max_dim {
        let total = max_n.pow(k as u32);
        for code in 0..total {
            let mut c = code;
            let dims: Vec<usize> = (0..k)
                .map(|_| {
                    let d = c % max_n + 1;
                    c /= max_n;
                    d
                })
                .collect();
            shapes.push(Shape::new(dims)?);
        }
    }
    let outcomes: Vec<(String, bool)> = shapes
        .par_iter()
        .map(|shape| -> Result<Vec<(String, bool)>> {
            all_evectors(shape.dim())?
                .into_iter()
                .map(|e| {
                    let p = transversal_partition(shape, &e)?;
                    let r = verify_partition(shape, &e, &p);
                    let why = r.counterexample.clone().unwrap_or_default();
                    Ok((format!("shape {shape} e={e}: {why}"), r.passed()))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let n = outcomes.len();
    Ok(SuiteResult::new("partition", outcomes, n, None))
}

pub fn run_lemmas(seed: u64, settings: &LemmaSettings, inner_draws: usize) -> Result<LemmaReport> {
    let suites = vec![
        orlicz_suite(seed, settings.orlicz_draws)?,
        j_properties_suite()?,
        degeneracy_suite(seed, settings, inner_draws)?,
        partition_suite(settings.partition_max_dim, settings.partition_max_n)?,
    ];
    let pass = suites.iter().all(|s| s.pass);
    Ok(LemmaReport { suites, pass })
}
