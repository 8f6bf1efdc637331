//! Runs one configured check and assembles its [`BoundReport`].

use std::borrow::Cow;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::entropy::EntropyProfile;
use crate::error::{Error, Result};
use crate::function_class::{theta_grid, ClassSpec, FunctionClass, VcCharacteristics};
use crate::harness::config::{CheckType, EntropyMethod, ExperimentConfig};
use crate::harness::fit::{differences_vc, fit_projected_vc, measured_projections, projected_sample, ProjectedSample};
use crate::harness::lemmas::run_lemmas;
use crate::harness::report::{summarize, BoundReport, BoundRow};
use crate::harness::rhs::{envelope_norm, global_rhs, iid_rhs, local_rhs, vc_rhs, EntropyRoute};
use crate::lattice::{EVector, Shape};
use crate::model::SeModel;
use crate::rng::replication_seed;
use crate::sampler::sample_array;
use crate::supremum::{
    component_moments, empirical_process_sup, projected_norms, stats_from_norms, MomentEstimate,
};

/// Every `⌈len/cap⌉`-th member; covers of the full class are out of reach
/// beyond a few thousand members.
fn entropy_skeleton(class: &FunctionClass, cap: usize) -> Cow<'_, FunctionClass> {
    if class.len() <= cap {
        return Cow::Borrowed(class);
    }
    let mut c = class.clone();
    c.members = class.members.iter().step_by(class.len().div_ceil(cap)).cloned().collect();
    Cow::Owned(c)
}

fn projected(model: &dyn SeModel, class: &FunctionClass, e: EVector, cfg: &ExperimentConfig, seed: u64) -> Result<ProjectedSample> {
    let skeleton = entropy_skeleton(class, cfg.fit.max_members);
    projected_sample(model, &skeleton, e, cfg.fit.draws, seed, cfg.inner_draws)
}

/// The half-interval family underlying a localized-differences spec.
fn localized_base(model: &dyn SeModel, spec: &ClassSpec) -> Result<Option<FunctionClass>> {
    Ok(match spec {
        ClassSpec::LocalizedDifferences { grid, range, .. } => {
            Some(FunctionClass::half_interval(model, &theta_grid(model, *grid, *range)?))
        }
        _ => None,
    })
}

/// `(A, v)` for `P_e F`: registered on the class, or fitted. Differences of
/// a half-interval family take the doubled characteristics of the family.
fn vc_for(model: &dyn SeModel, class: &FunctionClass, e: EVector, cfg: &ExperimentConfig, seed: u64) -> Result<VcCharacteristics> {
    if let Some(vc) = class.vc {
        return Ok(vc);
    }
    if let Some(base) = localized_base(model, &cfg.class)? {
        return differences_vc(fit_projected_vc(&projected(model, &base, e, cfg, seed)?, model.dim(), cfg.fit.measures)?);
    }
    fit_projected_vc(&projected(model, class, e, cfg, seed)?, model.dim(), cfg.fit.measures)
}

/// `J_e` at `deltas` (which must include every value later asked for), with
/// a JSON record of how it was obtained.
fn route_for(
    model: &dyn SeModel,
    class: &FunctionClass,
    e: EVector,
    cfg: &ExperimentConfig,
    seed: u64,
    deltas: &[f64],
) -> Result<(EntropyRoute, Value)> {
    let k = e.layer();
    match cfg.entropy {
        EntropyMethod::Vc => {
            let vc = vc_for(model, class, e, cfg, seed)?;
            Ok((EntropyRoute::Vc(vc), json!({"method": "vc-analytic", "a": vc.a, "v": vc.v})))
        }
        EntropyMethod::Empirical => {
            let sample = projected(model, class, e, cfg, seed)?;
            let mut measured = measured_projections(&sample, cfg.fit.measures)?;
            let mut grid = deltas.to_vec();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let profile = EntropyProfile::empirical(&mut measured, k, &grid)?;
            let record = json!({
                "method": "empirical",
                "members": sample.members.len(),
                "deltas": profile.deltas,
                "values": profile.values,
            });
            Ok((EntropyRoute::Profile(profile), record))
        }
    }
}

/// `J_e` on `grid` for every configured direction, by the configured route.
pub fn entropy_profiles(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<(EVector, EntropyProfile, Value)>> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let model = cfg.model.build(cfg.dim())?;
    let class = cfg.class.build(model.as_ref())?;
    cfg.directions()?
        .into_iter()
        .map(|e| {
            let (route, rec) = route_for(model.as_ref(), &class, e, cfg, seed, grid)?;
            let profile = match route {
                EntropyRoute::Vc(vc) => EntropyProfile::vc(vc, e.layer(), grid)?,
                EntropyRoute::Profile(p) => p,
            };
            Ok((e, profile, rec))
        })
        .collect()
}

fn total_order(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the configured check. Configuration problems surface as
/// [`Error::Config`]; a failed check is a report with `pass = false`.
pub fn run_check(cfg: &ExperimentConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let check = cfg.check_type()?;
    let seed = cfg.seed()?;
    let model = cfg.model.build(cfg.dim())?;
    let model = model.as_ref();

    if check == CheckType::Lemmas {
        let lemmas = run_lemmas(seed, &cfg.lemmas, cfg.inner_draws)?;
        return Ok(BoundReport {
            check,
            seed,
            model: model.description(),
            class: String::new(),
            rows: Vec::new(),
            groups: Vec::new(),
            fitted_constant: None,
            stability: None,
            stability_threshold: cfg.thresholds.stability,
            details: Value::Null,
            pass: lemmas.pass,
            lemmas: Some(lemmas),
        });
    }

    let dirs = cfg.directions()?;
    let mut details = Map::new();
    let (class_name, rows, monotone_z) = match check {
        CheckType::Global => {
            let class = cfg.class.build(model)?;
            let mut rows = Vec::new();
            for &e in &dirs {
                let (route, rec) = route_for(model, &class, e, cfg, seed, &[1.0])?;
                details.insert(e.to_string(), rec);
                let moments = shape_moments(model, &class, cfg, e, seed)?;
                for (qi, &q) in cfg.q.iter().enumerate() {
                    let norm = envelope_norm(model, &class.envelope, q.max(2.0));
                    let rhs = global_rhs(&route, e.layer(), norm)?;
                    for (shape, m) in cfg.shapes.iter().zip(&moments) {
                        rows.push(BoundRow::new(shape, e, q, None, m[qi].value, m[qi].std_error, rhs.clone())?);
                    }
                }
            }
            (class.name, rows, None)
        }
        CheckType::Vc => {
            let class = cfg.class.build(model)?;
            let mut rows = Vec::new();
            for &e in &dirs {
                let vc = vc_for(model, &class, e, cfg, seed)?;
                details.insert(e.to_string(), json!({"method": "vc-analytic", "a": vc.a, "v": vc.v}));
                let moments = shape_moments(model, &class, cfg, e, seed)?;
                let stats: Vec<_> = cfg
                    .shapes
                    .iter()
                    .map(|s| {
                        let n = projected_norms(model, &class, s, e, cfg.replications, seed, cfg.inner_draws)?;
                        stats_from_norms(&n, None)
                    })
                    .collect::<Result<_>>()?;
                for (qi, &q) in cfg.q.iter().enumerate() {
                    for ((shape, m), st) in cfg.shapes.iter().zip(&moments).zip(&stats) {
                        let rhs = vc_rhs(st, vc, e.layer(), model.dim(), shape.max_dim())?;
                        rows.push(BoundRow::new(shape, e, q, None, m[qi].value, m[qi].std_error, rhs)?);
                    }
                }
            }
            (class.name, rows, None)
        }
        CheckType::Local if !cfg.local.deltas.is_empty() => {
            let (name, rows) = calibrated_local(model, cfg, &dirs, seed, &mut details)?;
            (name, rows, Some(cfg.thresholds.z))
        }
        CheckType::Local => {
            let class = cfg.class.build(model)?;
            let mut rows = Vec::new();
            for &e in &dirs {
                let moments = shape_moments(model, &class, cfg, e, seed)?;
                let mut cells = Vec::new();
                for shape in &cfg.shapes {
                    let n = projected_norms(model, &class, shape, e, cfg.replications, seed, cfg.inner_draws)?;
                    cells.push(stats_from_norms(&n, None)?);
                }
                let mut ds: Vec<f64> = cells.iter().map(|s| s.delta_e.min(1.0)).collect();
                ds.push(1.0);
                let (route, rec) = route_for(model, &class, e, cfg, seed, &ds)?;
                details.insert(e.to_string(), rec);
                for (qi, &q) in cfg.q.iter().enumerate() {
                    for ((shape, m), st) in cfg.shapes.iter().zip(&moments).zip(&cells) {
                        let rhs = local_rhs(st, &route, e.layer())?;
                        rows.push(BoundRow::new(shape, e, q, None, m[qi].value, m[qi].std_error, rhs)?);
                    }
                }
            }
            (class.name, rows, None)
        }
        CheckType::Iid => {
            let class = cfg.class.build(model)?;
            let e = dirs[0];
            let mut rows = Vec::new();
            let mut cells = Vec::new();
            for shape in &cfg.shapes {
                let norms = projected_norms(model, &class, shape, e, cfg.replications, seed, cfg.inner_draws)?;
                let sigma = total_order(&norms.members).min(norms.envelope_l2);
                let sups: Vec<f64> = (0..cfg.replications)
                    .into_par_iter()
                    .map(|r| Ok(empirical_process_sup(&sample_array(model, shape, replication_seed(seed, r as u64))?, &class)))
                    .collect::<Result<_>>()?;
                cells.push((norms, sigma, sups));
            }
            let mut ds: Vec<f64> = cells.iter().map(|(n, s, _)| (s / n.envelope_l2).min(1.0)).collect();
            ds.push(1.0);
            let (route, rec) = route_for(model, &class, e, cfg, seed, &ds)?;
            details.insert(e.to_string(), rec);
            for &q in &cfg.q {
                for (shape, (norms, sigma, sups)) in cfg.shapes.iter().zip(&cells) {
                    let m = MomentEstimate::from_sups(sups, q, 1.0);
                    let rhs = iid_rhs(&route, shape.dims()[0], *sigma, norms.envelope_l2, norms.m_e_l2)?;
                    rows.push(BoundRow::new(shape, e, q, None, m.value, m.std_error, rhs)?);
                }
            }
            (class.name, rows, None)
        }
        CheckType::Lemmas => unreachable!("handled above"),
    };

    let groups = summarize(&rows, cfg.thresholds.stability, monotone_z);
    if groups.is_empty() {
        return Err(Error::Degenerate("the check produced no rows".into()));
    }
    let fitted = groups.iter().map(|g| g.fitted_constant).fold(f64::NEG_INFINITY, f64::max);
    let stability = groups.iter().map(|g| g.stability).fold(f64::NEG_INFINITY, f64::max);
    let pass = groups.iter().all(|g| g.pass);
    Ok(BoundReport {
        check,
        seed,
        model: model.description(),
        class: class_name,
        rows,
        groups,
        fitted_constant: Some(fitted),
        stability: Some(stability),
        stability_threshold: cfg.thresholds.stability,
        details: Value::Object(details),
        lemmas: None,
        pass,
    })
}

/// Moment estimates for every shape (outer) and every `q` (inner).
fn shape_moments(
    model: &dyn SeModel,
    class: &FunctionClass,
    cfg: &ExperimentConfig,
    e: EVector,
    seed: u64,
) -> Result<Vec<Vec<MomentEstimate>>> {
    cfg.shapes
        .iter()
        .map(|s| component_moments(model, class, s, e, &cfg.q, cfg.replications, seed, cfg.inner_draws))
        .collect()
}

/// Largest step count `s` with `max_{s' ≤ s} σ(s') ≤ target`, `σ(s)` the
/// largest `‖P_e(f_{a+s} − f_a)‖` over the calibration sample.
pub fn calibrate_steps(sample: &ProjectedSample, target: f64) -> usize {
    let m = sample.members.len();
    let nd = sample.draws() as f64;
    let sigma: Vec<f64> = (1..m)
        .into_par_iter()
        .map(|s| {
            (0..m - s)
                .map(|a| {
                    let sq: f64 = sample.members[a + s]
                        .iter()
                        .zip(&sample.members[a])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    (sq / nd).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let mut running = 0.0f64;
    let mut best = 0;
    for (i, &s) in sigma.iter().enumerate() {
        running = running.max(s);
        if running > target {
            break;
        }
        best = i + 1;
    }
    best
}

/// One row per target `δ`: the radius is the widest that keeps every
/// difference's projected norm below `δ‖P_e F‖`, and `σ_e` is then set to
/// `δ‖P_e F‖`.
fn calibrated_local(
    model: &dyn SeModel,
    cfg: &ExperimentConfig,
    dirs: &[EVector],
    seed: u64,
    details: &mut Map<String, Value>,
) -> Result<(String, Vec<BoundRow>)> {
    let ClassSpec::LocalizedDifferences { grid, range, radius } = &cfg.class else {
        return Err(crate::error::config("calibrated local checks need a localized_differences class"));
    };
    let thetas = theta_grid(model, *grid, *range)?;
    if thetas.len() < 2 {
        return Err(crate::error::config("localized differences need at least two grid points"));
    }
    let h = thetas[1] - thetas[0];
    let base = FunctionClass::half_interval(model, &thetas);
    let shape: &Shape = &cfg.shapes[0];
    let mut rows = Vec::new();
    let mut name = String::new();
    for &e in dirs {
        let calib = projected_sample(model, &base, e, cfg.local.calibration_draws, seed, cfg.inner_draws)?;
        let env = (calib.envelope.iter().map(|x| x * x).sum::<f64>() / calib.draws() as f64).sqrt();
        let mut targets = Vec::new();
        let mut cells = Vec::new();
        for &delta in &cfg.local.deltas {
            let steps = calibrate_steps(&calib, delta * env).min((radius / h + 1e-9).floor() as usize);
            if steps == 0 {
                return Err(Error::Degenerate(format!(
                    "no grid width reaches sigma/‖P_e F‖ <= {delta}; refine the grid"
                )));
            }
            let class = FunctionClass::localized_differences(&base, steps as f64 * h * (1.0 + 1e-9))?;
            let norms = projected_norms(model, &class, shape, e, cfg.replications, seed, cfg.inner_draws)?;
            let stats = stats_from_norms(&norms, Some(delta * norms.envelope_l2))?;
            let moments = component_moments(model, &class, shape, e, &cfg.q, cfg.replications, seed, cfg.inner_draws)?;
            let (route, rec) = route_for(model, &class, e, cfg, seed, &[stats.delta_e.min(1.0), 1.0])?;
            targets.push(json!({
                "delta": delta,
                "radius": steps as f64 * h,
                "members": class.len(),
                "sigma_estimate": stats.sigma_estimate,
                "sigma_e": stats.sigma_e,
                "envelope_l2": stats.envelope_l2,
                "m_e_l2": stats.m_e_l2,
                "entropy": rec,
            }));
            name = class.name.clone();
            cells.push((delta, stats, moments, route));
        }
        details.insert(e.to_string(), Value::Array(targets));
        for (qi, &q) in cfg.q.iter().enumerate() {
            for (delta, stats, moments, route) in &cells {
                let rhs = local_rhs(stats, route, e.layer())?;
                rows.push(BoundRow::new(shape, e, q, Some(*delta), moments[qi].value, moments[qi].std_error, rhs)?);
            }
        }
    }
    Ok((name, rows))
}
