//! Empirical Orlicz norms `‖ξ‖_{ψ_β}` with `ψ_β(x) = exp(x^β) − 1`.

use serde::Serialize;

use crate::error::{invalid, Result};

fn mean_psi(abs: &[f64], beta: f64, c: f64) -> f64 {
    abs.iter().map(|&a| ((a / c).powf(beta)).exp_m1()).sum::<f64>() / abs.len() as f64
}

/// `inf{C > 0 : mean ψ_β(|ξ_i|/C) ≤ 1}` by bisection to relative
/// tolerance 1e-10. All-zero samples give 0.
pub fn orlicz_norm(samples: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid(format!("beta = {beta} must be positive")));
    }
    if samples.is_empty() {
        return Err(invalid("Orlicz norm of an empty sample"));
    }
    let abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    if !max.is_finite() {
        return Err(invalid("Orlicz norm of a non-finite sample"));
    }
    let n = abs.len() as f64;
    // At C = max/(log 2)^{1/β} every term is at most 1; at max/(log(1+n))^{1/β}
    // the largest term alone contributes n/n.
    let mut hi = max / std::f64::consts::LN_2.powf(1.0 / beta);
    let mut lo = max / (1.0 + n).ln().powf(1.0 / beta);
    if mean_psi(&abs, beta, lo) <= 1.0 {
        return Ok(lo);
    }
    while (hi - lo) > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if mean_psi(&abs, beta, mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrliczBoundReport {
    pub beta: f64,
    pub q: f64,
    pub m: u32,
    /// `(mean |ξ|^q)^{1/q}`.
    pub lq_norm: f64,
    pub orlicz_norm: f64,
    /// `(m!)^{1/(mβ)}·‖ξ‖_{ψ_β}`.
    pub bound: f64,
    pub pass: bool,
}

/// Compares the empirical `L^q` norm with `(m!)^{1/(mβ)}‖ξ‖_{ψ_β}`, `m` the
/// smallest integer with `mβ ≥ q`.
pub fn check_orlicz_bound(samples: &[f64], beta: f64, q: f64) -> Result<OrliczBoundReport> {
    if !(q >= 1.0) {
        return Err(invalid(format!("q = {q} must be at least 1")));
    }
    let norm = orlicz_norm(samples, beta)?;
    let m = ((q / beta) - 1e-12).ceil().max(1.0) as u32;
    let log_fact: f64 = (1..=m).map(|i| (i as f64).ln()).sum();
    let bound = (log_fact / (m as f64 * beta)).exp() * norm;
    let lq = (samples.iter().map(|x| x.abs().powf(q)).sum::<f64>() / samples.len() as f64).powf(1.0 / q);
    Ok(OrliczBoundReport { beta, q, m, lq_norm: lq, orlicz_norm: norm, bound, pass: lq <= bound * (1.0 + 1e-12) })
}
