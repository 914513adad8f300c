//! Browser bindings for the static demo page. Every export returns a JSON string; failures
//! come back as `{"error": "..."}`.

use convex_hazard::solver::{directional_derivative, Probe};
use convex_hazard::{compute_envelope, fit, HsDistribution, PathGrid, SolverConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value, convex_hazard::Error>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Fits an HS(A, b) sample of size `n` and returns the estimate next to the true hazard.
#[wasm_bindgen]
pub fn fit_hs(a: f64, b: f64, n: usize, seed: u64) -> String {
    respond((|| {
        let truth = HsDistribution::new(a, b)?;
        let sample = truth.sample(n, seed)?;
        let result = fit(&sample, &SolverConfig::default())?;
        let h = &result.hazard;
        let ts = grid(0.0, sample.max(), 300);
        let estimate: Vec<f64> = ts.iter().map(|&t| h.eval(t).unwrap_or(f64::NAN)).collect();
        let true_hazard: Vec<Option<f64>> = ts
            .iter()
            .map(|&t| truth.hazard(t).ok().filter(|v| v.is_finite()))
            .collect();
        let estimate: Vec<Option<f64>> = estimate
            .into_iter()
            .map(|v| v.is_finite().then_some(v))
            .collect();
        Ok(json!({
            "t": ts,
            "estimate": estimate,
            "truth": true_hazard,
            "knots": h.breakpoints(),
            "observations": sample.values(),
            "criterion": result.criterion,
            "iterations": result.iterations,
            "certified": result.report.passed,
            "worst_residual": result.report.worst(),
        }))
    })())
}

/// Directional derivatives of the criterion at the fit along `(x − t)₊` and `(t − x)₊`.
///
/// Both curves are nonnegative at an optimum and touch zero at the knots.
#[wasm_bindgen]
pub fn slack_curves(a: f64, b: f64, n: usize, seed: u64) -> String {
    respond((|| {
        let sample = HsDistribution::new(a, b)?.sample(n, seed)?;
        let result = fit(&sample, &SolverConfig::default())?;
        let h = &result.hazard;
        let ts = grid(0.0, sample.max(), 300);
        let falling = ts
            .iter()
            .map(|&t| directional_derivative(h, &sample, Probe::Falling(t)))
            .collect::<Result<Vec<f64>, _>>()?;
        let rising = ts
            .iter()
            .map(|&t| directional_derivative(h, &sample, Probe::Rising(t)))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(json!({
            "t": ts,
            "falling": falling,
            "rising": rising,
            "falling_knots": h.dec_knots().iter().map(|k| k.location).collect::<Vec<_>>(),
            "rising_knots": h.inc_knots().iter().map(|k| k.location).collect::<Vec<_>>(),
        }))
    })())
}

/// Simulates one path `Y(t) = ∫₀ᵗW + t⁴` on `[−c, c]` and returns its envelope.
#[wasm_bindgen]
pub fn envelope_path(half_width: f64, step: f64, seed: u64) -> String {
    respond((|| {
        let path = PathGrid::simulate(half_width, step, seed)?;
        let fit = compute_envelope(&path, 1e-12)?;
        let stride = (fit.times.len() / 600).max(1);
        let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<f64>>();
        Ok(json!({
            "t": pick(&fit.times),
            "path": pick(&fit.y),
            "envelope": pick(&fit.values),
            "second": pick(&fit.second),
            "second_at_zero": fit.second_at_zero(),
            "third_at_zero": fit.third_at_zero(),
            "knots": fit.active_knots.len(),
        }))
    })())
}
