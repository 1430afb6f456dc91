//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a flat `Float64Array` of fixed-width records so the
//! page needs no JSON parsing. Errors become JavaScript exceptions.

use blirp::derivative::consistency_report;
use blirp::ensemble::McPlan;
use blirp::interpolator::{psi_trace, Anchor, ConfigurationSets};
use blirp::perceptron::{
    bp_ground_state, build_binary_sets, build_sphere_samples, local_entropy_curve as curve, BinaryInstance,
    ReferencePolicy, SubsetSpec,
};
use blirp::schedule::{LiftingSchedule, ValidSchedule};
use wasm_bindgen::prelude::*;

/// Largest hypercube dimension the page may enumerate.
const MAX_BROWSER_N: usize = 14;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// `set_size` corners of `{±1/2}^4` against unit vectors in `ℝ^4`.
fn demo_sets(set_size: usize, seed: u64) -> Result<ConfigurationSets, JsError> {
    let (_, x) = build_binary_sets(4, &SubsetSpec::Random { count: set_size, seed }).map_err(js)?;
    let y = build_sphere_samples(4, set_size, false, seed ^ (1 << 63)).map_err(js)?;
    ConfigurationSets::with_anchors_equal(x, y, Anchor::Zero).map_err(js)
}

/// Level-one schedule with `p = q = [1, a, 0]`.
fn demo_schedule(beta: f64, m1: f64, a: f64) -> Result<ValidSchedule, JsError> {
    LiftingSchedule::new(vec![1.0, m1, 0.0], vec![1.0, a, 0.0], vec![1.0, a, 0.0], beta, -1.0)
        .validate()
        .map_err(js)
}

/// ψ(t) on `points` evenly spaced values of `t ∈ [0, 1]`, as `(t, psi, se)`
/// triples.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn psi_curve(
    beta: f64,
    m1: f64,
    a: f64,
    set_size: usize,
    outer: usize,
    inner: usize,
    seed: u32,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    if points < 2 {
        return Err(JsError::new("need at least two points"));
    }
    let sets = demo_sets(set_size, seed as u64)?;
    let schedule = demo_schedule(beta, m1, a)?;
    let grid: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let trace = psi_trace(&sets, &schedule, &grid, &McPlan::new(outer, vec![inner], seed as u64)).map_err(js)?;
    Ok(trace.iter().flat_map(|e| [e.t, e.value, e.std_error]).collect())
}

/// Closed form against central differences at `t = 0.25, 0.5, 0.75`, as
/// `(t, closed, se_closed, fd, se_fd, z)` records.
#[wasm_bindgen]
pub fn derivative_check(
    beta: f64,
    m1: f64,
    a: f64,
    set_size: usize,
    outer: usize,
    inner: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let sets = demo_sets(set_size, seed as u64)?;
    let schedule = demo_schedule(beta, m1, a)?;
    let plan = McPlan::new(outer, vec![inner], seed as u64);
    let rows = consistency_report(&sets, &schedule, &[0.25, 0.5, 0.75], 1e-3, &plan).map_err(js)?;
    Ok(rows
        .iter()
        .flat_map(|r| [r.t, r.closed, r.se_closed, r.fd, r.se_fd, r.z])
        .collect())
}

/// Densest solution counts of a random binary perceptron, as
/// `(d, overlap, count, sigma)` records; `sigma` is NaN when empty.
#[wasm_bindgen]
pub fn local_entropy_curve(n: usize, m: usize, seed: u32, solutions_only: bool) -> Result<Vec<f64>, JsError> {
    if n > MAX_BROWSER_N {
        return Err(JsError::new(&format!("n is capped at {MAX_BROWSER_N} in the browser")));
    }
    let census = bp_ground_state(&BinaryInstance::generate(n, m, seed as u64).map_err(js)?).map_err(js)?;
    let policy = if solutions_only {
        ReferencePolicy::SolutionsOnly
    } else {
        ReferencePolicy::AllCorners
    };
    Ok(curve(&census, policy)
        .map_err(js)?
        .iter()
        .flat_map(|p| [p.d as f64, p.overlap, p.cluster_count as f64, p.sigma.unwrap_or(f64::NAN)])
        .collect())
}
