//! Browser bindings. Exports take and return JSON strings.

use mdr_core::envelope::{build_curve, convexify, default_grid};
use mdr_core::oracle::oracle_value;
use mdr_core::outer::{Instance, OuterOptions};
use mdr_core::spec::ProblemSpec;
use mdr_core::{kkt_residual, solve_inner, CostMatrix, Distribution, SolverOptions};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct CurveOut {
    pub rates: Vec<f64>,
    /// Searched value per rate, `null` where the search failed.
    pub values: Vec<Option<f64>>,
    pub envelope: Vec<f64>,
    pub max_rate: f64,
}

/// Searched curve and its convex envelope on `points` evenly spaced rates up
/// to `log2 |U|`.
pub fn curve(spec_json: &str, points: usize, starts: usize, seed: u64) -> Result<String, String> {
    let spec = ProblemSpec::parse(spec_json).map_err(|e| e.to_string())?;
    let inst = Instance::from_spec(&spec).map_err(|e| e.to_string())?;
    let max_rate = (inst.n_u() as f64).log2();
    let grid = default_grid(max_rate, points.clamp(2, 41));
    let opts = OuterOptions {
        starts: starts.clamp(1, 64),
        seed,
        ..OuterOptions::default()
    };
    let pts = build_curve(&inst, &grid, &opts).map_err(|e| e.to_string())?;
    let valid: Vec<(f64, f64)> = pts
        .iter()
        .filter_map(|p| p.value.map(|v| (p.rate, v)))
        .collect();
    let envelope = grid
        .iter()
        .map(|&r| convexify(&valid, r).map(|c| c.value))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let out = CurveOut {
        rates: grid,
        values: pts.iter().map(|p| p.value).collect(),
        envelope,
        max_rate,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct InnerIn {
    pub source: Vec<f64>,
    pub lambda: Vec<f64>,
    pub cost: Vec<Vec<f64>>,
    pub rate: f64,
}

#[derive(Debug, Serialize)]
pub struct InnerOut {
    /// `p(u|w)` indexed `[u][w]`.
    pub coupling: Vec<Vec<f64>>,
    pub value: f64,
    pub info: f64,
    pub multiplier: f64,
    pub kkt: f64,
}

/// Encoder best response to a fixed auxiliary law at one rate.
pub fn inner(input_json: &str) -> Result<String, String> {
    let input: InnerIn = serde_json::from_str(input_json).map_err(|e| e.to_string())?;
    let pu = Distribution::new(input.source).map_err(|e| e.to_string())?;
    let lambda = Distribution::new(input.lambda).map_err(|e| e.to_string())?;
    let ce = CostMatrix::from_rows(&input.cost).map_err(|e| e.to_string())?;
    let sol = solve_inner(&pu, &lambda, &ce, input.rate, &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let kkt = kkt_residual(&sol, &pu, &lambda, &ce, input.rate).max();
    let out = InnerOut {
        coupling: sol.p_star.table().to_vec(),
        value: sol.encoder_value,
        info: sol.info,
        multiplier: sol.nu3,
        kkt,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Exact block-coding game value for block length `n`.
pub fn oracle(spec_json: &str, n: usize, rate: f64) -> Result<String, String> {
    let spec = ProblemSpec::parse(spec_json).map_err(|e| e.to_string())?;
    let v = oracle_value(&spec, n, rate).map_err(|e| e.to_string())?;
    serde_json::to_string(&v).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = curve)]
pub fn curve_js(
    spec_json: &str,
    points: usize,
    starts: usize,
    seed: u64,
) -> Result<String, JsError> {
    curve(spec_json, points, starts, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = inner)]
pub fn inner_js(input_json: &str) -> Result<String, JsError> {
    inner(input_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oracle)]
pub fn oracle_js(spec_json: &str, n: usize, rate: f64) -> Result<String, JsError> {
    oracle(spec_json, n, rate).map_err(|e| JsError::new(&e))
}
