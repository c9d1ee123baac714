//! JSON-in, JSON-out bindings for the static demo page in `www/`.
//!
//! Each export wraps a plain function so the logic is testable natively.

use carebi::cfa::omega_from_loadings;
use carebi::efa::{parallel_analysis, PaCriterion};
use carebi::linalg::Matrix;
use carebi::polycorr::{kmo, polychoric_matrix};
use carebi::scoring::{kmeans_thresholds, rescale_minmax};
use carebi::simulate::{carebi_fixture, simulate_bifactor, CAREBI_GROUPS};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn parse<'a, T: Deserialize<'a>>(s: &'a str) -> Res<T> {
    serde_json::from_str(s).map_err(|e| format!("bad input: {e}"))
}

fn emit<T: Serialize>(v: &T) -> Res<String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
pub struct OmegaInput {
    /// General loading of each group's first item.
    pub anchor_general: f64,
    pub anchor_group: f64,
    /// General and group loadings of the other two items per group.
    pub other_general: f64,
    pub other_group: f64,
    /// Loading of item 6 on the last group, as in the bundled fixture.
    #[serde(default)]
    pub cross: f64,
}

/// Omega coefficients for an 18-item, six-group bifactor layout.
pub fn omega_explorer_json(input: &str) -> Res<String> {
    let o: OmegaInput = parse(input)?;
    for (a, b, c) in [(o.anchor_general, o.anchor_group, 0.0), (o.other_general, o.other_group, o.cross)] {
        if a * a + b * b + c * c >= 1.0 {
            return Err(format!("loadings ({a}, {b}, {c}) leave no unique variance"));
        }
    }
    let groups = CAREBI_GROUPS.len();
    let p = 3 * groups;
    let group_of: Vec<Option<usize>> = (0..p).map(|i| Some(i / 3)).collect();
    let general: Vec<f64> = (0..p).map(|i| if i % 3 == 0 { o.anchor_general } else { o.other_general }).collect();
    let mut g = Matrix::from_fn(p, groups, |i, k| match (i / 3 == k, i % 3 == 0) {
        (true, true) => o.anchor_group,
        (true, false) => o.other_group,
        _ => 0.0,
    });
    g[(5, groups - 1)] = o.cross;
    let names: Vec<String> = CAREBI_GROUPS.iter().map(|s| s.to_string()).collect();
    emit(&omega_from_loadings(&general, &g, &group_of, &names))
}

#[derive(Deserialize)]
pub struct ScreeInput {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
}

fn default_sims() -> usize {
    100
}

#[derive(Serialize)]
pub struct ScreeOutput {
    pub kmo: f64,
    pub observed: Vec<f64>,
    pub reference: Vec<f64>,
    pub suggested: usize,
}

/// Simulate the 18-item fixture and run parallel analysis on it.
pub fn simulate_scree_json(input: &str) -> Res<String> {
    let s: ScreeInput = parse(input)?;
    if !(100..=20_000).contains(&s.n) {
        return Err("n must lie in 100..=20000".into());
    }
    let sim = simulate_bifactor(&carebi_fixture(), s.n, s.seed);
    let pm = polychoric_matrix(&sim.responses).map_err(|e| e.to_string())?;
    let k = kmo(&pm.rho).map_err(|e| e.to_string())?;
    let pa = parallel_analysis(&sim.responses, s.n_sims, s.seed, PaCriterion::Mean).map_err(|e| e.to_string())?;
    emit(&ScreeOutput { kmo: k.overall, observed: pa.observed_eigenvalues, reference: pa.reference_eigenvalues, suggested: pa.suggested_factors })
}

#[derive(Deserialize)]
pub struct CategorizeInput {
    pub values: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    3
}

#[derive(Serialize)]
pub struct CategorizeOutput {
    pub index: Vec<u8>,
    pub centers: Vec<f64>,
    pub boundaries: Vec<i64>,
    pub counts: Vec<usize>,
}

/// Rescale raw scores to 0-100 and cut them with 1-D k-means.
pub fn categorize_json(input: &str) -> Res<String> {
    let c: CategorizeInput = parse(input)?;
    let (index, _) = rescale_minmax(&c.values).map_err(|e| e.to_string())?;
    let t = kmeans_thresholds(&index, c.k).map_err(|e| e.to_string())?;
    let mut counts = vec![0; t.boundaries.len() + 1];
    for &v in &index {
        counts[t.boundaries.iter().filter(|&&b| i64::from(v) > b).count()] += 1;
    }
    emit(&CategorizeOutput { index, centers: t.centers, boundaries: t.boundaries, counts })
}

#[wasm_bindgen]
pub fn omega_explorer(input: &str) -> Result<String, JsValue> {
    omega_explorer_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate_scree(input: &str) -> Result<String, JsValue> {
    simulate_scree_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn categorize(input: &str) -> Result<String, JsValue> {
    categorize_json(input).map_err(|e| JsValue::from_str(&e))
}
