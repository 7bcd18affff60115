//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes and returns JSON strings. The plain Rust
//! functions in [`ops`] do the work so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod ops;

fn js(result: Result<String, String>) -> Result<String, JsValue> {
    result.map_err(|e| JsValue::from_str(&e))
}

/// `{"boxes": [[x1, y1, x2, y2], ...], "probs": [...]}` to weights and `H_w`.
#[wasm_bindgen]
pub fn weighted_entropy(input: &str) -> Result<String, JsValue> {
    js(ops::weighted_entropy_json(input))
}

/// `{"hw": <H_w>, "table": [{i, j, label, relation, p}, ...]}` to `H(Y,R)` and IG.
#[wasm_bindgen]
pub fn information_gain(input: &str) -> Result<String, JsValue> {
    js(ops::information_gain_json(input))
}

/// Runs oracle agents over a synthetic dataset; see [`ops::SimulationParams`].
#[wasm_bindgen]
pub fn simulate_correction(input: &str) -> Result<String, JsValue> {
    js(ops::simulate_json(input))
}
