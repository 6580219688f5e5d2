//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes and returns plain numbers, vectors or JSON strings, so
//! the same functions run natively under `cargo test`.

use serde_json::json;
use tcnn::complexity::{count_model, AdditionConvention, Theta};
use tcnn::mixed::{compound_forward, MixMode, MixParams};
use tcnn::zoo::{build, count_parameters, list_variants, ModelConfig, VariantId};
use tcnn::{ConvSpec, Tensor};
use wasm_bindgen::prelude::*;

fn fail(e: impl ToString) -> String {
    e.to_string()
}

fn parse_shape(shape: &str) -> Result<Vec<usize>, String> {
    shape
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad extent {s:?} in input shape")))
        .collect()
}

/// Compound tropical filter of a grayscale image with a flat `size x size`
/// window: `alpha * erosion + beta * dilation`. Padding is masked, so the
/// border sees only real pixels. `pixels` is row-major, `width * height` long.
#[wasm_bindgen]
pub fn compound_filter(pixels: &[f32], width: usize, height: usize, size: usize, alpha: f32, beta: f32) -> Result<Vec<f32>, String> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(format!("window size must be odd, got {size}"));
    }
    if pixels.len() != width * height {
        return Err(format!("{} pixels do not fill {width}x{height}", pixels.len()));
    }
    let pad = size / 2;
    let spec = ConvSpec::new(1, 1, &[size, size]).with_padding(&[pad, pad]);
    let x = Tensor::from_vec(&[1, 1, height, width], pixels.to_vec()).map_err(fail)?;
    let w = Tensor::zeros(&spec.weight_shape()).map_err(fail)?;
    let mix = MixParams::two(
        Tensor::full(&[1, 1], alpha).map_err(fail)?,
        Tensor::full(&[1, 1], beta).map_err(fail)?,
    );
    let (y, _) = compound_forward(&x, &w, &mix, MixMode::TwoParam, &spec).map_err(fail)?;
    Ok(y.data().to_vec())
}

/// Variant roster as JSON `[{"key", "description"}]`.
#[wasm_bindgen]
pub fn variants() -> String {
    let rows: Vec<_> = list_variants().into_iter().map(|(v, d)| json!({"key": v.key(), "description": d})).collect();
    serde_json::Value::Array(rows).to_string()
}

/// Per-layer operation counts of one variant as JSON: `layers` with
/// `kind`, `ops` and `omega_u`, plus `total` and `omega_u`.
#[wasm_bindgen]
pub fn operation_counts(variant: &str, input_shape: &str, classes: usize, theta: f64, exact_adds: bool) -> Result<String, String> {
    let v: VariantId = variant.parse().map_err(fail)?;
    let model = build(&ModelConfig::new(v, &parse_shape(input_shape)?, classes)).map_err(fail)?;
    let convention = if exact_adds { AdditionConvention::Exact } else { AdditionConvention::Reduced };
    let ops = count_model(&model, 1, Theta::new(theta).map_err(fail)?, convention).map_err(fail)?;
    serde_json::to_string(&ops).map_err(fail)
}

/// Learnable parameter count of every variant as JSON `[{"key", "parameters"}]`.
#[wasm_bindgen]
pub fn parameter_counts(input_shape: &str, classes: usize) -> Result<String, String> {
    let shape = parse_shape(input_shape)?;
    let mut rows = Vec::new();
    for (v, _) in list_variants() {
        let model = build(&ModelConfig::new(v, &shape, classes)).map_err(fail)?;
        rows.push(json!({"key": v.key(), "parameters": count_parameters(&model)}));
    }
    Ok(serde_json::Value::Array(rows).to_string())
}
