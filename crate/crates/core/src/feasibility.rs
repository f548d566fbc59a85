//! Feasibility prior: a spatial likelihood field built from recent
//! detections.
//!
//! Each confident detection contributes an isotropic Gaussian bump centered
//! on its box; with no confident detections the field degenerates to the
//! uninformative constant 1, so everything downstream of it reduces to the
//! unbiased baseline.

use crate::error::{Error, Result};
use crate::numeric::{conv3x3, downsample_avg, sigmoid, Matrix};
use crate::types::Detection;

/// Detections below this score do not contribute to the field.
pub const DEFAULT_SCORE_FLOOR: f64 = 0.3;

/// Default Gaussian width multiplier.
pub const DEFAULT_KAPPA: f64 = 2.0;

/// Effective radius of a detection: a quarter of its perimeter-ish extent,
/// floored so that degenerate boxes still produce a finite-width bump.
pub fn detection_radius(det: &Detection) -> f64 {
    ((det.bbox.width() + det.bbox.height()) / 4.0).max(0.5)
}

/// Evaluate the feasibility field on an `height x width` pixel grid.
///
/// `G(p) = sum_d exp(-||p - c_d||^2 / (2 kappa^2 r_d^2))` over detections
/// with `score >= score_floor`, where `p` ranges over pixel centers. If no
/// detection qualifies the field is identically 1. The field is strictly
/// positive everywhere.
pub fn build_field(
    detections: &[Detection],
    height: usize,
    width: usize,
    kappa: f64,
    score_floor: f64,
) -> Result<Matrix> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("field dimensions must be nonzero".into()));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    let active: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.score >= score_floor && d.bbox.is_valid() && d.score.is_finite())
        .collect();
    if active.is_empty() {
        return Ok(Matrix::from_vec(height, width, vec![1.0; height * width])?);
    }
    let mut field = Matrix::zeros(height, width);
    for det in active {
        let (cx, cy) = det.bbox.center();
        let r = detection_radius(det);
        let inv = 1.0 / (2.0 * kappa * kappa * r * r);
        for y in 0..height {
            let py = y as f64 + 0.5;
            for x in 0..width {
                let px = x as f64 + 0.5;
                let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                let v = field.get(y, x) + (-d2 * inv).exp();
                field.set(y, x, v);
            }
        }
    }
    Ok(field)
}

/// Average the field over the cells of an `out_h x out_w` token grid.
///
/// Returns the per-token prior flattened row-major (token `p = y * out_w + x`).
pub fn sample_prior(field: &Matrix, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    let pooled = downsample_avg(field, out_h, out_w)?;
    Ok(pooled.data().to_vec())
}

/// Squash the pooled field into a soft gate on the token grid:
/// `sigmoid(conv3x3(downsample(G), kernel, bias))`.
pub fn make_gate_map(
    field: &Matrix,
    out_h: usize,
    out_w: usize,
    kernel: &Matrix,
    bias: f64,
) -> Result<Matrix> {
    let pooled = downsample_avg(field, out_h, out_w)?;
    let mut gate = conv3x3(&pooled, kernel, bias)?;
    for v in gate.data_mut() {
        *v = sigmoid(*v);
    }
    Ok(gate)
}
