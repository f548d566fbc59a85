//! Analytic derivatives of the tuned scalar parameters, for verifying the
//! implementation against finite differences.
//!
//! Each check works on a scalar observable `S = sum(W ⊙ output)` with a
//! fixed weight tensor `W`: the derivatives below re-derive `dS/dparam`
//! through the module math, while tests (and the acceptance suite) compare
//! them against central differences of the very same observable computed
//! through the production code path.

use crate::error::Result;
use crate::memory::{encode_memory, read_attend, write_memory, MemoryBank, PgmaParams};
use crate::numeric::{conv3x3, sigmoid, softmax_rows, softplus, Matrix, Tensor3};
use crate::pifr::{estimate_background, pool_prototypes, refine, PifrParams};

/// Weighted sum of the refined feature map (the PIFR observable).
pub fn refine_observable(x: &Tensor3, params: &PifrParams, weights: &Tensor3) -> Result<f64> {
    let (out, _) = refine(x, params)?;
    Ok(out
        .data()
        .iter()
        .zip(weights.data().iter())
        .map(|(a, b)| a * b)
        .sum())
}

/// `d/d(alpha)` of [`refine_observable`]: the decomposition does not depend
/// on `alpha`, so the derivative is exactly `sum(W ⊙ (X ⊙ gate))`.
pub fn refine_grad_alpha(x: &Tensor3, params: &PifrParams, weights: &Tensor3) -> Result<f64> {
    let (_, dec) = refine(x, params)?;
    let (h, w) = (x.height(), x.width());
    let mut total = 0.0;
    for c in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                total += weights.get(c, y, xx) * x.get(c, y, xx) * dec.gate.get(y, xx);
            }
        }
    }
    Ok(total)
}

/// `d/d(rho)` of [`refine_observable`], chained through the shrinkage
/// threshold, the saliency map, and the gate convolution.
///
/// Piecewise smooth: not valid where a token norm sits exactly at the
/// shrinkage threshold (the `max(·, 0)` kink).
pub fn refine_grad_rho(x: &Tensor3, params: &PifrParams, weights: &Tensor3) -> Result<f64> {
    params.validate(x.channels())?;
    let grid = (x.height(), x.width());
    let tokens = x.to_tokens();
    let prototypes = pool_prototypes(&tokens, grid, params.rank)?;
    let basis = params.phi.matmul(&prototypes)?;
    let background = estimate_background(&tokens, &basis, params.delta)?;
    let residual = tokens.sub(&background)?;

    let threshold = softplus(params.rho);
    let dthreshold = sigmoid(params.rho); // d softplus / d rho
    let (h, w) = grid;
    let mut saliency = Matrix::zeros(h, w);
    let mut dsaliency = Matrix::zeros(h, w);
    for p in 0..residual.cols() {
        let n = residual.col_norm(p);
        let denom = n + params.eps;
        let factor = if denom > 0.0 { (1.0 - threshold / denom).max(0.0) } else { 0.0 };
        let (y, x_) = (p / w, p % w);
        saliency.set(y, x_, factor * n);
        // d(factor * n)/d rho = -n/denom * d(threshold)/d rho on the active branch
        if factor > 0.0 {
            dsaliency.set(y, x_, -n / denom * dthreshold);
        }
    }
    let z = conv3x3(&saliency, &params.gate_kernel, params.gate_bias)?;
    let dz = conv3x3(&dsaliency, &params.gate_kernel, 0.0)?;
    let mut total = 0.0;
    for y in 0..h {
        for xx in 0..w {
            let m = sigmoid(z.get(y, xx));
            let dm = m * (1.0 - m) * dz.get(y, xx);
            for c in 0..x.channels() {
                total += weights.get(c, y, xx) * params.alpha * x.get(c, y, xx) * dm;
            }
        }
    }
    Ok(total)
}

/// A minimal one-entry attention scene: current-frame query tokens plus
/// the memory frame they attend over (its pre-write tokens, write gate,
/// and frozen prior).
#[derive(Debug, Clone)]
pub struct AttentionScene {
    pub query: Matrix,
    pub memory_tokens: Matrix,
    pub write_gate: Matrix,
    pub prior: Vec<f64>,
}

/// Observable of the full write-then-read path through the production
/// code: encode, store, attend, then weight the fused tokens.
pub fn attention_observable(
    scene: &AttentionScene,
    params: &PgmaParams,
    weights: &Matrix,
) -> Result<f64> {
    let encoded = encode_memory(&scene.memory_tokens, &scene.write_gate, params.beta)?;
    let mut bank = MemoryBank::new(params.capacity)?;
    write_memory(&mut bank, 0, &encoded, &scene.prior, params)?;
    let fused = read_attend(&scene.query, &bank, params)?;
    Ok(fused
        .data()
        .iter()
        .zip(weights.data().iter())
        .map(|(a, b)| a * b)
        .sum())
}

/// Analytic derivatives of [`attention_observable`] with respect to the
/// three memory scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionGrads {
    pub beta: f64,
    pub gamma: f64,
    pub theta_lambda: f64,
}

pub fn attention_grads(
    scene: &AttentionScene,
    params: &PgmaParams,
    weights: &Matrix,
) -> Result<AttentionGrads> {
    let channels = scene.query.rows();
    params.validate(channels)?;
    let n = scene.query.cols();
    let m = scene.memory_tokens.cols();
    let scale = 1.0 / (channels as f64).sqrt();

    // forward pieces, re-derived
    let encoded = encode_memory(&scene.memory_tokens, &scene.write_gate, params.beta)?;
    let keys = params.wk.matmul(&encoded)?;
    let values = params.wv.matmul(&encoded)?;
    let q = params.wq.matmul(&scene.query)?;
    let lambda = params.lambda();
    let log_prior: Vec<f64> = scene.prior.iter().map(|p| (p + params.eps_pi).ln()).collect();
    let mut logits = q.transpose().matmul(&keys)?;
    for j in 0..n {
        for i in 0..m {
            logits.set(j, i, logits.get(j, i) * scale + lambda * log_prior[i]);
        }
    }
    let w = softmax_rows(&logits)?;

    // d(encoded)/d(beta) = memory_tokens ⊙ gate, so keys/values move linearly
    let mut dz = scene.memory_tokens.clone();
    for p in 0..m {
        let g = scene.write_gate.data()[p];
        for c in 0..channels {
            dz.set(c, p, scene.memory_tokens.get(c, p) * g);
        }
    }
    let dkeys = params.wk.matmul(&dz)?;
    let dvalues = params.wv.matmul(&dz)?;

    let sig = sigmoid(params.theta_lambda);
    let dlambda = params.lambda_max * sig * (1.0 - sig);

    let mut g_beta = 0.0;
    let mut g_gamma = 0.0;
    let mut g_theta = 0.0;
    for j in 0..n {
        // content-logit derivatives for beta, prior-logit derivatives for theta
        let dc_beta: Vec<f64> = (0..m)
            .map(|i| (0..channels).map(|c| q.get(c, j) * dkeys.get(c, i)).sum::<f64>() * scale)
            .collect();
        let dc_theta: Vec<f64> = (0..m).map(|i| log_prior[i] * dlambda).collect();
        let row_dot = |d: &[f64]| -> f64 { (0..m).map(|i| w.get(j, i) * d[i]).sum() };
        let mean_beta = row_dot(&dc_beta);
        let mean_theta = row_dot(&dc_theta);
        for c in 0..channels {
            let wt = weights.get(c, j);
            if wt == 0.0 {
                continue;
            }
            let mut readout = 0.0;
            let mut d_read_beta = 0.0;
            let mut d_read_theta = 0.0;
            for i in 0..m {
                let wji = w.get(j, i);
                readout += wji * values.get(c, i);
                let dw_beta = wji * (dc_beta[i] - mean_beta);
                let dw_theta = wji * (dc_theta[i] - mean_theta);
                d_read_beta += dw_beta * values.get(c, i) + wji * dvalues.get(c, i);
                d_read_theta += dw_theta * values.get(c, i);
            }
            g_gamma += wt * readout;
            g_beta += wt * params.gamma * d_read_beta;
            g_theta += wt * params.gamma * d_read_theta;
        }
    }
    Ok(AttentionGrads { beta: g_beta, gamma: g_gamma, theta_lambda: g_theta })
}
