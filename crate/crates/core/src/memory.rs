//! Bounded temporal memory with prior-biased cross-attention.
//!
//! A FIFO bank keeps projected key/value tokens (plus the feasibility prior
//! frozen at write time) for the most recent frames. Reads attend from the
//! current frame's tokens over everything in the bank; a learned scalar
//! steers how strongly the frozen prior biases the attention logits.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softmax_rows, Matrix};

/// Learnable state and hyper-parameters of the memory stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PgmaParams {
    /// Write-gate injection scale; zero writes the features unchanged.
    pub beta: f64,
    /// Readout injection scale.
    pub gamma: f64,
    /// Unconstrained prior-bias parameter; the effective bias is
    /// `lambda_max * sigmoid(theta_lambda)`.
    pub theta_lambda: f64,
    /// Upper bound of the prior-bias strength.
    pub lambda_max: f64,
    /// Stabilizer inside the prior logarithm.
    pub eps_pi: f64,
    /// Query / key / value channel projections.
    #[serde(rename = "Wq")]
    pub wq: Matrix,
    #[serde(rename = "Wk")]
    pub wk: Matrix,
    #[serde(rename = "Wv")]
    pub wv: Matrix,
    /// 3x3 kernel and bias of the write gate.
    pub gate_kernel: Matrix,
    pub gate_bias: f64,
    /// Bank capacity in frames.
    #[serde(rename = "K")]
    pub capacity: usize,
}

impl Default for PgmaParams {
    /// Defaults sized for the pipeline's 8-channel deepest stage.
    fn default() -> Self {
        Self::new(8)
    }
}

impl PgmaParams {
    /// Defaults for `channels`-dimensional tokens: identity projections,
    /// a pass-through (center-spike) write-gate kernel, capacity 5, and a
    /// small readout scale so the stage starts close to (but not exactly
    /// at) identity. The prior bias starts weak (`theta_lambda` negative)
    /// and strengthens only if tuning pushes it up.
    pub fn new(channels: usize) -> Self {
        let mut gate_kernel = Matrix::zeros(3, 3);
        gate_kernel.set(1, 1, 1.0);
        Self {
            beta: 0.0,
            gamma: 0.01,
            theta_lambda: -2.0,
            lambda_max: 4.0,
            eps_pi: 1e-6,
            wq: Matrix::identity(channels),
            wk: Matrix::identity(channels),
            wv: Matrix::identity(channels),
            gate_kernel,
            gate_bias: 0.0,
            capacity: 5,
        }
    }

    /// Effective prior-bias strength in `[0, lambda_max)`.
    pub fn lambda(&self) -> f64 {
        self.lambda_max * sigmoid(self.theta_lambda)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidInput("pgma: capacity must be >= 1".into()));
        }
        if !(self.lambda_max >= 0.0) || !self.lambda_max.is_finite() {
            return Err(Error::InvalidInput("pgma: lambda_max must be >= 0".into()));
        }
        if !(self.eps_pi > 0.0) {
            return Err(Error::InvalidInput("pgma: eps_pi must be > 0".into()));
        }
        for (name, w) in [("Wq", &self.wq), ("Wk", &self.wk), ("Wv", &self.wv)] {
            if w.rows() != channels || w.cols() != channels {
                return Err(Error::Shape(format!(
                    "pgma: {name} is {}x{}, expected {channels}x{channels}",
                    w.rows(),
                    w.cols()
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidInput(format!("pgma: non-finite {name}")));
            }
        }
        if self.gate_kernel.rows() != 3 || self.gate_kernel.cols() != 3 {
            return Err(Error::Shape("pgma: gate kernel must be 3x3".into()));
        }
        let finite = self.gate_kernel.is_finite()
            && [self.beta, self.gamma, self.theta_lambda, self.gate_bias]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("pgma: non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Snapshot of one frame as seen by future reads.
///
/// Entries hold the gate-encoded features; keys and values are projected
/// lazily at read time so the stored format stays projection-agnostic
/// when parameters change between frames. Token order is row-major over
/// the write-time grid, which fixes each token's grid coordinate.
#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub frame: u64,
    /// Gate-encoded features `Z`, `C x N`.
    pub features: Matrix,
    /// Feasibility prior per token, frozen at write time.
    pub prior: Vec<f64>,
}

/// FIFO bank of the most recent frames, oldest evicted first.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput("memory capacity must be >= 1".into()));
        }
        Ok(Self { capacity, entries: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.entries.back().map(|e| e.frame)
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }
}

/// Prepare features for storage: `Z = X + beta * (X ⊙ g)` with the gate
/// broadcast over channels. `beta = 0` stores the tokens unchanged.
pub fn encode_memory(tokens: &Matrix, gate: &Matrix, beta: f64) -> Result<Matrix> {
    if gate.rows() * gate.cols() != tokens.cols() {
        return Err(Error::Shape(format!(
            "gate covers {} tokens but features have {}",
            gate.rows() * gate.cols(),
            tokens.cols()
        )));
    }
    if beta == 0.0 {
        return Ok(tokens.clone());
    }
    let mut out = tokens.clone();
    for p in 0..tokens.cols() {
        let g = gate.data()[p];
        for c in 0..tokens.rows() {
            out.set(c, p, tokens.get(c, p) * (1.0 + beta * g));
        }
    }
    Ok(out)
}

/// Project and append one frame to the bank, evicting the oldest entry when
/// full. Frame indices must be strictly increasing.
pub fn write_memory(
    bank: &mut MemoryBank,
    frame: u64,
    encoded: &Matrix,
    prior: &[f64],
    params: &PgmaParams,
) -> Result<()> {
    params.validate(encoded.rows())?;
    if prior.len() != encoded.cols() {
        return Err(Error::Shape(format!(
            "prior has {} entries for {} tokens",
            prior.len(),
            encoded.cols()
        )));
    }
    if prior.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("prior must be finite and nonnegative".into()));
    }
    if !encoded.is_finite() {
        return Err(Error::InvalidInput("memory write: non-finite features".into()));
    }
    if let Some(last) = bank.last_frame() {
        if frame <= last {
            return Err(Error::FrameOrder(format!(
                "frame {frame} written after frame {last}"
            )));
        }
    }
    let entry = MemoryEntry { frame, features: encoded.clone(), prior: prior.to_vec() };
    if bank.entries.len() == bank.capacity {
        bank.entries.pop_front();
    }
    bank.entries.push_back(entry);
    Ok(())
}

/// Attention weights of each query token over every token in the bank.
///
/// Logits are `q·k / sqrt(C) + lambda * ln(prior + eps_pi)`, softmaxed per
/// query row. Returns the `N_query x M` weight matrix and the pooled
/// `C x M` value matrix; `None` when the bank is empty.
pub fn attention_weights(
    query: &Matrix,
    bank: &MemoryBank,
    params: &PgmaParams,
) -> Result<Option<(Matrix, Matrix)>> {
    if bank.is_empty() {
        return Ok(None);
    }
    let channels = query.rows();
    params.validate(channels)?;
    let total: usize = bank.entries().map(|e| e.features.cols()).sum();
    let mut stored = Matrix::zeros(channels, total);
    let mut prior = Vec::with_capacity(total);
    let mut at = 0;
    for entry in bank.entries() {
        if entry.features.rows() != channels {
            return Err(Error::Shape(format!(
                "memory entry has {} channels, query has {channels}",
                entry.features.rows()
            )));
        }
        for i in 0..entry.features.cols() {
            for c in 0..channels {
                stored.set(c, at, entry.features.get(c, i));
            }
            prior.push(entry.prior[i]);
            at += 1;
        }
    }
    let keys = params.wk.matmul(&stored)?;
    let values = params.wv.matmul(&stored)?;

    let projected = params.wq.matmul(query)?;
    let scale = 1.0 / (channels as f64).sqrt();
    let lambda = params.lambda();
    let mut logits = projected.transpose().matmul(&keys)?;
    for j in 0..logits.rows() {
        for i in 0..logits.cols() {
            let bias = lambda * (prior[i] + params.eps_pi).ln();
            logits.set(j, i, logits.get(j, i) * scale + bias);
        }
    }
    let weights = softmax_rows(&logits)?;
    Ok(Some((weights, values)))
}

/// Cross-attention read: `q_hat = Wq x + gamma * V w` per token.
///
/// With an empty bank the stage is skipped entirely and the input tokens
/// are returned unchanged.
pub fn read_attend(query: &Matrix, bank: &MemoryBank, params: &PgmaParams) -> Result<Matrix> {
    let Some((weights, values)) = attention_weights(query, bank, params)? else {
        return Ok(query.clone());
    };
    let projected = params.wq.matmul(query)?;
    let readout = values.matmul(&weights.transpose())?; // C x N_query
    let mut out = projected;
    for p in 0..out.cols() {
        for c in 0..out.rows() {
            let v = out.get(c, p) + params.gamma * readout.get(c, p);
            out.set(c, p, v);
        }
    }
    Ok(out)
}
