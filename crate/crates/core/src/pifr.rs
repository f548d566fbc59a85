//! Feature refinement by approximate rank-sparsity decomposition.
//!
//! A flattened feature map is split into a low-rank background estimate
//! (pooled prototypes, projected basis, closed-form ridge projection) and a
//! sparse residual (token-wise group shrinkage). The sparse part drives a
//! sigmoid gate that is injected back residually, so a zero residual scale
//! leaves the input untouched.

use crate::error::{Error, Result};
use crate::numeric::{conv3x3, sigmoid, softplus, solve_spd, Matrix, Tensor3};

/// Learnable state for one refinement stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PifrParams {
    /// Background subspace rank.
    #[serde(rename = "r")]
    pub rank: usize,
    /// Ridge regularizer, strictly positive.
    pub delta: f64,
    /// Shrinkage pre-threshold; the effective threshold is `softplus(rho)`.
    pub rho: f64,
    /// Norm stabilizer in the shrinkage denominator.
    pub eps: f64,
    /// Residual injection scale; zero means the stage is an exact identity.
    pub alpha: f64,
    /// Channel-space projector applied to the pooled prototypes.
    pub phi: Matrix,
    /// 3x3 kernel of the gate convolution.
    pub gate_kernel: Matrix,
    /// Bias of the gate convolution.
    pub gate_bias: f64,
}

impl Default for PifrParams {
    /// Defaults sized for the pipeline's 8-channel stages.
    fn default() -> Self {
        Self::new(8)
    }
}

impl PifrParams {
    /// Defaults for a feature map with `channels` channels: rank 4,
    /// identity projector, a pass-through (center-spike) gate kernel with
    /// a negative bias so the gate opens only on salient cells, and
    /// `alpha = 0` (identity behavior).
    pub fn new(channels: usize) -> Self {
        let mut gate_kernel = Matrix::zeros(3, 3);
        gate_kernel.set(1, 1, 1.0);
        Self {
            rank: 4,
            delta: 1e-4,
            rho: -2.0,
            eps: 1e-6,
            alpha: 0.0,
            phi: Matrix::identity(channels),
            gate_kernel,
            gate_bias: -2.0,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidInput("pifr: rank must be >= 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput("pifr: delta must be > 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidInput("pifr: eps must be > 0".into()));
        }
        if self.phi.rows() != channels || self.phi.cols() != channels {
            return Err(Error::Shape(format!(
                "pifr: phi is {}x{}, expected {channels}x{channels}",
                self.phi.rows(),
                self.phi.cols()
            )));
        }
        if self.gate_kernel.rows() != 3 || self.gate_kernel.cols() != 3 {
            return Err(Error::Shape("pifr: gate kernel must be 3x3".into()));
        }
        let finite = self.phi.is_finite()
            && self.gate_kernel.is_finite()
            && [self.delta, self.rho, self.eps, self.alpha, self.gate_bias]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("pifr: non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Intermediate products of one refinement pass.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Low-rank background estimate, `C x N`.
    pub background: Matrix,
    /// Residual after background removal; background + residual = input tokens.
    pub residual: Matrix,
    /// Shrunk sparse component, `C x N`.
    pub sparse: Matrix,
    /// Per-token norm of the sparse component reshaped to `H x W`.
    pub saliency: Matrix,
    /// Sigmoid gate in (0,1), `H x W`.
    pub gate: Matrix,
}

/// Pick the bin layout `rank = bins_y * bins_x` that fits the grid with the
/// most balanced aspect, preferring `bins_y <= bins_x`.
fn bin_layout(rank: usize, grid: (usize, usize)) -> Result<(usize, usize)> {
    let (h, w) = grid;
    let mut best: Option<(usize, usize)> = None;
    for by in 1..=rank {
        if rank % by != 0 {
            continue;
        }
        let bx = rank / by;
        if by > h || bx > w {
            continue;
        }
        let better = match best {
            None => true,
            Some((cy, cx)) => {
                let cand = (by as i64 - bx as i64).abs();
                let cur = (cy as i64 - cx as i64).abs();
                cand < cur || (cand == cur && by <= bx && cy > cx)
            }
        };
        if better {
            best = Some((by, bx));
        }
    }
    best.ok_or_else(|| {
        Error::InvalidInput(format!(
            "no {rank}-bin factorization fits a {h}x{w} grid"
        ))
    })
}

/// Mean-pool token columns into `rank` coarse spatial bins.
///
/// The grid is partitioned into non-overlapping near-equal rectangles
/// (rank 4 on an even grid gives the four quadrants); output column `j`
/// is the average of the feature columns falling in bin `j`.
pub fn pool_prototypes(tokens: &Matrix, grid: (usize, usize), rank: usize) -> Result<Matrix> {
    let (h, w) = grid;
    if tokens.cols() != h * w {
        return Err(Error::Shape(format!(
            "token count {} does not match grid {h}x{w}",
            tokens.cols()
        )));
    }
    let (bins_y, bins_x) = bin_layout(rank, grid)?;
    let channels = tokens.rows();
    let mut out = Matrix::zeros(channels, rank);
    for by in 0..bins_y {
        let r0 = by * h / bins_y;
        let r1 = (by + 1) * h / bins_y;
        for bx in 0..bins_x {
            let c0 = bx * w / bins_x;
            let c1 = (bx + 1) * w / bins_x;
            let bin = by * bins_x + bx;
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            for ch in 0..channels {
                let mut sum = 0.0;
                for y in r0..r1 {
                    for x in c0..c1 {
                        sum += tokens.get(ch, y * w + x);
                    }
                }
                out.set(ch, bin, sum / count);
            }
        }
    }
    Ok(out)
}

/// Closed-form ridge projection of the tokens onto the span of `basis`:
/// `basis * (basis^T basis + delta I)^-1 * basis^T * tokens`.
pub fn estimate_background(tokens: &Matrix, basis: &Matrix, delta: f64) -> Result<Matrix> {
    if basis.rows() != tokens.rows() {
        return Err(Error::Shape(format!(
            "basis has {} channels, tokens have {}",
            basis.rows(),
            tokens.rows()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("ridge delta must be > 0".into()));
    }
    let rank = basis.cols();
    let mut gram = basis.transpose().matmul(basis)?;
    for i in 0..rank {
        gram.set(i, i, gram.get(i, i) + delta);
    }
    let rhs = basis.transpose().matmul(tokens)?;
    let coeffs = solve_spd(&gram, &rhs)?;
    basis.matmul(&coeffs)
}

/// Token-wise group shrinkage: column `i` is scaled by
/// `max(1 - softplus(rho) / (||col_i|| + eps), 0)`.
///
/// Nonzero output columns keep the direction of the input column and never
/// grow in norm.
pub fn shrink_residual(residual: &Matrix, rho: f64, eps: f64) -> Matrix {
    let threshold = softplus(rho);
    let mut out = Matrix::zeros(residual.rows(), residual.cols());
    for i in 0..residual.cols() {
        let norm = residual.col_norm(i);
        let denom = norm + eps;
        let factor = if denom > 0.0 {
            (1.0 - threshold / denom).max(0.0)
        } else {
            0.0
        };
        if factor > 0.0 {
            for ch in 0..residual.rows() {
                out.set(ch, i, factor * residual.get(ch, i));
            }
        }
    }
    out
}

/// Per-token Euclidean norms of the sparse component laid out as `H x W`.
pub fn saliency_map(sparse: &Matrix, grid: (usize, usize)) -> Result<Matrix> {
    let (h, w) = grid;
    if sparse.cols() != h * w {
        return Err(Error::Shape(format!(
            "sparse token count {} does not match grid {h}x{w}",
            sparse.cols()
        )));
    }
    let mut s = Matrix::zeros(h, w);
    for p in 0..sparse.cols() {
        s.set(p / w, p % w, sparse.col_norm(p));
    }
    Ok(s)
}

/// Turn sparsity into a soft spatial gate:
/// `sigmoid(conv3x3(saliency, kernel, bias))`, entries strictly in (0,1).
pub fn build_gate(
    sparse: &Matrix,
    grid: (usize, usize),
    kernel: &Matrix,
    bias: f64,
) -> Result<Matrix> {
    let s = saliency_map(sparse, grid)?;
    gate_from_saliency(&s, kernel, bias)
}

fn gate_from_saliency(saliency: &Matrix, kernel: &Matrix, bias: f64) -> Result<Matrix> {
    let mut m = conv3x3(saliency, kernel, bias)?;
    for v in m.data_mut() {
        *v = sigmoid(*v);
    }
    Ok(m)
}

/// Full refinement pass: decompose, gate, and residually re-inject.
///
/// The refined map is `x + alpha * (x ⊙ gate)` with the gate broadcast over
/// channels. With `alpha = 0` the output equals the input bit for bit.
pub fn refine(x: &Tensor3, params: &PifrParams) -> Result<(Tensor3, Decomposition)> {
    params.validate(x.channels())?;
    if !x.is_finite() {
        return Err(Error::InvalidInput("refine: non-finite feature map".into()));
    }
    let grid = (x.height(), x.width());
    let tokens = x.to_tokens();

    let prototypes = pool_prototypes(&tokens, grid, params.rank)?;
    let basis = params.phi.matmul(&prototypes)?;
    let background = estimate_background(&tokens, &basis, params.delta)?;
    let residual = tokens.sub(&background)?;
    let sparse = shrink_residual(&residual, params.rho, params.eps);
    let saliency = saliency_map(&sparse, grid)?;
    let gate = gate_from_saliency(&saliency, &params.gate_kernel, params.gate_bias)?;

    let refined = if params.alpha == 0.0 {
        x.clone()
    } else {
        let mut out = x.clone();
        let (h, w) = grid;
        for c in 0..x.channels() {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.get(c, y, xx);
                    out.set(c, y, xx, v + params.alpha * v * gate.get(y, xx));
                }
            }
        }
        out
    };

    Ok((
        refined,
        Decomposition { background, residual, sparse, saliency, gate },
    ))
}
