//! Dense-tensor kernels shared by every other module: small SPD solves,
//! row-wise softmax, 3x3 convolution and block-average downsampling.
//!
//! All arithmetic is f64. Operations are pure functions over immutable
//! inputs and may be called concurrently without restriction.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
///
/// Serialized as a nested array of rows, e.g. `[[1,0],[0,1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl serde::Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = ser.serialize_seq(Some(self.rows))?;
        for r in 0..self.rows {
            seq.serialize_element(&self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        seq.end()
    }
}

impl<'de> serde::Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(de)?;
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.concat() })
    }
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix of side `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data; the length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested row slices (test-friendly constructor).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Dense product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(lhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Elementwise `self - rhs`.
    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Shape("sub with mismatched shapes".into()));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// Euclidean norm of column `c`.
    pub fn col_norm(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c).powi(2)).sum::<f64>().sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense channel-major `C x H x W` tensor; plane `c` is a contiguous `H*W` slab.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    /// Stack per-channel planes of identical shape.
    pub fn from_planes(planes: Vec<Matrix>) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::Shape("no planes".into()))?;
        let (h, w) = (first.rows(), first.cols());
        if planes.iter().any(|p| p.rows() != h || p.cols() != w) {
            return Err(Error::Shape("planes differ in shape".into()));
        }
        let channels = planes.len();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in &planes {
            data.extend_from_slice(p.data());
        }
        Ok(Self { channels, height: h, width: w, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flatten spatially into a `C x N` matrix, `N = H*W`, token `p = y*W + x`.
    pub fn to_tokens(&self) -> Matrix {
        Matrix { rows: self.channels, cols: self.height * self.width, data: self.data.clone() }
    }

    /// Inverse of [`Tensor3::to_tokens`] for a known spatial shape.
    pub fn from_tokens(tokens: &Matrix, height: usize, width: usize) -> Result<Self> {
        if tokens.cols() != height * width {
            return Err(Error::Shape(format!(
                "token count {} does not match {height}x{width}",
                tokens.cols()
            )));
        }
        Ok(Self {
            channels: tokens.rows(),
            height,
            width,
            data: tokens.data().to_vec(),
        })
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Solve `A * W = B` for symmetric positive definite `A` by Cholesky
/// factorization with forward/back substitution per column of `B`.
///
/// Returns an error when the inputs are non-finite or a pivot is not
/// strictly positive (the message names the pivot index).
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("solve_spd expects square A, got {}x{}", a.rows(), a.cols())));
    }
    if b.rows() != n {
        return Err(Error::Shape(format!(
            "solve_spd rhs has {} rows, expected {n}",
            b.rows()
        )));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput("solve_spd: non-finite input".into()));
    }

    // Lower-triangular factor L with A = L L^T.
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "SPD factorization failed at pivot {j} (value {d:.3e})"
            )));
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }

    let k = b.cols();
    let mut w = Matrix::zeros(n, k);
    let mut y = vec![0.0f64; n];
    for col in 0..k {
        // L y = b
        for i in 0..n {
            let mut s = b.get(i, col);
            for j in 0..i {
                s -= l[i * n + j] * y[j];
            }
            y[i] = s / l[i * n + i];
        }
        // L^T w = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= l[j * n + i] * w.get(j, col);
            }
            w.set(i, col, s / l[i * n + i]);
        }
    }
    Ok(w)
}

/// Row-wise softmax with max subtraction for overflow safety.
///
/// Every output row is nonnegative and sums to one; adding a constant to a
/// row leaves its softmax unchanged.
pub fn softmax_rows(s: &Matrix) -> Result<Matrix> {
    if s.cols() == 0 {
        return Err(Error::InvalidInput("softmax_rows: empty row dimension".into()));
    }
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        let row = s.row(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out.set(r, c, e);
            sum += e;
        }
        for c in 0..s.cols() {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    Ok(out)
}

/// 3x3 cross-correlation with zero padding at the borders plus a scalar bias.
pub fn conv3x3(plane: &Matrix, kernel: &Matrix, bias: f64) -> Result<Matrix> {
    if kernel.rows() != 3 || kernel.cols() != 3 {
        return Err(Error::Shape(format!(
            "conv3x3 kernel must be 3x3, got {}x{}",
            kernel.rows(),
            kernel.cols()
        )));
    }
    if !kernel.is_finite() || !bias.is_finite() {
        return Err(Error::InvalidInput("conv3x3: non-finite kernel or bias".into()));
    }
    let (h, w) = (plane.rows(), plane.cols());
    let mut out = Matrix::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = bias;
            for dy in -1i64..=1 {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                for dx in -1i64..=1 {
                    let xx = x as i64 + dx;
                    if xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    acc += kernel.get((dy + 1) as usize, (dx + 1) as usize)
                        * plane.get(yy as usize, xx as usize);
                }
            }
            out.set(y, x, acc);
        }
    }
    Ok(out)
}

/// Block-average pooling onto an `out_h x out_w` grid.
///
/// Block boundaries follow the near-equal partition `floor(i * H / out_h)`,
/// so blocks tile the input exactly when the sizes divide and otherwise
/// differ in extent by at most one row/column.
pub fn downsample_avg(plane: &Matrix, out_h: usize, out_w: usize) -> Result<Matrix> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput("downsample_avg: zero output dimension".into()));
    }
    let (h, w) = (plane.rows(), plane.cols());
    if out_h > h || out_w > w {
        return Err(Error::InvalidInput(format!(
            "downsample_avg: output {out_h}x{out_w} exceeds input {h}x{w}"
        )));
    }
    let mut out = Matrix::zeros(out_h, out_w);
    for by in 0..out_h {
        let r0 = by * h / out_h;
        let r1 = (by + 1) * h / out_h;
        for bx in 0..out_w {
            let c0 = bx * w / out_w;
            let c1 = (bx + 1) * w / out_w;
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += plane.get(r, c);
                }
            }
            out.set(by, bx, sum / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solve_spd_identity_returns_rhs() {
        let a = Matrix::identity(2);
        let b = Matrix::from_rows(&[&[3.0, -1.0], &[0.5, 7.0]]).unwrap();
        let w = solve_spd(&a, &b).unwrap();
        assert_eq!(w, b);
    }

    #[test]
    fn solve_spd_diagonal_by_hand() {
        // diag(2,4) * [[1],[2]] = [[2],[8]]
        let a = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[2.0], &[8.0]]).unwrap();
        let w = solve_spd(&a, &b).unwrap();
        assert!((w.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((w.get(1, 0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn solve_spd_dense_verified_by_multiplying_back() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[&[3.0], &[3.0]]).unwrap();
        let w = solve_spd(&a, &b).unwrap();
        assert!((w.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((w.get(1, 0) - 1.0).abs() < 1e-14);
        let back = a.matmul(&w).unwrap();
        assert!((back.get(0, 0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn solve_spd_rejects_non_finite() {
        let a = Matrix::from_rows(&[&[f64::NAN, 0.0], &[0.0, 1.0]]).unwrap();
        let b = Matrix::zeros(2, 1);
        assert!(matches!(solve_spd(&a, &b), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn solve_spd_names_failing_pivot() {
        // Second pivot goes negative: [[1, 2], [2, 1]] has eigenvalues 3, -1.
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        let b = Matrix::zeros(2, 1);
        match solve_spd(&a, &b) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("pivot 1"), "{msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    /// Residual bound over >= 100 seeded SPD systems built as U^T U + delta I.
    #[test]
    fn solve_spd_residual_bound_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..120 {
            let r = 1 + (trial % 8);
            let m = r + 2;
            let mut u = Matrix::zeros(m, r);
            for v in u.data_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let mut a = u.transpose().matmul(&u).unwrap();
            let delta = 1e-6_f64.max(rng.gen_range(0.0..0.1));
            for i in 0..r {
                a.set(i, i, a.get(i, i) + delta);
            }
            let mut b = Matrix::zeros(r, 3);
            for v in b.data_mut() {
                *v = rng.gen_range(-5.0..5.0);
            }
            let w = solve_spd(&a, &b).unwrap();
            let resid = a.matmul(&w).unwrap().sub(&b).unwrap().max_abs();
            assert!(
                resid <= 1e-8 * b.max_abs().max(1e-300),
                "trial {trial}: residual {resid:.3e} vs bound {:.3e}",
                1e-8 * b.max_abs()
            );
        }
    }

    #[test]
    fn softmax_uniform_row() {
        let s = Matrix::from_rows(&[&[0.0, 0.0, 0.0]]).unwrap();
        let w = softmax_rows(&s).unwrap();
        for c in 0..3 {
            assert!((w.get(0, c) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shifted_ln2_row() {
        for c in [-100.0, 0.0, 3.5, 1000.0] {
            let s = Matrix::from_rows(&[&[c, c + 2.0f64.ln()]]).unwrap();
            let w = softmax_rows(&s).unwrap();
            assert!((w.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
            assert!((w.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logit_no_overflow() {
        let s = Matrix::from_rows(&[&[1000.0, 0.0]]).unwrap();
        let w = softmax_rows(&s).unwrap();
        assert!(w.get(0, 0) > 1.0 - 1e-12);
        assert!(w.get(0, 1) < 1e-12);
        assert!(w.is_finite());
    }

    #[test]
    fn softmax_empty_rows_rejected() {
        let s = Matrix::zeros(2, 0);
        assert!(matches!(softmax_rows(&s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut plane = Matrix::zeros(4, 5);
        for (i, v) in plane.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.3 - 2.0;
        }
        let mut kernel = Matrix::zeros(3, 3);
        kernel.set(1, 1, 1.0);
        let out = conv3x3(&plane, &kernel, 0.0).unwrap();
        assert_eq!(out, plane);
    }

    #[test]
    fn conv_ones_counts_valid_neighbors() {
        let plane = Matrix::from_vec(3, 3, vec![1.0; 9]).unwrap();
        let kernel = Matrix::from_vec(3, 3, vec![1.0; 9]).unwrap();
        let out = conv3x3(&plane, &kernel, 0.0).unwrap();
        assert_eq!(out.get(1, 1), 9.0);
        assert_eq!(out.get(0, 0), 4.0);
        assert_eq!(out.get(0, 1), 6.0);
    }

    #[test]
    fn conv_zero_kernel_gives_bias_plane() {
        let plane = Matrix::from_vec(2, 6, (0..12).map(|i| i as f64).collect()).unwrap();
        let out = conv3x3(&plane, &Matrix::zeros(3, 3), -1.25).unwrap();
        assert!(out.data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn conv_rejects_non_finite_kernel() {
        let plane = Matrix::zeros(2, 2);
        let mut kernel = Matrix::zeros(3, 3);
        kernel.set(0, 0, f64::INFINITY);
        assert!(matches!(conv3x3(&plane, &kernel, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn downsample_constant_plane() {
        let plane = Matrix::from_vec(4, 4, vec![0.7; 16]).unwrap();
        let out = downsample_avg(&plane, 2, 2).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn downsample_to_single_cell_is_global_mean() {
        let plane = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let out = downsample_avg(&plane, 1, 1).unwrap();
        assert_eq!(out.get(0, 0), 2.5);
    }

    #[test]
    fn downsample_same_size_is_identity() {
        let plane = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64 * 1.5).collect()).unwrap();
        let out = downsample_avg(&plane, 3, 4).unwrap();
        assert_eq!(out, plane);
    }

    #[test]
    fn downsample_zero_output_rejected() {
        let plane = Matrix::zeros(4, 4);
        assert!(matches!(downsample_avg(&plane, 0, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn downsample_preserves_mean_when_blocks_tile_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut plane = Matrix::zeros(12, 8);
        for v in plane.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let out = downsample_avg(&plane, 3, 4).unwrap();
        assert!((out.mean() - plane.mean()).abs() <= 1e-12);
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Matrix::zeros(5, 7);
        let mut y = Matrix::zeros(5, 7);
        let mut kernel = Matrix::zeros(3, 3);
        for v in x.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in y.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in kernel.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (a, b) = (1.7, -0.4);
        let mut combo = Matrix::zeros(5, 7);
        for i in 0..combo.data().len() {
            combo.data_mut()[i] = a * x.data()[i] + b * y.data()[i];
        }
        let lhs = conv3x3(&combo, &kernel, 0.0).unwrap();
        let cx = conv3x3(&x, &kernel, 0.0).unwrap();
        let cy = conv3x3(&y, &kernel, 0.0).unwrap();
        for i in 0..lhs.data().len() {
            let rhs = a * cx.data()[i] + b * cy.data()[i];
            assert!((lhs.data()[i] - rhs).abs() <= 1e-10);
        }
    }

    #[test]
    fn tensor_token_round_trip() {
        let t = Tensor3::from_vec(2, 2, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        let tokens = t.to_tokens();
        assert_eq!(tokens.rows(), 2);
        assert_eq!(tokens.cols(), 6);
        // token p = y*W + x; channel 1, y=1, x=2 -> token 5
        assert_eq!(tokens.get(1, 5), t.get(1, 1, 2));
        let back = Tensor3::from_tokens(&tokens, 2, 3).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-20.0, -1.0, 0.0, 0.5, 10.0] {
            let naive = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
