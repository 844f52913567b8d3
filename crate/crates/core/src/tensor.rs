//! Minimal dense linear algebra over row-major `f64` matrices.
//!
//! Everything here is a pure function on immutable inputs. The matmul kernels
//! use a fixed i-k-j loop order so results are bit-reproducible for a given
//! build. Values are `f64` throughout; tensors are narrowed to `f32` only at
//! the dataset file boundary.

use crate::error::{Error, Result};

/// Norm floor for normalization and cosine similarity.
pub const EPS_NORM: f64 = 1e-12;

/// Dense rank-2 tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "Tensor2::from_vec",
                detail: format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Single row from a flat slice.
    pub fn from_row(row: &[f64]) -> Self {
        Tensor2 {
            rows: 1,
            cols: row.len(),
            data: row.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column-wise arithmetic mean over rows.
    pub fn mean_rows(&self) -> Result<Vec<f64>> {
        if self.rows == 0 {
            return Err(Error::EmptyInput { what: "mean over rows" });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let r = self.row(i);
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        Ok(out)
    }

    pub fn scale_inplace(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn add_inplace(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// self += s * other
    pub fn axpy_inplace(&mut self, s: f64, other: &Tensor2) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

/// C = A * B. Fixed accumulation order (i, k, j): deterministic.
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.rows {
        return Err(Error::DimMismatch {
            op: "matmul",
            detail: format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut c = Tensor2::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    Ok(c)
}

/// C = A * B^T where B is given untransposed (n x k). Avoids materializing B^T.
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.cols {
        return Err(Error::DimMismatch {
            op: "matmul_nt",
            detail: format!("{}x{} * ({}x{})^T", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut c = Tensor2::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    Ok(c)
}

/// C = A^T * B where A is given untransposed (k x m). Used for weight gradients.
pub fn matmul_tn(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.rows != b.rows {
        return Err(Error::DimMismatch {
            op: "matmul_tn",
            detail: format!("({}x{})^T * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut c = Tensor2::zeros(a.cols, b.cols);
    let n = b.cols;
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            let crow = &mut c.data[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aki * bv;
            }
        }
    }
    Ok(c)
}

/// Row-wise softmax with row-max subtraction for stability.
/// Every output row sums to 1.
pub fn softmax_rows(m: &Tensor2) -> Tensor2 {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

/// Backward of row-wise softmax given its output `p` and upstream `d_out`:
/// d_in[i][j] = p[i][j] * (d_out[i][j] - sum_k d_out[i][k] * p[i][k]).
pub fn softmax_rows_backward(p: &Tensor2, d_out: &Tensor2) -> Tensor2 {
    debug_assert_eq!(p.rows(), d_out.rows());
    debug_assert_eq!(p.cols(), d_out.cols());
    let mut d_in = Tensor2::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let prow = p.row(i);
        let drow = d_out.row(i);
        let dot: f64 = prow.iter().zip(drow).map(|(a, b)| a * b).sum();
        let out = d_in.row_mut(i);
        for ((o, pv), dv) in out.iter_mut().zip(prow).zip(drow) {
            *o = pv * (dv - dot);
        }
    }
    d_in
}

/// Numerically stable logistic function, monotone increasing, range (0, 1).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of sigmoid expressed through its output.
#[inline]
pub fn sigmoid_deriv_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// x * sigmoid(x); smooth activation used in feed-forward blocks.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit norm. Errors when the norm is at or below `eps`,
/// which signals an all-zero or vanishing embedding.
pub fn l2_normalize(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > eps) {
        return Err(Error::DegenerateVector { norm: n, eps });
    }
    let inv = 1.0 / n;
    Ok(v.iter().map(|x| x * inv).collect())
}

/// Backward of l2_normalize: given the unit output `y`, the pre-normalization
/// norm, and upstream `d_y`, returns d_v = (d_y - y * (y . d_y)) / norm.
pub fn l2_normalize_backward(y: &[f64], pre_norm: f64, d_y: &[f64]) -> Vec<f64> {
    let proj = dot(y, d_y);
    let inv = 1.0 / pre_norm;
    y.iter()
        .zip(d_y)
        .map(|(yi, di)| (di - yi * proj) * inv)
        .collect()
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(u: &[f64], v: &[f64], eps: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            op: "cosine_similarity",
            detail: format!("lengths {} vs {}", u.len(), v.len()),
        });
    }
    let nu = norm(u);
    if !(nu > eps) {
        return Err(Error::DegenerateVector { norm: nu, eps });
    }
    let nv = norm(v);
    if !(nv > eps) {
        return Err(Error::DegenerateVector { norm: nv, eps });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
