//! Dense numerical primitives.
//!
//! Activations live in [`Matrix`] (row-major `f64`). Model parameters live in
//! [`WeightMatrix`] (row-major `f32`, the storage dtype of GPT-2-class
//! checkpoints) and are widened to `f64` inside the kernels, so every
//! arithmetic operation runs in double precision.
//!
//! All reductions use a fixed sequential order, so a given input always
//! produces bit-identical output within one build.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("length mismatch in {op}: expected {expected}, got {actual}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("top_k: k = {k} is outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Appends one row. Panics if the width differs.
    pub fn push_row(&mut self, row: &[f64]) {
        if self.rows == 0 && self.cols == 0 {
            self.cols = row.len();
        }
        assert_eq!(row.len(), self.cols, "row width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major `f32` parameter matrix.
#[derive(Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for WeightMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeightMatrix({}x{})", self.rows, self.cols)
    }
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Exact widening to an `f64` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

/// `a · b` with the standard i-k-j loop; each output element accumulates over
/// `k` in increasing order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, KernelError> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a.data[i * k + p];
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += s * bv;
            }
        }
    }
    Ok(out)
}

/// `x · w + bias` where `w` is stored `in × out` (GPT-2 "Conv1D" layout).
pub fn linear(x: &Matrix, w: &WeightMatrix, bias: Option<&[f32]>) -> Result<Matrix, KernelError> {
    if x.cols != w.rows {
        return Err(shape_err("linear", x.shape(), w.shape()));
    }
    if let Some(b) = bias {
        if b.len() != w.cols {
            return Err(KernelError::LengthMismatch {
                op: "linear bias",
                expected: w.cols,
                actual: b.len(),
            });
        }
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX (checked just above).
        return Ok(unsafe { linear_avx(x, w, bias) });
    }
    Ok(linear_impl(x, w, bias))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn linear_avx(x: &Matrix, w: &WeightMatrix, bias: Option<&[f32]>) -> Matrix {
    linear_impl(x, w, bias)
}

#[inline(always)]
fn linear_impl(x: &Matrix, w: &WeightMatrix, bias: Option<&[f32]>) -> Matrix {
    let (m, k, n) = (x.rows, x.cols, w.cols);
    let mut out = Matrix::zeros(m, n);
    // Blocks of rows share each weight row while it is hot in cache. The
    // per-element accumulation order (bias, then k ascending) is unaffected.
    const BLOCK: usize = 4;
    for block_start in (0..m).step_by(BLOCK) {
        let block_end = (block_start + BLOCK).min(m);
        if let Some(b) = bias {
            for i in block_start..block_end {
                for (o, &bv) in out.data[i * n..(i + 1) * n].iter_mut().zip(b) {
                    *o = f64::from(bv);
                }
            }
        }
        for p in 0..k {
            let w_row = &w.data[p * n..(p + 1) * n];
            for i in block_start..block_end {
                let s = x.data[i * k + p];
                axpy_f32(&mut out.data[i * n..(i + 1) * n], s, w_row);
            }
        }
    }
    out
}

/// `x · wᵀ` where `w` is stored `out × in` (the LM-head layout, `|V| × d`).
///
/// Each output element equals `dot_f32(x.row(i), w.row(j))` bit for bit.
pub fn matmul_transposed(x: &Matrix, w: &WeightMatrix) -> Result<Matrix, KernelError> {
    if x.cols != w.cols {
        return Err(shape_err("matmul_transposed", x.shape(), w.shape()));
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX (checked just above).
        return Ok(unsafe { matmul_transposed_avx(x, w) });
    }
    Ok(matmul_transposed_impl(x, w))
}

/// Input rows are taken in groups of 8, then 4, then 1.
fn row_groups(m: usize) -> impl Iterator<Item = (usize, usize)> {
    let eights = m / 8 * 8;
    let fours = eights + (m - eights) / 4 * 4;
    (0..eights)
        .step_by(8)
        .map(|i| (i, 8))
        .chain((eights..fours).step_by(4).map(|i| (i, 4)))
        .chain((fours..m).map(|i| (i, 1)))
}

// A chunk of weight rows stays in L2 while each small group of input rows
// (L1-resident) passes over it.
const CHUNK: usize = 32;

/// Explicit 256-bit lanes holding the same four partial sums as
/// [`dot_f32`]. No fused multiply-add, so results match the portable build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn matmul_transposed_avx(x: &Matrix, w: &WeightMatrix) -> Matrix {
    let (m, n) = (x.rows, w.rows);
    let mut out = Matrix::zeros(m, n);
    for chunk_start in (0..n).step_by(CHUNK) {
        let chunk = chunk_start..(chunk_start + CHUNK).min(n);
        for (i, size) in row_groups(m) {
            match size {
                8 => dot_block_avx::<8>(x, w, i, chunk.clone(), &mut out.data),
                4 => dot_block_avx::<4>(x, w, i, chunk.clone(), &mut out.data),
                _ => dot_block_avx::<1>(x, w, i, chunk.clone(), &mut out.data),
            }
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn dot_block_avx<const R: usize>(
    x: &Matrix,
    w: &WeightMatrix,
    first_row: usize,
    cols: std::ops::Range<usize>,
    out: &mut [f64],
) {
    use std::arch::x86_64::*;
    let k = x.cols;
    let len = k / 4 * 4;
    let rows: [&[f64]; R] = std::array::from_fn(|r| x.row(first_row + r));
    let n = w.rows;
    for j in cols {
        let b = w.row(j);
        let mut acc = [_mm256_setzero_pd(); R];
        for (p, cb) in (0..len).step_by(4).zip(b.chunks_exact(4)) {
            // Loads go through fixed-size arrays: the `loadu` intrinsics copy
            // via `copy_nonoverlapping`, whose debug-build precondition check
            // would otherwise dominate this loop in test builds.
            let cb: [f32; 4] = [cb[0], cb[1], cb[2], cb[3]];
            let bb = _mm256_cvtps_pd(std::mem::transmute::<[f32; 4], __m128>(cb));
            for r in 0..R {
                let ca: [f64; 4] = rows[r][p..p + 4].try_into().expect("four lanes");
                let a = std::mem::transmute::<[f64; 4], __m256d>(ca);
                acc[r] = _mm256_add_pd(acc[r], _mm256_mul_pd(a, bb));
            }
        }
        for r in 0..R {
            let lanes = std::mem::transmute::<__m256d, [f64; 4]>(acc[r]);
            let mut sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
            for p in len..k {
                sum += rows[r][p] * f64::from(b[p]);
            }
            out[(first_row + r) * n + j] = sum;
        }
    }
}

fn matmul_transposed_impl(x: &Matrix, w: &WeightMatrix) -> Matrix {
    let (m, n) = (x.rows, w.rows);
    let mut out = Matrix::zeros(m, n);
    for chunk_start in (0..n).step_by(CHUNK) {
        let chunk = chunk_start..(chunk_start + CHUNK).min(n);
        for (i, size) in row_groups(m) {
            match size {
                8 => dot_block::<8>(x, w, i, chunk.clone(), &mut out.data),
                4 => dot_block::<4>(x, w, i, chunk.clone(), &mut out.data),
                _ => dot_block::<1>(x, w, i, chunk.clone(), &mut out.data),
            }
        }
    }
    out
}

/// `out[i + r, j] = dot_f32(x.row(i + r), w.row(j))` for `r < R`, `j` in
/// `cols`, with the accumulation order of [`dot_f32`].
#[inline(always)]
fn dot_block<const R: usize>(
    x: &Matrix,
    w: &WeightMatrix,
    first_row: usize,
    cols: std::ops::Range<usize>,
    out: &mut [f64],
) {
    let k = x.cols;
    let len = k / 4 * 4;
    let rows: [&[f64]; R] = std::array::from_fn(|r| x.row(first_row + r));
    let n = w.rows;
    for j in cols {
        let b = w.row(j);
        let mut acc = [[0.0f64; 4]; R];
        for p in (0..len).step_by(4) {
            let bb = [
                f64::from(b[p]),
                f64::from(b[p + 1]),
                f64::from(b[p + 2]),
                f64::from(b[p + 3]),
            ];
            for r in 0..R {
                let a: &[f64; 4] = rows[r][p..p + 4].try_into().expect("4 elements");
                for l in 0..4 {
                    acc[r][l] += a[l] * bb[l];
                }
            }
        }
        for r in 0..R {
            let mut sum = (acc[r][0] + acc[r][1]) + (acc[r][2] + acc[r][3]);
            for p in len..k {
                sum += rows[r][p] * f64::from(b[p]);
            }
            out[(first_row + r) * n + j] = sum;
        }
    }
}

/// `wᵀ · coeffs`, i.e. `Σ_j coeffs[j] · w[j, :]`, accumulated over `j`
/// ascending. Rows with a zero coefficient are skipped.
pub fn weighted_row_sum(w: &WeightMatrix, coeffs: &[f64]) -> Result<Vec<f64>, KernelError> {
    if coeffs.len() != w.rows {
        return Err(KernelError::LengthMismatch {
            op: "weighted_row_sum",
            expected: w.rows,
            actual: coeffs.len(),
        });
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX (checked just above).
        return Ok(unsafe { weighted_row_sum_avx(w, coeffs) });
    }
    Ok(weighted_row_sum_impl(w, coeffs))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn weighted_row_sum_avx(w: &WeightMatrix, coeffs: &[f64]) -> Vec<f64> {
    weighted_row_sum_impl(w, coeffs)
}

#[inline(always)]
fn weighted_row_sum_impl(w: &WeightMatrix, coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols];
    for (j, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        axpy_f32(&mut out, c, w.row(j));
    }
    out
}

/// `w · v` for `w` stored `rows × cols` and `v` of length `cols`.
pub fn matvec(w: &WeightMatrix, v: &[f64]) -> Result<Vec<f64>, KernelError> {
    if v.len() != w.cols {
        return Err(KernelError::LengthMismatch {
            op: "matvec",
            expected: w.cols,
            actual: v.len(),
        });
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX (checked just above).
        return Ok(unsafe { matvec_avx(w, v) });
    }
    Ok(matvec_impl(w, v))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn matvec_avx(w: &WeightMatrix, v: &[f64]) -> Vec<f64> {
    matvec_impl(w, v)
}

#[inline(always)]
fn matvec_impl(w: &WeightMatrix, v: &[f64]) -> Vec<f64> {
    (0..w.rows).map(|j| dot_f32(v, w.row(j))).collect()
}

/// Dot product of an `f64` vector with an `f32` vector. Four interleaved
/// partial sums, combined as `(s0 + s1) + (s2 + s3)` then the tail.
#[inline(always)]
pub fn dot_f32(a: &[f64], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let a_chunks = a.chunks_exact(4);
    let b_chunks = b.chunks_exact(4);
    let a_tail = a_chunks.remainder();
    let b_tail = b_chunks.remainder();
    for (ca, cb) in a_chunks.zip(b_chunks) {
        acc[0] += ca[0] * f64::from(cb[0]);
        acc[1] += ca[1] * f64::from(cb[1]);
        acc[2] += ca[2] * f64::from(cb[2]);
        acc[3] += ca[3] * f64::from(cb[3]);
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a_tail.iter().zip(b_tail) {
        sum += x * f64::from(*y);
    }
    sum
}

/// Plain sequential dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

#[inline(always)]
fn axpy_f32(y: &mut [f64], a: f64, x: &[f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * f64::from(xi);
    }
}

/// Numerically stable softmax of each row (per-row max subtraction).
pub fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(row)` with max shift.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Per-row layer normalization. Mean and variance come from a single
/// Welford pass; the variance is the biased (population) estimate.
pub fn layer_norm(x: &Matrix, gain: &[f32], bias: &[f32], eps: f64) -> Result<Matrix, KernelError> {
    for (op, v) in [("layer_norm gain", gain), ("layer_norm bias", bias)] {
        if v.len() != x.cols {
            return Err(KernelError::LengthMismatch {
                op,
                expected: x.cols,
                actual: v.len(),
            });
        }
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        layer_norm_row(x.row(i), gain, bias, eps, out.row_mut(i));
    }
    Ok(out)
}

fn layer_norm_row(x: &[f64], gain: &[f32], bias: &[f32], eps: f64, out: &mut [f64]) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (count, &v) in x.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (count + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / x.len() as f64;
    let inv = 1.0 / (var + eps).sqrt();
    for (((o, &v), &g), &b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = (v - mean) * inv * f64::from(g) + f64::from(b);
    }
}

/// Tanh-approximated GELU as used by GPT-2.
pub fn gelu_scalar(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gelu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    gelu_in_place(&mut out);
    out
}

pub fn gelu_in_place(x: &mut Matrix) {
    for v in x.data.iter_mut() {
        *v = gelu_scalar(*v);
    }
}

/// Index of the largest value; ties go to the lowest index. Panics on an
/// empty slice.
pub fn argmax_row(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of empty row");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest values, sorted by value descending with ties
/// broken by lowest index.
pub fn top_k(values: &[f64], k: usize) -> Result<Vec<usize>, KernelError> {
    if k == 0 || k > values.len() {
        return Err(KernelError::KOutOfRange { k, len: values.len() });
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |&a: &usize, &b: &usize| values[b].total_cmp(&values[a]).then(a.cmp(&b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    Ok(idx)
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left_rows: left.0,
        left_cols: left.1,
        right_rows: right.0,
        right_cols: right.1,
    }
}
