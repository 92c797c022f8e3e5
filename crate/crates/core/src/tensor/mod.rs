//! Dense f64 tensors and the numerical kernels behind them.
//!
//! Tensors are row-major `Vec<f64>` buffers with an explicit shape. The
//! methods here are the *eager* operation set: they validate shapes, run the
//! kernel, and check the result for NaN/Inf where an operation can produce
//! one from finite inputs (a non-finite value is a hard [`Error::Numeric`]).
//! The reverse-mode tape in [`tape`] records these same kernels, so eager
//! and taped execution are bit-identical by construction.
//!
//! Matrix multiplication is delegated to the `matrixmultiply` crate's
//! `dgemm`, everything else is hand-rolled.

pub mod init;
pub mod rnn;
pub mod tape;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

// ── construction ────────────────────────────────────────────────────────────

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Rank-0-like scalar, represented as shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::config(format!(
                "from_vec: shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Matrix whose row `r` is produced by `f(r)`.
    pub fn from_rows(rows: usize, cols: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = f(r);
            if row.len() != cols {
                return Err(Error::config(format!(
                    "from_rows: row {} has {} elements, expected {}",
                    r,
                    row.len(),
                    cols
                )));
            }
            data.extend_from_slice(&row);
        }
        Tensor::from_vec(&[rows, cols], data)
    }
}

// ── access ──────────────────────────────────────────────────────────────────

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Sole element of a scalar-shaped tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::config(format!(
                "item: tensor has shape {:?}, not a scalar",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    fn as_matrix(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::config(format!(
                "{}: expected a rank-2 tensor, got shape {:?}",
                op, self.shape
            ))),
        }
    }

    /// Number of rows when viewed as a matrix; rank-1 counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [_] => 1,
            [r, ..] => *r,
            _ => 0,
        }
    }

    /// Number of columns when viewed as a matrix; rank-1 is all columns.
    pub fn cols(&self) -> usize {
        match self.shape.as_slice() {
            [n] => *n,
            [_, c] => *c,
            _ => 0,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite_all(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::config(format!(
                "reshape: cannot view {:?} as {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }
}

fn ensure_finite(op: &str, t: &Tensor) -> Result<()> {
    if t.is_finite_all() {
        Ok(())
    } else {
        Err(Error::numeric(format!("{}: produced a non-finite value", op)))
    }
}

fn ensure_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape == b.shape {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{}: shape mismatch {:?} vs {:?}",
            op, a.shape, b.shape
        )))
    }
}

// ── elementwise ─────────────────────────────────────────────────────────────

impl Tensor {
    fn zip_map(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        ensure_same_shape(op, self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let out = self.zip_map(other, "add", |a, b| a + b)?;
        ensure_finite("add", &out)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let out = self.zip_map(other, "sub", |a, b| a - b)?;
        ensure_finite("sub", &out)?;
        Ok(out)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let out = self.zip_map(other, "mul", |a, b| a * b)?;
        ensure_finite("mul", &out)?;
        Ok(out)
    }

    /// Elementwise minimum; bounded by its inputs, so no finiteness check.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "minimum", f64::min)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(Error::config(format!("clamp: lo {} > hi {}", lo, hi)));
        }
        Ok(self.map(|v| v.clamp(lo, hi)))
    }

    pub fn scale(&self, k: f64) -> Result<Tensor> {
        let out = self.map(|v| v * k);
        ensure_finite("scale", &out)?;
        Ok(out)
    }

    pub fn add_scalar(&self, k: f64) -> Result<Tensor> {
        let out = self.map(|v| v + k);
        ensure_finite("add_scalar", &out)?;
        Ok(out)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        Ok(self.map(f64::tanh))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        Ok(self.map(sigmoid_stable))
    }

    pub fn relu(&self) -> Result<Tensor> {
        Ok(self.map(|v| if v > 0.0 { v } else { 0.0 }))
    }

    pub fn exp(&self) -> Result<Tensor> {
        let out = self.map(f64::exp);
        ensure_finite("exp", &out)?;
        Ok(out)
    }

    pub fn ln(&self) -> Result<Tensor> {
        let out = self.map(f64::ln);
        ensure_finite("ln", &out)?;
        Ok(out)
    }
}

pub(crate) fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ── row/column broadcasts ───────────────────────────────────────────────────

impl Tensor {
    fn as_row_vector(&self, op: &str, cols: usize) -> Result<&[f64]> {
        let ok = matches!(self.shape.as_slice(), [n] if *n == cols)
            || matches!(self.shape.as_slice(), [1, n] if *n == cols);
        if !ok {
            return Err(Error::config(format!(
                "{}: expected a length-{} vector, got shape {:?}",
                op, cols, self.shape
            )));
        }
        Ok(&self.data)
    }

    fn as_col_vector(&self, op: &str, rows: usize) -> Result<&[f64]> {
        let ok = matches!(self.shape.as_slice(), [n] if *n == rows)
            || matches!(self.shape.as_slice(), [n, 1] if *n == rows);
        if !ok {
            return Err(Error::config(format!(
                "{}: expected a length-{} column, got shape {:?}",
                op, rows, self.shape
            )));
        }
        Ok(&self.data)
    }

    /// Add a row vector to every row of a matrix.
    pub fn add_row(&self, v: &Tensor) -> Result<Tensor> {
        let (_, c) = self.as_matrix("add_row")?;
        let vv = v.as_row_vector("add_row", c)?;
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (o, &b) in row.iter_mut().zip(vv) {
                *o += b;
            }
        }
        ensure_finite("add_row", &out)?;
        Ok(out)
    }

    /// Multiply every row of a matrix elementwise by a row vector.
    pub fn mul_row(&self, v: &Tensor) -> Result<Tensor> {
        let (_, c) = self.as_matrix("mul_row")?;
        let vv = v.as_row_vector("mul_row", c)?;
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (o, &b) in row.iter_mut().zip(vv) {
                *o *= b;
            }
        }
        ensure_finite("mul_row", &out)?;
        Ok(out)
    }

    /// Scale each row of a matrix by the matching entry of a column vector.
    pub fn mul_col(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = self.as_matrix("mul_col")?;
        let vv = v.as_col_vector("mul_col", r)?;
        let mut out = self.clone();
        for (row, &k) in out.data.chunks_exact_mut(c).zip(vv) {
            for o in row.iter_mut() {
                *o *= k;
            }
        }
        ensure_finite("mul_col", &out)?;
        Ok(out)
    }
}

// ── reductions ──────────────────────────────────────────────────────────────

impl Tensor {
    pub fn sum(&self) -> Result<Tensor> {
        let out = Tensor::scalar(self.data.iter().sum());
        ensure_finite("sum", &out)?;
        Ok(out)
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::config("mean: empty tensor".to_string()));
        }
        let out = Tensor::scalar(self.data.iter().sum::<f64>() / self.numel() as f64);
        ensure_finite("mean", &out)?;
        Ok(out)
    }

    /// Row sums of a matrix, shape `[rows, 1]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, c) = self.as_matrix("sum_rows")?;
        let data: Vec<f64> = self
            .data
            .chunks_exact(c)
            .map(|row| row.iter().sum())
            .collect();
        let out = Tensor::from_vec(&[r, 1], data)?;
        ensure_finite("sum_rows", &out)?;
        Ok(out)
    }

    /// Column sums of a matrix, shape `[cols]`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (_, c) = self.as_matrix("sum_cols")?;
        let mut data = vec![0.0; c];
        for row in self.data.chunks_exact(c) {
            for (acc, &v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let out = Tensor::from_vec(&[c], data)?;
        ensure_finite("sum_cols", &out)?;
        Ok(out)
    }
}

// ── matrix multiplication ───────────────────────────────────────────────────

/// `alpha * A(m,k) . B(k,n)` with explicit row/col strides for each operand,
/// accumulated into a fresh output. All transposition variants reduce to
/// stride choices, so `matrixmultiply::dgemm` serves all three entry points.
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return out;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

impl Tensor {
    /// `self[m,k] . other[k,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(Error::config(format!(
                "matmul: inner dims differ, {:?} . {:?}",
                self.shape, other.shape
            )));
        }
        let data = gemm_strided(m, k, n, &self.data, k as isize, 1, &other.data, n as isize, 1);
        let out = Tensor::from_vec(&[m, n], data)?;
        ensure_finite("matmul", &out)?;
        Ok(out)
    }

    /// `self[m,k] . other[n,k]^T`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul_nt")?;
        let (n, k2) = other.as_matrix("matmul_nt")?;
        if k != k2 {
            return Err(Error::config(format!(
                "matmul_nt: inner dims differ, {:?} . {:?}^T",
                self.shape, other.shape
            )));
        }
        let data = gemm_strided(m, k, n, &self.data, k as isize, 1, &other.data, 1, k as isize);
        let out = Tensor::from_vec(&[m, n], data)?;
        ensure_finite("matmul_nt", &out)?;
        Ok(out)
    }

    /// `self[k,m]^T . other[k,n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.as_matrix("matmul_tn")?;
        let (k2, n) = other.as_matrix("matmul_tn")?;
        if k != k2 {
            return Err(Error::config(format!(
                "matmul_tn: inner dims differ, {:?}^T . {:?}",
                self.shape, other.shape
            )));
        }
        let data = gemm_strided(m, k, n, &self.data, 1, m as isize, &other.data, n as isize, 1);
        let out = Tensor::from_vec(&[m, n], data)?;
        ensure_finite("matmul_tn", &out)?;
        Ok(out)
    }
}

// ── concatenation and slicing ───────────────────────────────────────────────

impl Tensor {
    /// Stack matrices vertically; all parts must share a column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::config("concat_rows: no parts".to_string()));
        }
        let (_, c) = parts[0].as_matrix("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = p.as_matrix("concat_rows")?;
            if pc != c {
                return Err(Error::config(format!(
                    "concat_rows: column mismatch {} vs {}",
                    pc, c
                )));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(&[rows, c], data)
    }

    /// Concatenate matrices side by side; all parts must share a row count.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::config("concat_cols: no parts".to_string()));
        }
        let (r, _) = parts[0].as_matrix("concat_cols")?;
        let mut cols = 0;
        for p in parts {
            let (pr, pc) = p.as_matrix("concat_cols")?;
            if pr != r {
                return Err(Error::config(format!(
                    "concat_cols: row mismatch {} vs {}",
                    pr, r
                )));
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for row in 0..r {
            for p in parts {
                data.extend_from_slice(p.row(row));
            }
        }
        Tensor::from_vec(&[r, cols], data)
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = self.as_matrix("slice_cols")?;
        if start + len > c {
            return Err(Error::config(format!(
                "slice_cols: [{}, {}) out of {} columns",
                start,
                start + len,
                c
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in self.data.chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Tensor::from_vec(&[r, len], data)
    }

    /// Gather rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.as_matrix("select_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::config(format!(
                    "select_rows: index {} out of {} rows",
                    i, r
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_vec(&[idx.len(), c], data)
    }
}

// ── softmax family and normalization ────────────────────────────────────────

impl Tensor {
    /// Numerically stable per-row softmax.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (_, c) = self.as_matrix("softmax_rows")?;
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        Ok(out)
    }

    /// Per-row `log(sum(exp(x)))`, shape `[rows, 1]`.
    pub fn logsumexp_rows(&self) -> Result<Tensor> {
        let (r, c) = self.as_matrix("logsumexp_rows")?;
        let data: Vec<f64> = self.data.chunks_exact(c).map(logsumexp_slice).collect();
        let out = Tensor::from_vec(&[r, 1], data)?;
        ensure_finite("logsumexp_rows", &out)?;
        Ok(out)
    }

    /// `log(sum(exp(x)))` over every element, as a scalar tensor.
    pub fn logsumexp(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::config("logsumexp: empty tensor".to_string()));
        }
        let out = Tensor::scalar(logsumexp_slice(&self.data));
        ensure_finite("logsumexp", &out)?;
        Ok(out)
    }

    /// Rows rescaled to unit L2 norm; `eps` regularizes the norm so the
    /// operation stays differentiable at the origin.
    pub fn l2_normalize_rows(&self, eps: f64) -> Result<Tensor> {
        if !(eps > 0.0) {
            return Err(Error::config("l2_normalize_rows: eps must be > 0".to_string()));
        }
        let (_, c) = self.as_matrix("l2_normalize_rows")?;
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            let n = row_norm(row, eps);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        ensure_finite("l2_normalize_rows", &out)?;
        Ok(out)
    }
}

pub(crate) fn row_norm(row: &[f64], eps: f64) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

pub(crate) fn logsumexp_slice(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

// ── 2-D convolution ─────────────────────────────────────────────────────────

pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub batched_input: bool,
}

pub(crate) fn conv_dims(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<ConvDims> {
    if stride == 0 {
        return Err(Error::config("conv2d: stride must be >= 1".to_string()));
    }
    let (batch, in_ch, in_h, in_w, batched_input) = match input.shape.as_slice() {
        [c, h, w] => (1, *c, *h, *w, false),
        [b, c, h, w] => (*b, *c, *h, *w, true),
        _ => {
            return Err(Error::config(format!(
                "conv2d: input must be [C,H,W] or [B,C,H,W], got {:?}",
                input.shape
            )))
        }
    };
    let (out_ch, k_in_ch, k_h, k_w) = match kernels.shape.as_slice() {
        [f, c, kh, kw] => (*f, *c, *kh, *kw),
        _ => {
            return Err(Error::config(format!(
                "conv2d: kernels must be [F,C,kh,kw], got {:?}",
                kernels.shape
            )))
        }
    };
    if k_in_ch != in_ch {
        return Err(Error::config(format!(
            "conv2d: input has {} channels, kernels expect {}",
            in_ch, k_in_ch
        )));
    }
    if k_h > in_h || k_w > in_w {
        return Err(Error::config(format!(
            "conv2d: kernel {}x{} larger than input {}x{}",
            k_h, k_w, in_h, in_w
        )));
    }
    Ok(ConvDims {
        batch,
        in_ch,
        in_h,
        in_w,
        out_ch,
        k_h,
        k_w,
        out_h: (in_h - k_h) / stride + 1,
        out_w: (in_w - k_w) / stride + 1,
        batched_input,
    })
}

/// Valid (no padding) strided cross-correlation. `bias`, when present, is a
/// per-output-channel offset of shape `[F]`.
pub(crate) fn conv2d_kernel(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor> {
    let d = conv_dims(input, kernels, stride)?;
    if let Some(b) = bias {
        if b.shape() != [d.out_ch] {
            return Err(Error::config(format!(
                "conv2d: bias shape {:?}, expected [{}]",
                b.shape(),
                d.out_ch
            )));
        }
    }
    let mut out = vec![0.0; d.batch * d.out_ch * d.out_h * d.out_w];
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    for b in 0..d.batch {
        let in_base = b * d.in_ch * in_plane;
        for f in 0..d.out_ch {
            let k_base = f * d.in_ch * d.k_h * d.k_w;
            let b0 = bias.map_or(0.0, |t| t.data[f]);
            let out_base = (b * d.out_ch + f) * out_plane;
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let mut acc = b0;
                    for c in 0..d.in_ch {
                        let ib = in_base + c * in_plane;
                        let kb = k_base + c * d.k_h * d.k_w;
                        for ky in 0..d.k_h {
                            let iy = oy * stride + ky;
                            let irow = ib + iy * d.in_w + ox * stride;
                            let krow = kb + ky * d.k_w;
                            for kx in 0..d.k_w {
                                acc += input.data[irow + kx] * kernels.data[krow + kx];
                            }
                        }
                    }
                    out[out_base + oy * d.out_w + ox] = acc;
                }
            }
        }
    }
    let shape: Vec<usize> = if d.batched_input {
        vec![d.batch, d.out_ch, d.out_h, d.out_w]
    } else {
        vec![d.out_ch, d.out_h, d.out_w]
    };
    let out = Tensor::from_vec(&shape, out)?;
    ensure_finite("conv2d", &out)?;
    Ok(out)
}

impl Tensor {
    /// Valid strided 2-D convolution (cross-correlation) without bias.
    pub fn conv2d(&self, kernels: &Tensor, stride: usize) -> Result<Tensor> {
        conv2d_kernel(self, kernels, None, stride)
    }

    /// Same convolution with a per-output-channel bias.
    pub fn conv2d_bias(&self, kernels: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        conv2d_kernel(self, kernels, Some(bias), stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_small_known_product() {
        // [[1,2],[3,4]] . [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree_with_explicit_transpose() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap();
        let b = Tensor::from_vec(&[4, 3], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        // a . b^T via matmul_nt vs manual.
        let nt = a.matmul_nt(&b).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                let manual: f64 = (0..3).map(|k| a.at2(r, k) * b.at2(c, k)).sum();
                assert_relative_eq!(nt.at2(r, c), manual, max_relative = 1e-12);
            }
        }
        // a^T . a via matmul_tn vs manual.
        let tn = a.matmul_tn(&a).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let manual: f64 = (0..2).map(|k| a.at2(k, r) * a.at2(k, c)).sum();
                assert_relative_eq!(tn.at2(r, c), manual, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 5]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn non_finite_result_is_a_numeric_error() {
        let a = Tensor::filled(&[2, 2], 1e308);
        let err = a.add(&a).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
        let b = Tensor::filled(&[2], -1.0);
        assert!(b.ln().is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_direct_formula() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]).unwrap();
        let s = x.softmax_rows().unwrap();
        for r in 0..2 {
            let total: f64 = s.row(r).iter().sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
        // First row against the naive formula (safe magnitudes).
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for c in 0..3 {
            assert_relative_eq!(s.at2(0, c), ((c + 1) as f64).exp() / z, epsilon = 1e-12);
        }
        // Second row contains 1000; stability means no NaN and argmax ~ 1.
        assert!(s.at2(1, 2) > 0.999_999);
    }

    #[test]
    fn logsumexp_matches_naive_formula_and_survives_large_inputs() {
        let x = Tensor::from_vec(&[3], vec![0.1, -0.4, 2.0]).unwrap();
        let naive = (0.1f64.exp() + (-0.4f64).exp() + 2.0f64.exp()).ln();
        assert_relative_eq!(x.logsumexp().unwrap().item().unwrap(), naive, epsilon = 1e-12);

        let big = Tensor::from_vec(&[2], vec![1000.0, 1000.0]).unwrap();
        let expect = 1000.0 + 2.0f64.ln();
        assert_relative_eq!(big.logsumexp().unwrap().item().unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn l2_normalize_rows_gives_unit_rows() {
        let x = Tensor::from_vec(&[2, 3], vec![3.0, 4.0, 0.0, -1.0, 2.0, 2.0]).unwrap();
        let y = x.l2_normalize_rows(1e-12).unwrap();
        for r in 0..2 {
            let n: f64 = y.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(n, 1.0, epsilon = 1e-9);
        }
        assert_relative_eq!(y.at2(0, 0), 0.6, epsilon = 1e-9);
        assert_relative_eq!(y.at2(0, 1), 0.8, epsilon = 1e-9);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let cat = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 5]);
        assert_eq!(cat.row(0), &[1.0, 2.0, 5.0, 6.0, 7.0]);
        let back = cat.slice_cols(2, 3).unwrap();
        assert_eq!(back.data(), b.data());

        let stacked = Tensor::concat_rows(&[&a, &a]).unwrap();
        assert_eq!(stacked.shape(), &[4, 2]);
        assert_eq!(stacked.row(3), &[3.0, 4.0]);
    }

    #[test]
    fn broadcast_ops_match_manual_loops() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = Tensor::from_vec(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = Tensor::from_vec(&[2, 1], vec![2.0, -1.0]).unwrap();
        assert_eq!(a.add_row(&v).unwrap().row(1), &[14.0, 25.0, 36.0]);
        assert_eq!(a.mul_row(&v).unwrap().row(0), &[10.0, 40.0, 90.0]);
        assert_eq!(a.mul_col(&c).unwrap().row(1), &[-4.0, -5.0, -6.0]);
    }

    #[test]
    fn conv2d_known_values_and_stride() {
        // 1x4x4 input of ascending values, single 2x2 ones kernel, stride 2:
        // output cells are sums of disjoint 2x2 blocks.
        let input = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let k = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let out = input.conv2d(&k, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[10.0, 18.0, 42.0, 50.0]);
    }

    #[test]
    fn conv2d_multi_channel_accumulates_across_channels() {
        let input = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0])
            .unwrap();
        let mut kdata = vec![0.0; 8];
        kdata[0] = 1.0; // channel 0 picks top-left
        kdata[7] = 1.0; // channel 1 picks bottom-right
        let k = Tensor::from_vec(&[1, 2, 2, 2], kdata).unwrap();
        let out = input.conv2d(&k, 1).unwrap();
        assert_eq!(out.data(), &[41.0]);
    }

    #[test]
    fn select_rows_gathers_in_order() {
        let a = Tensor::from_vec(&[3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let g = a.select_rows(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert!(a.select_rows(&[3]).is_err());
    }
}
