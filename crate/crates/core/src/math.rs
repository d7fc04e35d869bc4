//! Dense row-major `f64` matrices and the handful of neural-net primitives the
//! denoiser needs.
//!
//! Every reduction here runs in a fixed order. `matmul` accumulates each output
//! element with fused multiply-adds over the inner index in ascending order,
//! whatever the tiling, so results are bit-identical to a naive fused loop and
//! a gathered subset of rows multiplies to exactly the corresponding rows of the full product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
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

    /// Copies the listed rows, in the listed order, into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Writes row `k` of `source` into row `indices[k]` of `self`.
    pub fn scatter_rows(&mut self, indices: &[usize], source: &Matrix) -> Result<()> {
        if source.rows != indices.len() || source.cols != self.cols {
            return Err(Error::shape(format!(
                "cannot scatter {}x{} into {} rows of width {}",
                source.rows,
                source.cols,
                indices.len(),
                self.cols
            )));
        }
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.rows {
                return Err(Error::shape(format!(
                    "scatter index {i} out of range for {} rows",
                    self.rows
                )));
            }
            self.row_mut(i).copy_from_slice(source.row(k));
        }
        Ok(())
    }

    /// Copies a contiguous block of columns.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in self.row_iter() {
            data.extend_from_slice(&r[start..start + width]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn set_column_block(&mut self, start: usize, block: &Matrix) {
        debug_assert_eq!(block.rows, self.rows);
        let cols = self.cols;
        for (i, src) in block.row_iter().enumerate() {
            self.data[i * cols + start..i * cols + start + block.cols].copy_from_slice(src);
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * *b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        self.map(|x| alpha * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "bias of length {} for {} columns",
                bias.len(),
                self.cols
            )));
        }
        for r in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in r.iter_mut().zip(bias) {
                *x += *b;
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if n == 0 {
        return Matrix::new(m, 0, Vec::new());
    }
    // Grown one row tile at a time.
    let mut out = Vec::with_capacity(m * n);
    let (ad, bd) = (&a.data[..], &b.data[..]);

    // 4x8 output tiles held in registers, with each 8-column panel of `b`
    // packed contiguously. Every element still sums its products over
    // p = 0..k in ascending order, starting from zero.
    let col_tiles = n / 8;
    let mut panels = Vec::with_capacity(col_tiles * k * 8);
    for ct in 0..col_tiles {
        for p in 0..k {
            panels.extend_from_slice(&bd[p * n + ct * 8..p * n + ct * 8 + 8]);
        }
    }
    let row_tiles = m / 4;
    for rt in 0..row_tiles {
        let i = rt * 4;
        out.resize((i + 4) * n, 0.0);
        let a0 = &ad[i * k..(i + 1) * k];
        let a1 = &ad[(i + 1) * k..(i + 2) * k];
        let a2 = &ad[(i + 2) * k..(i + 3) * k];
        let a3 = &ad[(i + 3) * k..(i + 4) * k];
        for (ct, panel) in panels.chunks_exact(k * 8).enumerate() {
            let j = ct * 8;
            let mut acc0 = [0.0f64; 8];
            let mut acc1 = [0.0f64; 8];
            let mut acc2 = [0.0f64; 8];
            let mut acc3 = [0.0f64; 8];
            let lanes = a0.iter().zip(a1).zip(a2).zip(a3);
            for (bv, (((&x0, &x1), &x2), &x3)) in panel.chunks_exact(8).zip(lanes) {
                for c in 0..8 {
                    acc0[c] = x0.mul_add(bv[c], acc0[c]);
                    acc1[c] = x1.mul_add(bv[c], acc1[c]);
                    acc2[c] = x2.mul_add(bv[c], acc2[c]);
                    acc3[c] = x3.mul_add(bv[c], acc3[c]);
                }
            }
            out[i * n + j..i * n + j + 8].copy_from_slice(&acc0);
            out[(i + 1) * n + j..(i + 1) * n + j + 8].copy_from_slice(&acc1);
            out[(i + 2) * n + j..(i + 2) * n + j + 8].copy_from_slice(&acc2);
            out[(i + 3) * n + j..(i + 3) * n + j + 8].copy_from_slice(&acc3);
        }
        for j in col_tiles * 8..n {
            for (r, arow) in [a0, a1, a2, a3].into_iter().enumerate() {
                let mut sum = 0.0;
                for p in 0..k {
                    sum = arow[p].mul_add(bd[p * n + j], sum);
                }
                out[(i + r) * n + j] = sum;
            }
        }
    }
    out.resize(m * n, 0.0);
    for i in row_tiles * 4..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &x) in arow.iter().enumerate() {
            for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o = x.mul_add(*bv, *o);
            }
        }
    }
    Matrix::new(m, n, out)
}

/// Numerically stable softmax over each row.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for row in out.data.chunks_exact_mut(m.cols.max(1)) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = exp(*x - max);
    }
    for x in row.iter() {
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Per-feature affine parameters of a layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn identity(width: usize) -> Self {
        Self {
            gain: vec![1.0; width],
            bias: vec![0.0; width],
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        layer_norm(x, &self.gain, &self.bias, self.eps)
    }
}

/// Normalizes each row to zero mean and unit variance, then applies
/// `gain * x + bias`. The variance is the mean squared deviation from the
/// row mean, computed in a second pass.
pub fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<Matrix> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(Error::shape(format!(
            "layer norm parameters of length {}/{} for width {}",
            gain.len(),
            bias.len(),
            x.cols
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::config(format!("layer norm eps must be positive, got {eps}")));
    }
    let mut out = x.clone();
    for row in out.data.chunks_exact_mut(x.cols.max(1)) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    let u = SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x);
    // 1 + tanh(u) = 2 / (1 + exp(-2u))
    x / (1.0 + exp(-2.0 * u))
}

/// Branch-free `e^x`, within about one ulp of the libm result. Loops over
/// slices auto-vectorize. Saturates to `0` below -708 and to infinity above 709.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    let xc = x.clamp(-708.0, 709.0);
    let t = xc.mul_add(std::f64::consts::LOG2_E, SHIFT);
    let n = t - SHIFT;
    let r = (-n).mul_add(LN2_HI, xc);
    let r = (-n).mul_add(LN2_LO, r);
    // Degree-13 Taylor series in Estrin form; for |r| <= ln(2)/2 the tail is
    // below 1e-18.
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let p01 = r + 1.0;
    let p23 = r.mul_add(1.0 / 6.0, 0.5);
    let p45 = r.mul_add(1.0 / 120.0, 1.0 / 24.0);
    let p67 = r.mul_add(1.0 / 5_040.0, 1.0 / 720.0);
    let p89 = r.mul_add(1.0 / 362_880.0, 1.0 / 40_320.0);
    let p1011 = r.mul_add(1.0 / 39_916_800.0, 1.0 / 3_628_800.0);
    let p1213 = r.mul_add(1.0 / 6_227_020_800.0, 1.0 / 479_001_600.0);
    let lo = r4.mul_add(r2.mul_add(p67, p45), r2.mul_add(p23, p01));
    let hi = r4.mul_add(p1213, r2.mul_add(p1011, p89));
    let p = r8.mul_add(hi, lo);
    let k = (t.to_bits() as i64).wrapping_sub(SHIFT.to_bits() as i64);
    let scale = f64::from_bits(((k + 1023) << 52) as u64);
    let y = p * scale;
    let y = if x > 709.0 { f64::INFINITY } else { y };
    let y = if x < -708.0 { 0.0 } else { y };
    if x.is_nan() {
        x
    } else {
        y
    }
}
