//! Dense row-major f64 arrays and the shared compute kernels.
//!
//! Both the tape and the plain (no-gradient) forward paths call the same
//! kernels, so the two paths produce bitwise-identical values.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense array: shape plus flat row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    /// Construct, checking that the shape matches the data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(DenseArray { shape, data })
    }

    /// Construct and reject NaN/Inf entries.
    pub fn new_checked(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let a = Self::new(shape, data)?;
        a.ensure_finite("DenseArray::new_checked")?;
        Ok(a)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        DenseArray { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: f64) -> Self {
        DenseArray { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        DenseArray { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Matrix from a row-of-rows view.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("from_rows: no rows"));
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::shape("from_rows: ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!("expected scalar, got shape {:?}", self.shape)))
        }
    }

    /// Rows of a 2-D array (a 1-D array counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Columns of a 2-D array (length of a 1-D array).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Same data reinterpreted under a new shape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{context}: element {i} is {v}")));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }
}

// ── kernels ──────────────────────────────────────────────────────────

/// y = x · wᵀ + b, with x: [n, in], w: [out, in], b: [out].
pub(crate) fn affine_forward(x: &DenseArray, w: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (n, din) = (x.rows(), x.cols());
    if w.shape().len() != 2 || w.shape()[1] != din {
        return Err(Error::shape(format!(
            "affine: x cols {} vs w shape {:?}",
            din,
            w.shape()
        )));
    }
    let dout = w.shape()[0];
    if b.numel() != dout {
        return Err(Error::shape(format!("affine: bias len {} vs out {}", b.numel(), dout)));
    }
    let xw = w.data();
    let xb = b.data();
    let mut out = vec![0.0; n * dout];
    for i in 0..n {
        let xi = x.row(i);
        let oi = &mut out[i * dout..(i + 1) * dout];
        for (j, o) in oi.iter_mut().enumerate() {
            let wj = &xw[j * din..(j + 1) * din];
            let mut acc = xb[j];
            for k in 0..din {
                acc += xi[k] * wj[k];
            }
            *o = acc;
        }
    }
    DenseArray::new(vec![n, dout], out)
}

/// Backward of [`affine_forward`]: given dY, accumulate dX, dW, db.
pub(crate) fn affine_backward(
    x: &DenseArray,
    w: &DenseArray,
    dy: &DenseArray,
    dx: &mut DenseArray,
    dw: &mut DenseArray,
    db: &mut DenseArray,
) {
    let (n, din) = (x.rows(), x.cols());
    let dout = w.shape()[0];
    let wd = w.data();
    for i in 0..n {
        let dyi = dy.row(i);
        let xi = x.row(i);
        let dxi = &mut dx.data_mut()[i * din..(i + 1) * din];
        for j in 0..dout {
            let g = dyi[j];
            let wj = &wd[j * din..(j + 1) * din];
            for k in 0..din {
                dxi[k] += g * wj[k];
            }
        }
        for j in 0..dout {
            let g = dyi[j];
            let dwj = &mut dw.data_mut()[j * din..(j + 1) * din];
            for k in 0..din {
                dwj[k] += g * xi[k];
            }
            db.data_mut()[j] += g;
        }
    }
}

/// Numerically stable softplus_β(t) = ln(1 + e^{βt}) / β.
pub(crate) fn softplus(t: f64, beta: f64) -> f64 {
    let z = beta * t;
    if z > 0.0 {
        t + (-z).exp().ln_1p() / beta
    } else {
        z.exp().ln_1p() / beta
    }
}

/// d softplus_β / dt = sigmoid(βt).
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise log-sum-exp of [n, c] into [n].
pub(crate) fn log_sum_exp_rows(x: &DenseArray) -> DenseArray {
    let (n, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; n];
    for i in 0..n {
        let row = x.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out[i] = m + s.ln();
    }
    let _ = c;
    DenseArray::vector(out)
}

/// Softmax of one logit row, written into `out`.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        assert!(DenseArray::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(DenseArray::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DenseArray::new_checked(vec![2], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn affine_matches_hand_computation() {
        let x = DenseArray::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let w = DenseArray::matrix(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let b = DenseArray::vector(vec![0.5, 0.5]);
        let y = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.5, -1.5]);
    }

    #[test]
    fn softplus_values() {
        // softplus_20(0) = ln 2 / 20
        assert!((softplus(0.0, 20.0) - 2f64.ln() / 20.0).abs() < 1e-15);
        // large positive input is ≈ identity
        assert!((softplus(10.0, 20.0) - 10.0).abs() < 1e-12);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
