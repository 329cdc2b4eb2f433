use super::tensor::TokenMatrix;
use crate::error::{Error, Result};

/// Matrix product with a fixed `i, k, j` loop order.
///
/// Every output element accumulates its `k` terms in ascending order
/// starting from zero, so results are reproducible bit for bit.
pub fn matmul(a: &TokenMatrix, b: &TokenMatrix) -> Result<TokenMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = b.cols();
    let mut out = TokenMatrix::zeros(a.rows(), n);
    for i in 0..a.rows() {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &av) in arow.iter().enumerate() {
            let brow = b.row(k);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &TokenMatrix, b: &TokenMatrix) -> Result<TokenMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul_tn {}x{}ᵀ by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, n) = (a.cols(), b.cols());
    let mut out = TokenMatrix::zeros(m, n);
    // k-outer keeps accumulation order ascending in k for every output element.
    for k in 0..a.rows() {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &av) in arow.iter().enumerate() {
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Softmax over each row, with max subtraction.
pub fn softmax_rows(m: &TokenMatrix) -> TokenMatrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Softmax over each column, with max subtraction.
pub fn softmax_cols(m: &TokenMatrix) -> TokenMatrix {
    let cols = m.cols();
    let mut out = m.clone();
    let mut max = vec![f64::NEG_INFINITY; cols];
    for r in 0..m.rows() {
        for (mx, &x) in max.iter_mut().zip(m.row(r)) {
            *mx = mx.max(x);
        }
    }
    let mut sum = vec![0.0; cols];
    for r in 0..out.rows() {
        for ((x, s), mx) in out.row_mut(r).iter_mut().zip(&mut sum).zip(&max) {
            *x = (*x - mx).exp();
            *s += *x;
        }
    }
    for r in 0..out.rows() {
        for (x, s) in out.row_mut(r).iter_mut().zip(&sum) {
            *x /= s;
        }
    }
    out
}

/// Leaky ramp with negative slope 0.01, the pointwise nonlinearity between conv layers.
#[inline]
pub fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.01 * x
    }
}
