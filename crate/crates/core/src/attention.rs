//! Attention primitives.
//!
//! * [`masked_window_attention`]: overlapped `K x K` windows at stride 1,
//!   one window per query token, keys restricted to anchor tokens.
//! * [`vanilla_global_attention`]: `softmax_rows(q kᵀ / sqrt(d)) v`,
//!   quadratic in the token count. Kept as a reference.
//! * [`linear_global_attention`]: `softmax_rows(q) (softmax_cols(k)ᵀ v)`,
//!   linear in the token count. The implicit map
//!   `softmax_rows(q) softmax_cols(k)ᵀ` is row-stochastic but never formed.

use crate::checkerboard::is_anchor;
use crate::error::{Error, Result};
use crate::numerics::{conv2d, matmul, matmul_tn, softmax_cols, softmax_rows, ConvWeights, Tensor4, TokenMatrix};

/// Queries, keys and values for one attention call.
#[derive(Debug, Clone)]
pub struct Qkv {
    pub q: TokenMatrix,
    pub k: TokenMatrix,
    pub v: TokenMatrix,
}

impl Qkv {
    pub fn new(q: TokenMatrix, k: TokenMatrix, v: TokenMatrix) -> Result<Self> {
        if q.cols() != k.cols() {
            return Err(Error::Shape(format!(
                "query width {} != key width {}",
                q.cols(),
                k.cols()
            )));
        }
        if k.rows() != v.rows() {
            return Err(Error::Shape(format!(
                "{} keys but {} values",
                k.rows(),
                v.rows()
            )));
        }
        Ok(Qkv { q, k, v })
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }
}

/// Live/peak tally of intermediate f64 elements held by a kernel.
#[derive(Debug, Default, Clone, Copy)]
struct ElementTally {
    live: usize,
    peak: usize,
}

impl ElementTally {
    fn alloc(&mut self, n: usize) {
        self.live += n;
        self.peak = self.peak.max(self.live);
    }

    fn free(&mut self, n: usize) {
        self.live -= n;
    }
}

/// Result of an instrumented attention call.
#[derive(Debug, Clone)]
pub struct Measured {
    pub output: TokenMatrix,
    /// Peak number of f64 elements simultaneously allocated by the kernel,
    /// output included.
    pub peak_elements: usize,
}

/// Quadratic-order attention with the `1/sqrt(d)` logit scale. Materialises
/// the full `Lq x Lk` map.
pub fn vanilla_global_attention(qkv: &Qkv) -> Result<TokenMatrix> {
    vanilla_global_attention_measured(qkv).map(|m| m.output)
}

pub fn vanilla_global_attention_measured(qkv: &Qkv) -> Result<Measured> {
    let mut tally = ElementTally::default();
    let scale = 1.0 / (qkv.head_dim().max(1) as f64).sqrt();
    // q · kᵀ, each logit an ascending-order dot product.
    let (lq, lk) = (qkv.q.rows(), qkv.k.rows());
    let mut map = TokenMatrix::zeros(lq, lk);
    tally.alloc(lq * lk);
    for i in 0..lq {
        let qi = qkv.q.row(i);
        let row = map.row_mut(i);
        for (j, out) in row.iter_mut().enumerate() {
            let kj = qkv.k.row(j);
            let mut acc = 0.0;
            for (a, b) in qi.iter().zip(kj) {
                acc += a * b;
            }
            *out = acc * scale;
        }
    }
    let probs = softmax_rows(&map);
    tally.alloc(lq * lk);
    drop(map);
    tally.free(lq * lk);
    let output = matmul(&probs, &qkv.v)?;
    tally.alloc(output.rows() * output.cols());
    Ok(Measured {
        output,
        peak_elements: tally.peak,
    })
}

/// Decomposed-softmax attention, `softmax_rows(q) · (softmax_cols(k)ᵀ · v)`.
///
/// The bracketed `d x dv` context is formed first, so time and storage are
/// linear in the token counts. No logit scaling is applied.
pub fn linear_global_attention(qkv: &Qkv) -> Result<TokenMatrix> {
    linear_global_attention_measured(qkv).map(|m| m.output)
}

pub fn linear_global_attention_measured(qkv: &Qkv) -> Result<Measured> {
    let mut tally = ElementTally::default();
    let ks = softmax_cols(&qkv.k);
    tally.alloc(ks.rows() * ks.cols());
    let context = matmul_tn(&ks, &qkv.v)?;
    tally.alloc(context.rows() * context.cols());
    tally.free(ks.rows() * ks.cols());
    drop(ks);
    let qs = softmax_rows(&qkv.q);
    tally.alloc(qs.rows() * qs.cols());
    let output = matmul(&qs, &context)?;
    tally.alloc(output.rows() * output.cols());
    Ok(Measured {
        output,
        peak_elements: tally.peak,
    })
}

/// The decomposed-softmax kernel bracketed the other way:
/// `(softmax_rows(q) · softmax_cols(k)ᵀ) · v`. Materialises the `Lq x Lk`
/// map; reference for [`linear_global_attention`].
pub fn materialized_linear_attention(qkv: &Qkv) -> Result<TokenMatrix> {
    materialized_linear_attention_measured(qkv).map(|m| m.output)
}

pub fn materialized_linear_attention_measured(qkv: &Qkv) -> Result<Measured> {
    let mut tally = ElementTally::default();
    let qs = softmax_rows(&qkv.q);
    tally.alloc(qs.rows() * qs.cols());
    let ks = softmax_cols(&qkv.k);
    tally.alloc(ks.rows() * ks.cols());
    let map = matmul(&qs, &ks.transpose())?;
    tally.alloc(ks.rows() * ks.cols());
    tally.alloc(map.rows() * map.cols());
    tally.free(2 * ks.rows() * ks.cols() + qs.rows() * qs.cols());
    drop((qs, ks));
    let output = matmul(&map, &qkv.v)?;
    tally.alloc(output.rows() * output.cols());
    Ok(Measured {
        output,
        peak_elements: tally.peak,
    })
}

/// Row `j` of the implicit similarity map `softmax_rows(q) · softmax_cols(k)ᵀ`.
///
/// Diagnostic only; costs `O(Lk · d)`.
pub fn implicit_map_row(qkv: &Qkv, j: usize) -> Result<Vec<f64>> {
    if j >= qkv.q.rows() {
        return Err(Error::Index(format!(
            "row {} of a {}-row implicit map",
            j,
            qkv.q.rows()
        )));
    }
    let qrow = TokenMatrix::from_vec(1, qkv.q.cols(), qkv.q.row(j).to_vec())?;
    let qs = softmax_rows(&qrow);
    let ks = softmax_cols(&qkv.k);
    let lk = ks.rows();
    let mut row = vec![0.0; lk];
    for (t, out) in row.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, b) in qs.row(0).iter().zip(ks.row(t)) {
            acc += a * b;
        }
        *out = acc;
    }
    Ok(row)
}

/// Checkerboard attention mask inside a `K x K` window.
///
/// A key participates iff it is an anchor: anchor→anchor and
/// anchor-key→non-anchor-query pairs are allowed, anything with a
/// non-anchor key is not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowMask {
    window: usize,
}

impl WindowMask {
    pub fn new(window: usize) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(Error::Config(format!("window size {} must be odd", window)));
        }
        Ok(WindowMask { window })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    #[inline]
    pub fn allows(&self, _query_is_anchor: bool, key_is_anchor: bool) -> bool {
        key_is_anchor
    }

    /// `K² x K²` allow matrix (query-major) for a window whose top-left
    /// cell has anchor parity `top_left_anchor`.
    pub fn allow_matrix(&self, top_left_anchor: bool) -> Vec<bool> {
        let k = self.window;
        let n = k * k;
        let parity = |cell: usize| {
            let even = ((cell / k) + (cell % k)).is_multiple_of(2);
            even == top_left_anchor
        };
        let mut m = Vec::with_capacity(n * n);
        for qi in 0..n {
            for ki in 0..n {
                m.push(self.allows(parity(qi), parity(ki)));
            }
        }
        m
    }
}

/// Masked overlapped-window attention on grids.
///
/// Every token queries the anchor tokens inside the `K x K` window centred
/// on it. Out-of-grid cells are not keys. Logits are scaled by
/// `1/sqrt(q.channels)`. A query with no admissible key yields zeros.
pub fn masked_window_attention(q: &Tensor4, k: &Tensor4, v: &Tensor4, window: usize) -> Result<Tensor4> {
    let mask = WindowMask::new(window)?;
    if q.dims() != k.dims() {
        return Err(Error::Shape(format!(
            "query grid {:?} vs key grid {:?}",
            q.dims(),
            k.dims()
        )));
    }
    if (v.height(), v.width()) != (k.height(), k.width()) {
        return Err(Error::Shape("value grid differs from key grid".into()));
    }
    let (h, w) = (q.height(), q.width());
    let d = q.channels();
    let dv = v.channels();
    let scale = 1.0 / (d.max(1) as f64).sqrt();
    let r = (window / 2) as isize;
    let qt = q.to_tokens();
    let kt = k.to_tokens();
    let vt = v.to_tokens();

    let mut out = TokenMatrix::zeros(h * w, dv);
    let mut keys: Vec<usize> = Vec::with_capacity(window * window);
    let mut logits: Vec<f64> = Vec::with_capacity(window * window);
    for y in 0..h {
        for x in 0..w {
            let t = y * w + x;
            keys.clear();
            for dy in -r..=r {
                let ky = y as isize + dy;
                if ky < 0 || ky >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let kx = x as isize + dx;
                    if kx < 0 || kx >= w as isize {
                        continue;
                    }
                    let (ky, kx) = (ky as usize, kx as usize);
                    if mask.allows(is_anchor(y, x), is_anchor(ky, kx)) {
                        keys.push(ky * w + kx);
                    }
                }
            }
            if keys.is_empty() {
                continue;
            }
            let qrow = qt.row(t);
            logits.clear();
            for &kt_idx in &keys {
                let mut acc = 0.0;
                for (a, b) in qrow.iter().zip(kt.row(kt_idx)) {
                    acc += a * b;
                }
                logits.push(acc * scale);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            let orow = out.row_mut(t);
            for (&kt_idx, &p) in keys.iter().zip(&logits) {
                let wgt = p / sum;
                for (o, &vv) in orow.iter_mut().zip(vt.row(kt_idx)) {
                    *o += wgt * vv;
                }
            }
        }
    }
    Tensor4::from_tokens(&out, h, w)
}

/// 1x1 embeddings producing queries, keys and values for window attention.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttentionWeights {
    pub query: ConvWeights,
    pub key: ConvWeights,
    pub value: ConvWeights,
}

impl WindowAttentionWeights {
    pub fn zeros(in_channels: usize, dim: usize) -> Self {
        WindowAttentionWeights {
            query: ConvWeights::zeros(dim, in_channels, 1),
            key: ConvWeights::zeros(dim, in_channels, 1),
            value: ConvWeights::zeros(dim, in_channels, 1),
        }
    }
}

/// Embed `x` with 1x1 convolutions, then [`masked_window_attention`].
pub fn window_checkerboard_attention(x: &Tensor4, weights: &WindowAttentionWeights, window: usize) -> Result<Tensor4> {
    WindowMask::new(window)?;
    let q = conv2d(x, &weights.query, 1, 0)?;
    let k = conv2d(x, &weights.key, 1, 0)?;
    let v = conv2d(x, &weights.value, 1, 0)?;
    masked_window_attention(&q, &k, &v, window)
}
