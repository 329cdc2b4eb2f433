//! Anchor / non-anchor spatial geometry.
//!
//! Token `(h, w)` is an anchor iff `h + w` is even. This parity is part of
//! the bitstream format: anchors of every slice are coded before its
//! non-anchors, both in ascending token order.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numerics::{Tensor4, TokenMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckerboardPartition {
    height: usize,
    width: usize,
    anchor_index: Vec<usize>,
    nonanchor_index: Vec<usize>,
}

#[inline]
pub fn is_anchor(h: usize, w: usize) -> bool {
    (h + w).is_multiple_of(2)
}

impl CheckerboardPartition {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "checkerboard needs a non-empty grid, got {}x{}",
                height, width
            )));
        }
        let n = height * width;
        let mut anchor_index = Vec::with_capacity(n.div_ceil(2));
        let mut nonanchor_index = Vec::with_capacity(n / 2);
        for h in 0..height {
            for w in 0..width {
                let t = h * width + w;
                if is_anchor(h, w) {
                    anchor_index.push(t);
                } else {
                    nonanchor_index.push(t);
                }
            }
        }
        Ok(CheckerboardPartition {
            height,
            width,
            anchor_index,
            nonanchor_index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchor_index
    }

    pub fn nonanchors(&self) -> &[usize] {
        &self.nonanchor_index
    }

    /// Copy of `x` with every non-anchor position set to zero.
    pub fn keep_anchors(&self, x: &Tensor4) -> Result<Tensor4> {
        self.mask(x, true)
    }

    /// Copy of `x` with every anchor position set to zero.
    pub fn keep_nonanchors(&self, x: &Tensor4) -> Result<Tensor4> {
        self.mask(x, false)
    }

    fn mask(&self, x: &Tensor4, keep_anchor: bool) -> Result<Tensor4> {
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::Shape(format!(
                "tensor grid {}x{} does not match partition {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            )));
        }
        let mut out = x.clone();
        let drop = if keep_anchor {
            &self.nonanchor_index
        } else {
            &self.anchor_index
        };
        for c in 0..out.channels() {
            let plane = out.channel_mut(c);
            for &t in drop {
                plane[t] = 0.0;
            }
        }
        Ok(out)
    }
}

/// Same as [`CheckerboardPartition::new`].
pub fn partition(height: usize, width: usize) -> Result<CheckerboardPartition> {
    CheckerboardPartition::new(height, width)
}

/// Row `t` of the result is the channel vector at token `index[t]`.
pub fn gather(x: &Tensor4, index: &[usize]) -> Result<TokenMatrix> {
    let n = x.tokens();
    let c = x.channels();
    let mut data = Vec::with_capacity(index.len() * c);
    for &t in index {
        if t >= n {
            return Err(Error::Index(format!("token {} outside {} tokens", t, n)));
        }
        data.extend((0..c).map(|ch| x.channel(ch)[t]));
    }
    TokenMatrix::from_vec(index.len(), c, data)
}

/// Write `rows` into `dst` at the given token positions; other positions are kept.
pub fn scatter(dst: &Tensor4, rows: &TokenMatrix, index: &[usize]) -> Result<Tensor4> {
    if rows.rows() != index.len() {
        return Err(Error::Shape(format!(
            "{} rows for {} indices",
            rows.rows(),
            index.len()
        )));
    }
    if rows.cols() != dst.channels() {
        return Err(Error::Shape(format!(
            "{}-wide rows into {}-channel tensor",
            rows.cols(),
            dst.channels()
        )));
    }
    let n = dst.tokens();
    let mut seen = HashSet::with_capacity(index.len());
    for &t in index {
        if t >= n {
            return Err(Error::Index(format!("token {} outside {} tokens", t, n)));
        }
        if !seen.insert(t) {
            return Err(Error::Index(format!("duplicate scatter index {}", t)));
        }
    }
    let mut out = dst.clone();
    for (r, &t) in index.iter().enumerate() {
        for (ch, &v) in rows.row(r).iter().enumerate() {
            out.channel_mut(ch)[t] = v;
        }
    }
    Ok(out)
}
