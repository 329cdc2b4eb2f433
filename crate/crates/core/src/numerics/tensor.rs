use crate::error::{Error, Result};

/// Dense `channels x height x width` array (batch fixed at 1).
///
/// Storage is channel-major, then row-major: element `(c, h, w)` lives at
/// `(c * height + h) * width + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor4 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Tensor4 {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "tensor {}x{}x{} needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor4 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Tensor4 {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Spatial token count `H * W`.
    #[inline]
    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(c, h, w);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.tokens();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.tokens();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor4 {
            data,
            ..self.clone_shape()
        })
    }

    fn clone_shape(&self) -> Tensor4 {
        Tensor4 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: Vec::new(),
        }
    }

    /// Stack tensors along the channel axis. All parts must share the spatial grid.
    pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::Shape(format!(
                    "concat spatial mismatch {}x{} vs {}x{}",
                    h, w, p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Channels `[start, start + count)` as a new tensor.
    pub fn channel_range(&self, start: usize, count: usize) -> Result<Tensor4> {
        if start + count > self.channels {
            return Err(Error::Shape(format!(
                "channel range {}..{} exceeds {} channels",
                start,
                start + count,
                self.channels
            )));
        }
        let n = self.tokens();
        Ok(Tensor4 {
            channels: count,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + count) * n].to_vec(),
        })
    }

    /// Copy of the top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor4> {
        if height > self.height || width > self.width {
            return Err(Error::Shape(format!(
                "crop {}x{} larger than {}x{}",
                height, width, self.height, self.width
            )));
        }
        Ok(Tensor4::from_fn(self.channels, height, width, |c, h, w| {
            self.get(c, h, w)
        }))
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Tensor4 {
        Tensor4::from_fn(
            self.channels,
            self.height * factor,
            self.width * factor,
            |c, h, w| self.get(c, h / factor, w / factor),
        )
    }

    /// `H*W x C` token view; token `t = h * W + w`.
    pub fn to_tokens(&self) -> TokenMatrix {
        let n = self.tokens();
        let mut data = vec![0.0; n * self.channels];
        for c in 0..self.channels {
            for (t, &v) in self.channel(c).iter().enumerate() {
                data[t * self.channels + c] = v;
            }
        }
        TokenMatrix {
            rows: n,
            cols: self.channels,
            data,
        }
    }

    /// Inverse of [`Tensor4::to_tokens`].
    pub fn from_tokens(m: &TokenMatrix, height: usize, width: usize) -> Result<Tensor4> {
        if m.rows != height * width {
            return Err(Error::Shape(format!(
                "{} tokens cannot fill a {}x{} grid",
                m.rows, height, width
            )));
        }
        let mut out = Tensor4::zeros(m.cols, height, width);
        for t in 0..m.rows {
            for c in 0..m.cols {
                out.data[c * m.rows + t] = m.data[t * m.cols + c];
            }
        }
        Ok(out)
    }
}

/// Row-major `rows x cols` matrix; used for the token view of latents.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TokenMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(TokenMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        TokenMatrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        TokenMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> TokenMatrix {
        TokenMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scale(&self, s: f64) -> TokenMatrix {
        TokenMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}
