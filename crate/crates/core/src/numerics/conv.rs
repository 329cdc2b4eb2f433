use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Dense 2-D convolution parameters, weight layout `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        ConvWeights {
            out_channels,
            in_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Fan-in used by the weight initialiser.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, kh: usize, kw: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * self.kernel + kh) * self.kernel + kw]
    }

    fn validate(&self) -> Result<()> {
        if self.weight.len() != self.out_channels * self.in_channels * self.kernel * self.kernel
            || self.bias.len() != self.out_channels
        {
            return Err(Error::Shape(format!(
                "conv weights hold {} / {} values for {}x{}x{}x{}",
                self.weight.len(),
                self.bias.len(),
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel
            )));
        }
        Ok(())
    }
}

/// Per-channel 2-D convolution parameters, weight layout `[channel][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseWeights {
    pub channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DepthwiseWeights {
    pub fn zeros(channels: usize, kernel: usize) -> Self {
        DepthwiseWeights {
            channels,
            kernel,
            weight: vec![0.0; channels * kernel * kernel],
            bias: vec![0.0; channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Output extent along one axis.
#[inline]
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Range of output indices `o` for which `o * stride + k - padding` lands in `[0, input)`.
#[inline]
fn valid_range(out_len: usize, input: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    // o * stride + k >= padding
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    // o * stride + k - padding <= input - 1
    let hi = if input + padding > k {
        ((input + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Zero-padded 2-D convolution.
///
/// Each output element starts at its bias and accumulates products in
/// `(in_channel, kh, kw)` order, matching a naive six-loop evaluation
/// term for term.
pub fn conv2d(x: &Tensor4, w: &ConvWeights, stride: usize, padding: usize) -> Result<Tensor4> {
    w.validate()?;
    if w.in_channels != x.channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            w.in_channels,
            x.channels()
        )));
    }
    if stride == 0 || w.kernel == 0 {
        return Err(Error::Config("conv stride and kernel must be positive".into()));
    }
    if x.height() + 2 * padding < w.kernel || x.width() + 2 * padding < w.kernel {
        return Err(Error::Shape(format!(
            "kernel {} larger than padded input {}x{}",
            w.kernel,
            x.height(),
            x.width()
        )));
    }
    let (ih, iw) = (x.height(), x.width());
    let oh = conv_out_len(ih, w.kernel, stride, padding);
    let ow = conv_out_len(iw, w.kernel, stride, padding);
    let mut out = Tensor4::zeros(w.out_channels, oh, ow);
    for o in 0..w.out_channels {
        let plane = out.channel_mut(o);
        plane.fill(w.bias[o]);
        for i in 0..w.in_channels {
            let src = x.channel(i);
            for kh in 0..w.kernel {
                let (ylo, yhi) = valid_range(oh, ih, kh, stride, padding);
                for kw in 0..w.kernel {
                    let wv = w.at(o, i, kh, kw);
                    let (xlo, xhi) = valid_range(ow, iw, kw, stride, padding);
                    for y in ylo..yhi {
                        let sy = y * stride + kh - padding;
                        let srow = &src[sy * iw..(sy + 1) * iw];
                        let drow = &mut plane[y * ow..(y + 1) * ow];
                        for xo in xlo..xhi {
                            let sx = xo * stride + kw - padding;
                            drow[xo] += wv * srow[sx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depthwise convolution, stride 1, zero padding preserving spatial dims.
pub fn depthwise_conv2d(x: &Tensor4, w: &DepthwiseWeights) -> Result<Tensor4> {
    if w.channels != x.channels()
        || w.weight.len() != w.channels * w.kernel * w.kernel
        || w.bias.len() != w.channels
    {
        return Err(Error::Shape(format!(
            "depthwise weights for {} channels applied to {}",
            w.channels,
            x.channels()
        )));
    }
    if w.kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("depthwise kernel {} must be odd", w.kernel)));
    }
    let pad = (w.kernel - 1) / 2;
    let (h, wd) = (x.height(), x.width());
    let kk = w.kernel * w.kernel;
    let mut out = Tensor4::zeros(x.channels(), h, wd);
    for c in 0..x.channels() {
        let src = x.channel(c);
        let plane = out.channel_mut(c);
        plane.fill(w.bias[c]);
        for kh in 0..w.kernel {
            let (ylo, yhi) = valid_range(h, h, kh, 1, pad);
            for kw in 0..w.kernel {
                let wv = w.weight[c * kk + kh * w.kernel + kw];
                let (xlo, xhi) = valid_range(wd, wd, kw, 1, pad);
                for y in ylo..yhi {
                    let sy = y + kh - pad;
                    for xo in xlo..xhi {
                        plane[y * wd + xo] += wv * src[sy * wd + xo + kw - pad];
                    }
                }
            }
        }
    }
    Ok(out)
}
