use crate::context::{HyperWeights, TransformWeights};
use crate::entropy::scale_from_raw;
use crate::error::{Error, Result};
use crate::numerics::{conv2d, leaky, ConvWeights, Tensor4};

/// Spatial reduction of the toy analysis transform.
pub const DOWNSCALE: usize = 16;

fn down(x: &Tensor4, w: &ConvWeights) -> Result<Tensor4> {
    conv2d(x, w, 2, 1)
}

fn up(x: &Tensor4, w: &ConvWeights) -> Result<Tensor4> {
    conv2d(&x.upsample_nearest(2), w, 1, 1)
}

/// Latent grid size for a `height × width` image.
pub fn latent_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(DOWNSCALE), width.div_ceil(DOWNSCALE))
}

/// Hyper-latent grid size for a latent grid.
pub fn hyper_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(2).div_ceil(2), width.div_ceil(2).div_ceil(2))
}

/// Four stride-2 3x3 convolutions, leaky between stages.
pub fn toy_analysis(image: &Tensor4, weights: &TransformWeights) -> Result<Tensor4> {
    if image.channels() != weights.stages[0].in_channels {
        return Err(Error::Config(format!(
            "analysis expects {} channels, got {}",
            weights.stages[0].in_channels,
            image.channels()
        )));
    }
    let mut x = image.clone();
    for (i, w) in weights.stages.iter().enumerate() {
        x = down(&x, w)?;
        if i < 3 {
            x = x.map(leaky);
        }
    }
    Ok(x)
}

/// Four nearest-neighbour x2 upsample + 3x3 convolution stages, cropped to
/// `height × width` and clamped to `[0, 1]`.
pub fn toy_synthesis(latent: &Tensor4, weights: &TransformWeights, height: usize, width: usize) -> Result<Tensor4> {
    if latent.channels() != weights.stages[0].in_channels {
        return Err(Error::Config(format!(
            "synthesis expects {} channels, got {}",
            weights.stages[0].in_channels,
            latent.channels()
        )));
    }
    let mut x = latent.clone();
    for (i, w) in weights.stages.iter().enumerate() {
        x = up(&x, w)?;
        if i < 3 {
            x = x.map(leaky);
        }
    }
    Ok(x.crop(height, width)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Hyper analysis: two stride-2 convolutions to `N` channels.
pub fn hyper_analysis(y: &Tensor4, weights: &HyperWeights) -> Result<Tensor4> {
    let z = down(y, &weights.analysis[0])?.map(leaky);
    down(&z, &weights.analysis[1])
}

/// Hyper synthesis: two upsampling stages to `2M` channels, cropped to the latent grid.
pub fn hyper_synthesis(z_hat: &Tensor4, weights: &HyperWeights, height: usize, width: usize) -> Result<Tensor4> {
    let h = up(z_hat, &weights.synthesis[0])?.map(leaky);
    up(&h, &weights.synthesis[1])?.crop(height, width)
}

/// Per-channel scales of the factorized `ẑ` model.
pub fn z_scales(weights: &HyperWeights) -> Vec<f64> {
    weights.z_log_scale.iter().map(|&r| scale_from_raw(r)).collect()
}

/// Output of [`hyper_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct HyperOutput {
    pub z_hat: Tensor4,
    pub phi_h: Tensor4,
    pub z_sigma: Vec<f64>,
}

/// `ẑ = round(h_a(y))`, `Φ_h = h_s(ẑ)`.
pub fn hyper_path(y: &Tensor4, weights: &HyperWeights) -> Result<HyperOutput> {
    let z_hat = hyper_analysis(y, weights)?.map(f64::round);
    let phi_h = hyper_synthesis(&z_hat, weights, y.height(), y.width())?;
    Ok(HyperOutput {
        z_hat,
        phi_h,
        z_sigma: z_scales(weights),
    })
}
