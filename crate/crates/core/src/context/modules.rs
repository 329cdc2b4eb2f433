use super::profile::Profile;
use super::weights::{
    ChannelContextWeights, DepthRbWeights, EmbeddingWeights, EntropyParamWeights, GlobalContextWeights,
    LocalContextWeights, LrpWeights,
};
use crate::attention::{linear_global_attention, vanilla_global_attention, window_checkerboard_attention, Qkv};
use crate::checkerboard::{gather, scatter, CheckerboardPartition};
use crate::entropy::{scale_from_raw, GaussianField};
use crate::error::{Error, Result};
use crate::numerics::{conv2d, depthwise_conv2d, leaky, DepthwiseWeights, Tensor4};

/// Decoded slices `ŷ⁰ .. ŷⁱ⁻¹`, append-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SliceState {
    slices: Vec<Tensor4>,
}

impl SliceState {
    pub fn new() -> Self {
        SliceState::default()
    }

    pub fn push(&mut self, slice: Tensor4) -> Result<()> {
        if let Some(first) = self.slices.first() {
            if first.dims() != slice.dims() {
                return Err(Error::Shape(format!(
                    "slice {:?} does not match earlier slices {:?}",
                    slice.dims(),
                    first.dims()
                )));
            }
        }
        self.slices.push(slice);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[Tensor4] {
        &self.slices
    }

    /// `ŷ⁰ .. ŷⁱ⁻¹` stacked along channels.
    pub fn concat_before(&self, i: usize) -> Result<Tensor4> {
        if i == 0 || i > self.slices.len() {
            return Err(Error::State(format!(
                "slice {} needs {} decoded slices, state holds {}",
                i,
                i,
                self.slices.len()
            )));
        }
        let refs: Vec<&Tensor4> = self.slices[..i].iter().collect();
        Tensor4::concat_channels(&refs)
    }
}

/// Which half of the checkerboard is being coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Anchor,
    NonAnchor,
}

/// Context features feeding the entropy parameters of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub phi_h: Tensor4,
    pub phi_ch: Tensor4,
    pub phi_lc: Tensor4,
    pub phi_gc_intra: Tensor4,
    pub phi_gc_inter: Tensor4,
}

impl ContextBundle {
    /// All contexts zero except the hyper-prior.
    pub fn with_hyper(profile: &Profile, phi_h: Tensor4) -> Self {
        let (h, w) = (phi_h.height(), phi_h.width());
        let c = profile.ctx_channels();
        ContextBundle {
            phi_h,
            phi_ch: Tensor4::zeros(c, h, w),
            phi_lc: Tensor4::zeros(c, h, w),
            phi_gc_intra: Tensor4::zeros(c, h, w),
            phi_gc_inter: Tensor4::zeros(c, h, w),
        }
    }

    pub fn zeros(profile: &Profile, height: usize, width: usize) -> Self {
        ContextBundle::with_hyper(profile, Tensor4::zeros(profile.hyper_channels(), height, width))
    }
}

/// Kernel used by the global context modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GlobalKernel {
    /// Decomposed softmax, linear in the token count.
    #[default]
    Linear,
    /// Joint softmax with `1/sqrt(S)` scaling, quadratic. Reference only.
    Vanilla,
}

fn conv_same(x: &Tensor4, w: &crate::numerics::ConvWeights) -> Result<Tensor4> {
    conv2d(x, w, 1, w.kernel / 2)
}

/// Channel-wise context `Φ_ch` for slice `i ≥ 1` from `ŷ⁰ .. ŷⁱ⁻¹`.
pub fn channel_context(state: &SliceState, i: usize, weights: &ChannelContextWeights) -> Result<Tensor4> {
    let x = state.concat_before(i)?;
    let [c0, c1, c2] = &weights.convs;
    let h = conv_same(&x, c0)?.map(leaky);
    let h = conv_same(&h, c1)?.map(leaky);
    conv_same(&h, c2)
}

/// Local spatial context `Φ_lc` from the anchors of the current slice.
///
/// Non-anchor positions of the input are zeroed first, so they never
/// influence the output.
pub fn local_context(
    y_hat: &Tensor4,
    part: &CheckerboardPartition,
    weights: &LocalContextWeights,
    window: usize,
) -> Result<Tensor4> {
    let anchors = part.keep_anchors(y_hat)?;
    let attn = window_checkerboard_attention(&anchors, &weights.attention, window)?;
    let fused = conv_same(&attn, &weights.fuse)?;
    let hidden = conv2d(&fused, &weights.ffn_in, 1, 0)?.map(leaky);
    let ffn = conv2d(&hidden, &weights.ffn_out, 1, 0)?;
    ffn.add(&fused)
}

/// `x + depthwise3x3(x)`.
pub fn position_embed(x: &Tensor4, weights: &DepthwiseWeights) -> Result<Tensor4> {
    x.add(&depthwise_conv2d(x, weights)?)
}

/// 1x1 projection then [`position_embed`].
pub fn embed(x: &Tensor4, weights: &EmbeddingWeights) -> Result<Tensor4> {
    let p = conv2d(x, &weights.proj, 1, 0)?;
    position_embed(&p, &weights.pos)
}

/// `x + project(leaky(depthwise(expand(x))))`.
pub fn depth_rb(x: &Tensor4, weights: &DepthRbWeights) -> Result<Tensor4> {
    let h = conv2d(x, &weights.expand, 1, 0)?;
    let h = depthwise_conv2d(&h, &weights.depthwise)?.map(leaky);
    let h = conv2d(&h, &weights.project, 1, 0)?;
    x.add(&h)
}

fn global_attention(qkv: &Qkv, kernel: GlobalKernel) -> Result<crate::numerics::TokenMatrix> {
    match kernel {
        GlobalKernel::Linear => linear_global_attention(qkv),
        GlobalKernel::Vanilla => vanilla_global_attention(qkv),
    }
}

/// Intra-slice global context `Φ_gc,intra` for slice `i ≥ 1`.
///
/// Similarities between non-anchor queries and anchor keys of the previous
/// slice weight the anchor values of the current slice. Output anchor
/// positions are zero.
pub fn intra_global_context(
    prev_slice: &Tensor4,
    cur_slice: &Tensor4,
    part: &CheckerboardPartition,
    weights: &GlobalContextWeights,
) -> Result<Tensor4> {
    intra_global_context_with(prev_slice, cur_slice, part, weights, GlobalKernel::Linear)
}

pub fn intra_global_context_with(
    prev_slice: &Tensor4,
    cur_slice: &Tensor4,
    part: &CheckerboardPartition,
    weights: &GlobalContextWeights,
    kernel: GlobalKernel,
) -> Result<Tensor4> {
    let qkv = intra_qkv(prev_slice, cur_slice, part, weights)?;
    let attn = global_attention(&qkv, kernel)?;
    intra_finish(&attn, part, weights)
}

/// Embedded queries, keys and values of the intra-slice module.
pub fn intra_qkv(
    prev_slice: &Tensor4,
    cur_slice: &Tensor4,
    part: &CheckerboardPartition,
    weights: &GlobalContextWeights,
) -> Result<Qkv> {
    let cur_anchor = part.keep_anchors(cur_slice)?;
    let q = gather(&embed(prev_slice, &weights.query)?, part.nonanchors())?;
    let k = gather(&embed(prev_slice, &weights.key)?, part.anchors())?;
    let v = gather(&embed(&cur_anchor, &weights.value)?, part.anchors())?;
    Qkv::new(q, k, v)
}

/// Scatter non-anchor attention rows, fuse, DepthRB, zero the anchors.
pub fn intra_finish(
    attn: &crate::numerics::TokenMatrix,
    part: &CheckerboardPartition,
    weights: &GlobalContextWeights,
) -> Result<Tensor4> {
    let grid = Tensor4::zeros(attn.cols(), part.height(), part.width());
    let grid = scatter(&grid, attn, part.nonanchors())?;
    let fused = conv_same(&grid, &weights.fuse)?;
    let out = depth_rb(&fused, &weights.depth_rb)?;
    part.keep_nonanchors(&out)
}

/// Inter-slice global context `Φ_gc,inter` for slice `i ≥ 1` from `ŷ⁰ .. ŷⁱ⁻¹`.
pub fn inter_global_context(state: &SliceState, i: usize, weights: &GlobalContextWeights) -> Result<Tensor4> {
    inter_global_context_with(state, i, weights, GlobalKernel::Linear)
}

pub fn inter_global_context_with(
    state: &SliceState,
    i: usize,
    weights: &GlobalContextWeights,
    kernel: GlobalKernel,
) -> Result<Tensor4> {
    let qkv = inter_qkv(state, i, weights)?;
    let attn = global_attention(&qkv, kernel)?;
    let first = &state.slices()[0];
    let grid = Tensor4::from_tokens(&attn, first.height(), first.width())?;
    let fused = conv_same(&grid, &weights.fuse)?;
    depth_rb(&fused, &weights.depth_rb)
}

pub fn inter_qkv(state: &SliceState, i: usize, weights: &GlobalContextWeights) -> Result<Qkv> {
    let x = state.concat_before(i)?;
    let q = embed(&x, &weights.query)?.to_tokens();
    let k = embed(&x, &weights.key)?.to_tokens();
    let v = embed(&x, &weights.value)?.to_tokens();
    Qkv::new(q, k, v)
}

/// Gaussian parameters for one pass over slice `i`.
///
/// The anchor pass sees `Φ_h, Φ_ch, Φ_gc,inter` only; `Φ_lc` and
/// `Φ_gc,intra` are replaced by zeros regardless of their contents.
pub fn entropy_params(bundle: &ContextBundle, pass: Pass, weights: &EntropyParamWeights) -> Result<GaussianField> {
    let zeros;
    let (lc, intra) = match pass {
        Pass::NonAnchor => (&bundle.phi_lc, &bundle.phi_gc_intra),
        Pass::Anchor => {
            zeros = Tensor4::zeros(
                bundle.phi_lc.channels(),
                bundle.phi_lc.height(),
                bundle.phi_lc.width(),
            );
            (&zeros, &zeros)
        }
    };
    let x = Tensor4::concat_channels(&[&bundle.phi_h, &bundle.phi_ch, lc, intra, &bundle.phi_gc_inter])?;
    let [c0, c1, c2] = &weights.convs;
    let h = conv2d(&x, c0, 1, 0)?.map(leaky);
    let h = conv2d(&h, c1, 1, 0)?.map(leaky);
    let out = conv2d(&h, c2, 1, 0)?;
    let s = out.channels() / 2;
    let mu = out.channel_range(0, s)?;
    let sigma = out.channel_range(s, s)?.map(scale_from_raw);
    GaussianField::new(mu, sigma)
}

/// Bound applied to the LRP pre-activation; `0.5·tanh(±8)` stays inside `(-0.5, 0.5)`.
const LRP_CLAMP: f64 = 8.0;

/// Reconstruction-path slice `ỹⁱ = ŷⁱ + 0.5·tanh(f(Φ_h, ŷ⁰..ŷⁱ))`.
///
/// `decoded` holds `ŷ⁰ .. ŷⁱ`, the last entry being the slice corrected.
pub fn lrp(phi_h: &Tensor4, decoded: &[Tensor4], weights: &LrpWeights) -> Result<Tensor4> {
    let current = decoded
        .last()
        .ok_or_else(|| Error::State("LRP needs at least the current slice".into()))?;
    let mut parts = vec![phi_h];
    parts.extend(decoded.iter());
    let x = Tensor4::concat_channels(&parts)?;
    let h = conv2d(&x, &weights.reduce, 1, 0)?.map(leaky);
    let raw = conv_same(&h, &weights.predict)?;
    let correction = raw.map(|v| 0.5 * v.clamp(-LRP_CLAMP, LRP_CLAMP).tanh());
    current.add(&correction)
}
