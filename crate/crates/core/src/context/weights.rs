//! Parameter sets for every module and the weights file.
//!
//! File layout (little-endian):
//!
//! ```text
//! "MEMW" | version u8 | profile id u8 | seed u64 | f64 values...
//! ```
//!
//! Values follow [`ModelWeights::visit`] order: hyper path; channel
//! context for slices `1..L`; local context for `0..L`; intra-slice global
//! context for `1..L`; inter-slice global context for `1..L`; entropy
//! parameters for `0..L`; LRP for `0..L`; analysis; synthesis. Inside
//! every convolution the weight array precedes the bias.

use sha2::{Digest, Sha256};

use super::profile::Profile;
use crate::attention::WindowAttentionWeights;
use crate::error::{Error, Result};
use crate::numerics::{ConvWeights, DepthwiseWeights, Seed, SplitMix64};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MEMW";
pub const WEIGHTS_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 8;

/// 1x1 projection followed by the depthwise position embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWeights {
    pub proj: ConvWeights,
    pub pos: DepthwiseWeights,
}

impl EmbeddingWeights {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        EmbeddingWeights {
            proj: ConvWeights::zeros(out_channels, in_channels, 1),
            pos: DepthwiseWeights::zeros(out_channels, 3),
        }
    }
}

/// Depth-wise residual bottleneck: 1x1, depthwise 3x3, nonlinearity, 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthRbWeights {
    pub expand: ConvWeights,
    pub depthwise: DepthwiseWeights,
    pub project: ConvWeights,
}

impl DepthRbWeights {
    pub fn zeros(channels: usize) -> Self {
        DepthRbWeights {
            expand: ConvWeights::zeros(channels, channels, 1),
            depthwise: DepthwiseWeights::zeros(channels, 3),
            project: ConvWeights::zeros(channels, channels, 1),
        }
    }
}

/// Three 3x3 convolutions over the previous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelContextWeights {
    pub convs: [ConvWeights; 3],
}

impl ChannelContextWeights {
    pub fn zeros(profile: &Profile, slice: usize) -> Self {
        let c = profile.ctx_channels();
        ChannelContextWeights {
            convs: [
                ConvWeights::zeros(c, slice * profile.s, 3),
                ConvWeights::zeros(c, c, 3),
                ConvWeights::zeros(c, c, 3),
            ],
        }
    }

    /// Placeholder for slice 0, which has no previous slices.
    pub fn empty() -> Self {
        ChannelContextWeights {
            convs: [
                ConvWeights::zeros(0, 0, 0),
                ConvWeights::zeros(0, 0, 0),
                ConvWeights::zeros(0, 0, 0),
            ],
        }
    }
}

/// Window attention, `K x K` fusion and a residual two-layer FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalContextWeights {
    pub attention: WindowAttentionWeights,
    pub fuse: ConvWeights,
    pub ffn_in: ConvWeights,
    pub ffn_out: ConvWeights,
}

impl LocalContextWeights {
    pub fn zeros(profile: &Profile) -> Self {
        let c = profile.ctx_channels();
        LocalContextWeights {
            attention: WindowAttentionWeights::zeros(profile.s, profile.s),
            fuse: ConvWeights::zeros(c, profile.s, profile.window),
            ffn_in: ConvWeights::zeros(4 * c, c, 1),
            ffn_out: ConvWeights::zeros(c, 4 * c, 1),
        }
    }
}

/// Shared layout of the intra- and inter-slice global context modules.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalContextWeights {
    pub query: EmbeddingWeights,
    pub key: EmbeddingWeights,
    pub value: EmbeddingWeights,
    pub fuse: ConvWeights,
    pub depth_rb: DepthRbWeights,
}

impl GlobalContextWeights {
    /// Embeddings read `in_channels` and produce `S`-wide tokens.
    pub fn zeros(profile: &Profile, in_channels: usize) -> Self {
        let c = profile.ctx_channels();
        GlobalContextWeights {
            query: EmbeddingWeights::zeros(in_channels, profile.s),
            key: EmbeddingWeights::zeros(in_channels, profile.s),
            value: EmbeddingWeights::zeros(in_channels, profile.s),
            fuse: ConvWeights::zeros(c, profile.s, profile.window),
            depth_rb: DepthRbWeights::zeros(c),
        }
    }

    /// Placeholder for slice 0, which has no previous slice.
    pub fn empty() -> Self {
        GlobalContextWeights {
            query: EmbeddingWeights::zeros(0, 0),
            key: EmbeddingWeights::zeros(0, 0),
            value: EmbeddingWeights::zeros(0, 0),
            fuse: ConvWeights::zeros(0, 0, 0),
            depth_rb: DepthRbWeights::zeros(0),
        }
    }
}

/// Three 1x1 convolutions producing `(μ, raw scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParamWeights {
    pub convs: [ConvWeights; 3],
}

impl EntropyParamWeights {
    pub fn zeros(profile: &Profile) -> Self {
        let input = profile.hyper_channels() + 4 * profile.ctx_channels();
        let hidden = 4 * profile.s;
        EntropyParamWeights {
            convs: [
                ConvWeights::zeros(hidden, input, 1),
                ConvWeights::zeros(hidden, hidden, 1),
                ConvWeights::zeros(2 * profile.s, hidden, 1),
            ],
        }
    }
}

/// Latent residual prediction: 1x1 then 3x3.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpWeights {
    pub reduce: ConvWeights,
    pub predict: ConvWeights,
}

impl LrpWeights {
    pub fn zeros(profile: &Profile, slice: usize) -> Self {
        let c = profile.ctx_channels();
        LrpWeights {
            reduce: ConvWeights::zeros(c, profile.hyper_channels() + (slice + 1) * profile.s, 1),
            predict: ConvWeights::zeros(profile.s, c, 3),
        }
    }
}

/// Hyper analysis, factorized scales for `ẑ`, hyper synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperWeights {
    pub analysis: [ConvWeights; 2],
    /// Per-channel raw scale of the factorized `ẑ` model.
    pub z_log_scale: Vec<f64>,
    pub synthesis: [ConvWeights; 2],
}

impl HyperWeights {
    pub fn zeros(profile: &Profile) -> Self {
        HyperWeights {
            analysis: [
                ConvWeights::zeros(profile.n, profile.m, 3),
                ConvWeights::zeros(profile.n, profile.n, 3),
            ],
            z_log_scale: vec![0.0; profile.n],
            synthesis: [
                ConvWeights::zeros(profile.m, profile.n, 3),
                ConvWeights::zeros(profile.hyper_channels(), profile.m, 3),
            ],
        }
    }
}

/// Four-stage toy transform (analysis or synthesis).
#[derive(Debug, Clone, PartialEq)]
pub struct TransformWeights {
    pub stages: [ConvWeights; 4],
}

impl TransformWeights {
    pub fn analysis_zeros(profile: &Profile) -> Self {
        TransformWeights {
            stages: [
                ConvWeights::zeros(profile.n, 3, 3),
                ConvWeights::zeros(profile.n, profile.n, 3),
                ConvWeights::zeros(profile.n, profile.n, 3),
                ConvWeights::zeros(profile.m, profile.n, 3),
            ],
        }
    }

    pub fn synthesis_zeros(profile: &Profile) -> Self {
        TransformWeights {
            stages: [
                ConvWeights::zeros(profile.n, profile.m, 3),
                ConvWeights::zeros(profile.n, profile.n, 3),
                ConvWeights::zeros(profile.n, profile.n, 3),
                ConvWeights::zeros(3, profile.n, 3),
            ],
        }
    }
}

/// All parameters of one model instance.
///
/// Slice-indexed vectors hold an entry for every slice; entries for slice
/// 0 of modules that need a previous slice are unused placeholders with no
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub profile: Profile,
    pub seed: Seed,
    pub hyper: HyperWeights,
    pub channel: Vec<ChannelContextWeights>,
    pub local: Vec<LocalContextWeights>,
    pub intra: Vec<GlobalContextWeights>,
    pub inter: Vec<GlobalContextWeights>,
    pub entropy: Vec<EntropyParamWeights>,
    pub lrp: Vec<LrpWeights>,
    pub analysis: TransformWeights,
    pub synthesis: TransformWeights,
}

/// A flat parameter array and the fan-in that bounds its initial values.
struct ParamRef<'a> {
    values: &'a mut Vec<f64>,
    fan_in: usize,
}

fn push_conv<'a>(out: &mut Vec<ParamRef<'a>>, c: &'a mut ConvWeights) {
    let fan_in = c.fan_in();
    out.push(ParamRef {
        values: &mut c.weight,
        fan_in,
    });
    out.push(ParamRef {
        values: &mut c.bias,
        fan_in,
    });
}

fn push_dw<'a>(out: &mut Vec<ParamRef<'a>>, c: &'a mut DepthwiseWeights) {
    let fan_in = c.fan_in();
    out.push(ParamRef {
        values: &mut c.weight,
        fan_in,
    });
    out.push(ParamRef {
        values: &mut c.bias,
        fan_in,
    });
}

fn push_embedding<'a>(out: &mut Vec<ParamRef<'a>>, e: &'a mut EmbeddingWeights) {
    push_conv(out, &mut e.proj);
    push_dw(out, &mut e.pos);
}

fn push_global<'a>(out: &mut Vec<ParamRef<'a>>, g: &'a mut GlobalContextWeights) {
    push_embedding(out, &mut g.query);
    push_embedding(out, &mut g.key);
    push_embedding(out, &mut g.value);
    push_conv(out, &mut g.fuse);
    push_conv(out, &mut g.depth_rb.expand);
    push_dw(out, &mut g.depth_rb.depthwise);
    push_conv(out, &mut g.depth_rb.project);
}

impl ModelWeights {
    /// Every parameter zero: all contexts vanish and `(μ, σ) = (0, 1)`.
    pub fn zeros(profile: Profile) -> Result<Self> {
        profile.validate()?;
        let l = profile.slices;
        let global_for = |i: usize, in_ch: usize| {
            if i == 0 {
                GlobalContextWeights::empty()
            } else {
                GlobalContextWeights::zeros(&profile, in_ch)
            }
        };
        Ok(ModelWeights {
            profile,
            seed: Seed(0),
            hyper: HyperWeights::zeros(&profile),
            channel: (0..l)
                .map(|i| {
                    if i == 0 {
                        ChannelContextWeights::empty()
                    } else {
                        ChannelContextWeights::zeros(&profile, i)
                    }
                })
                .collect(),
            local: (0..l).map(|_| LocalContextWeights::zeros(&profile)).collect(),
            intra: (0..l).map(|i| global_for(i, profile.s)).collect(),
            inter: (0..l).map(|i| global_for(i, i * profile.s)).collect(),
            entropy: (0..l).map(|_| EntropyParamWeights::zeros(&profile)).collect(),
            lrp: (0..l).map(|i| LrpWeights::zeros(&profile, i)).collect(),
            analysis: TransformWeights::analysis_zeros(&profile),
            synthesis: TransformWeights::synthesis_zeros(&profile),
        })
    }

    /// Seeded parameters: one SplitMix64 stream consumed in file order,
    /// each array drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn generate(profile: Profile, seed: Seed) -> Result<Self> {
        let mut w = ModelWeights::zeros(profile)?;
        w.seed = seed;
        let mut rng = SplitMix64::new(seed);
        for p in w.params() {
            rng.fill_uniform(p.values, p.fan_in);
        }
        Ok(w)
    }

    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        let h = &mut self.hyper;
        for c in h.analysis.iter_mut() {
            push_conv(&mut out, c);
        }
        out.push(ParamRef {
            values: &mut h.z_log_scale,
            fan_in: 1,
        });
        for c in h.synthesis.iter_mut() {
            push_conv(&mut out, c);
        }
        for ch in self.channel.iter_mut().skip(1) {
            for c in ch.convs.iter_mut() {
                push_conv(&mut out, c);
            }
        }
        for lc in self.local.iter_mut() {
            push_conv(&mut out, &mut lc.attention.query);
            push_conv(&mut out, &mut lc.attention.key);
            push_conv(&mut out, &mut lc.attention.value);
            push_conv(&mut out, &mut lc.fuse);
            push_conv(&mut out, &mut lc.ffn_in);
            push_conv(&mut out, &mut lc.ffn_out);
        }
        for g in self.intra.iter_mut().skip(1) {
            push_global(&mut out, g);
        }
        for g in self.inter.iter_mut().skip(1) {
            push_global(&mut out, g);
        }
        for ep in self.entropy.iter_mut() {
            for c in ep.convs.iter_mut() {
                push_conv(&mut out, c);
            }
        }
        for lrp in self.lrp.iter_mut() {
            push_conv(&mut out, &mut lrp.reduce);
            push_conv(&mut out, &mut lrp.predict);
        }
        for c in self.analysis.stages.iter_mut() {
            push_conv(&mut out, c);
        }
        for c in self.synthesis.stages.iter_mut() {
            push_conv(&mut out, c);
        }
        out
    }

    /// Visit every parameter value in file order.
    pub fn visit(&self, mut f: impl FnMut(f64)) {
        // params() needs &mut; clone once rather than duplicate the order.
        let mut copy = self.clone();
        for p in copy.params() {
            for &v in p.values.iter() {
                f(v);
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_| n += 1);
        n
    }

    /// First 8 bytes (little-endian) of SHA-256 over the profile id and
    /// every parameter's little-endian bytes.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update([self.profile.id]);
        let mut buf = Vec::with_capacity(8 * 4096);
        self.visit(|v| {
            buf.extend_from_slice(&v.to_le_bytes());
            if buf.len() >= 8 * 4096 {
                h.update(&buf);
                buf.clear();
            }
        });
        h.update(&buf);
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.parameter_count());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.push(self.profile.id);
        out.extend_from_slice(&self.seed.0.to_le_bytes());
        self.visit(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(Error::Format("not a weights file".into()));
        }
        if bytes[4] != WEIGHTS_VERSION {
            return Err(Error::Format(format!("weights version {}", bytes[4])));
        }
        let profile = Profile::from_id(bytes[5])?;
        let seed = Seed(u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")));
        let mut w = ModelWeights::zeros(profile)?;
        w.seed = seed;
        let payload = &bytes[HEADER_LEN..];
        let expected = 8 * w.parameter_count();
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "weights payload is {} bytes, profile {} needs {}",
                payload.len(),
                profile.name,
                expected
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for p in w.params() {
            for v in p.values.iter_mut() {
                *v = values.next().expect("length checked");
            }
        }
        Ok(w)
    }
}
