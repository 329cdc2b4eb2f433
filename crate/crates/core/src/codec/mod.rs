//! End-to-end latent and image codec.
//!
//! Coding order: `ẑ` under a factorized Gaussian, then for every slice the
//! anchor half followed by the non-anchor half. Within a segment symbols
//! run channel-major, positions in checkerboard index order. The encoder
//! and decoder share one driver; only the symbol source differs, so every
//! context is computed from quantized values on both sides.

mod format;
mod transform;

use sha2::{Digest, Sha256};

pub use format::{
    ppm_from_bytes, ppm_to_bytes, read_bitstream, read_ppm, read_tensor, tensor_from_bytes, tensor_to_bytes,
    write_bitstream, write_ppm, write_tensor, BitstreamFile, BITSTREAM_MAGIC, BITSTREAM_VERSION, TENSOR_MAGIC,
};
pub use transform::{
    hyper_analysis, hyper_dims, hyper_path, hyper_synthesis, latent_dims, toy_analysis, toy_synthesis, z_scales,
    HyperOutput, DOWNSCALE,
};

use crate::checkerboard::CheckerboardPartition;
use crate::context::{
    channel_context, entropy_params, inter_global_context, intra_global_context, local_context, lrp, ContextBundle,
    ModelWeights, Pass, Profile, SliceState,
};
use crate::entropy::{build_cdf, quantize_offset, symbol_rate_bits, GaussianField};
use crate::error::{Error, Result};
use crate::numerics::Tensor4;
use crate::range_coder::{decode, encode, Bitstream};

/// Enables or disables individual context modules. A disabled context is
/// replaced by zeros; disabling LRP leaves `ỹ = ŷ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextToggles {
    pub channel: bool,
    pub local: bool,
    pub intra: bool,
    pub inter: bool,
    pub lrp: bool,
}

impl ContextToggles {
    pub const ALL: ContextToggles = ContextToggles {
        channel: true,
        local: true,
        intra: true,
        inter: true,
        lrp: true,
    };

    pub fn mask(&self) -> u8 {
        [self.channel, self.local, self.intra, self.inter, self.lrp]
            .iter()
            .enumerate()
            .fold(0, |m, (i, &on)| m | ((on as u8) << i))
    }
}

impl Default for ContextToggles {
    fn default() -> Self {
        ContextToggles::ALL
    }
}

/// Estimated and actual size of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRate {
    pub name: String,
    pub symbols: usize,
    pub estimated_bits: f64,
    pub actual_bytes: usize,
}

/// Per-segment rates in file order: `z`, then anchor / non-anchor per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub segments: Vec<SegmentRate>,
    pub pixels: usize,
    pub file_bytes: usize,
}

impl RateReport {
    pub fn total_estimated_bits(&self) -> f64 {
        self.segments.iter().map(|s| s.estimated_bits).sum()
    }

    pub fn total_actual_bytes(&self) -> usize {
        self.segments.iter().map(|s| s.actual_bytes).sum()
    }

    pub fn z_bits(&self) -> f64 {
        self.segments[0].estimated_bits
    }

    pub fn anchor_bits(&self, slice: usize) -> f64 {
        self.segments[1 + 2 * slice].estimated_bits
    }

    pub fn nonanchor_bits(&self, slice: usize) -> f64 {
        self.segments[2 + 2 * slice].estimated_bits
    }

    /// Whole file, header included, per source pixel.
    pub fn bpp(&self) -> f64 {
        8.0 * self.file_bytes as f64 / self.pixels as f64
    }

    pub fn estimated_bpp(&self) -> f64 {
        self.total_estimated_bits() / self.pixels as f64
    }
}

/// Entropy parameters used for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTrace {
    pub anchor: GaussianField,
    pub nonanchor: GaussianField,
}

/// Result of coding or decoding a latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Coded {
    pub file: BitstreamFile,
    pub report: RateReport,
    pub z_hat: Tensor4,
    /// Quantized latent, `M` channels.
    pub y_hat: Tensor4,
    /// `ŷ` after latent residual prediction; input to synthesis.
    pub y_tilde: Tensor4,
    pub trace: Vec<SliceTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Z,
    Y,
}

/// Produces the integer offsets of one segment.
trait SymbolIo {
    fn segment(&mut self, seg: usize, target: Target, elems: &[usize], mu: &[f64], sigma: &[f64]) -> Result<Vec<i64>>;
    fn segment_len(&self, seg: usize) -> usize;
}

fn tables(sigma: &[f64]) -> Result<Vec<crate::entropy::CdfTable>> {
    sigma.iter().map(|&s| build_cdf(s)).collect()
}

struct EncoderIo<'a> {
    y: &'a Tensor4,
    z: Tensor4,
    segments: Vec<Vec<u8>>,
}

impl SymbolIo for EncoderIo<'_> {
    fn segment(&mut self, seg: usize, target: Target, elems: &[usize], mu: &[f64], sigma: &[f64]) -> Result<Vec<i64>> {
        let src = match target {
            Target::Z => self.z.data(),
            Target::Y => self.y.data(),
        };
        let symbols: Vec<i64> = elems
            .iter()
            .zip(mu)
            .map(|(&e, &m)| quantize_offset(src[e], m))
            .collect();
        let bits = encode(&symbols, &tables(sigma)?)?;
        debug_assert_eq!(self.segments.len(), seg);
        self.segments.push(bits.bytes);
        Ok(symbols)
    }

    fn segment_len(&self, seg: usize) -> usize {
        self.segments[seg].len()
    }
}

struct DecoderIo<'a> {
    file: &'a BitstreamFile,
}

impl SymbolIo for DecoderIo<'_> {
    fn segment(&mut self, seg: usize, _: Target, _: &[usize], _: &[f64], sigma: &[f64]) -> Result<Vec<i64>> {
        let bits = Bitstream {
            bytes: self.file.segments[seg].clone(),
        };
        decode(&bits, &tables(sigma)?).map_err(|e| match e {
            Error::Coder(m) => Error::Coder(format!("segment {}: {}", seg, m)),
            other => other,
        })
    }

    fn segment_len(&self, seg: usize) -> usize {
        self.file.segments[seg].len()
    }
}

/// Seeded model plus context configuration.
#[derive(Debug, Clone)]
pub struct Codec {
    weights: ModelWeights,
    toggles: ContextToggles,
    digest: u64,
}

impl Codec {
    pub fn new(weights: ModelWeights) -> Result<Self> {
        Codec::with_toggles(weights, ContextToggles::ALL)
    }

    pub fn with_toggles(weights: ModelWeights, toggles: ContextToggles) -> Result<Self> {
        weights.profile.validate()?;
        let base = weights.digest();
        let digest = if toggles == ContextToggles::ALL {
            base
        } else {
            let mut h = Sha256::new();
            h.update(base.to_le_bytes());
            h.update([toggles.mask()]);
            u64::from_le_bytes(h.finalize()[..8].try_into().expect("sha256 has 32 bytes"))
        };
        Ok(Codec {
            weights,
            toggles,
            digest,
        })
    }

    pub fn profile(&self) -> Profile {
        self.weights.profile
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn toggles(&self) -> ContextToggles {
        self.toggles
    }

    /// Header digest: weights digest, mixed with the toggle mask when any
    /// context is disabled.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    /// Code a latent with `M` channels; pixel dims are recorded as 16× the grid.
    pub fn encode_latent(&self, y: &Tensor4) -> Result<Coded> {
        self.encode_with_dims(y, y.height() * DOWNSCALE, y.width() * DOWNSCALE)
    }

    fn encode_with_dims(&self, y: &Tensor4, height: usize, width: usize) -> Result<Coded> {
        let p = self.profile();
        if y.channels() != p.m {
            return Err(Error::Config(format!(
                "profile {} codes {} channels, latent has {}",
                p.name,
                p.m,
                y.channels()
            )));
        }
        if y.height() == 0 || y.width() == 0 {
            return Err(Error::Shape("empty latent grid".into()));
        }
        if !y.is_finite() {
            return Err(Error::Domain("latent contains non-finite values".into()));
        }
        if latent_dims(height, width) != (y.height(), y.width()) {
            return Err(Error::Shape(format!(
                "pixel dims {}x{} do not map to latent {}x{}",
                height,
                width,
                y.height(),
                y.width()
            )));
        }
        let (h32, w32) = (dim_u32(height)?, dim_u32(width)?);
        let z = hyper_analysis(y, &self.weights.hyper)?;
        let mut io = EncoderIo {
            y,
            z,
            segments: Vec::new(),
        };
        let out = self.drive(&mut io, y.height(), y.width())?;
        let file = BitstreamFile {
            version: BITSTREAM_VERSION,
            profile_id: p.id,
            height: h32,
            width: w32,
            digest: self.digest,
            segments: io.segments,
        };
        Ok(out.finish(file, height * width))
    }

    pub fn decode_latent(&self, file: &BitstreamFile) -> Result<Coded> {
        let p = self.profile();
        if file.profile_id != p.id {
            return Err(Error::Format(format!(
                "bitstream uses profile {}, codec is {}",
                file.profile_id, p.name
            )));
        }
        if file.digest != self.digest {
            return Err(Error::Format(format!(
                "weights digest {:016x} does not match bitstream {:016x}",
                self.digest, file.digest
            )));
        }
        if file.segments.len() != 1 + 2 * p.slices {
            return Err(Error::Format(format!(
                "{} segments, profile {} needs {}",
                file.segments.len(),
                p.name,
                1 + 2 * p.slices
            )));
        }
        let (lh, lw) = latent_dims(file.height as usize, file.width as usize);
        if lh == 0 || lw == 0 {
            return Err(Error::Format("empty image in header".into()));
        }
        let mut io = DecoderIo { file };
        let out = self.drive(&mut io, lh, lw)?;
        Ok(out.finish(file.clone(), file.height as usize * file.width as usize))
    }

    /// Analysis transform then [`Codec::encode_latent`]; records the image size.
    pub fn encode_image(&self, image: &Tensor4) -> Result<Coded> {
        let y = toy_analysis(image, &self.weights.analysis)?;
        self.encode_with_dims(&y, image.height(), image.width())
    }

    /// [`Codec::decode_latent`] then synthesis of `ỹ` at the recorded size.
    pub fn decode_image(&self, file: &BitstreamFile) -> Result<(Tensor4, Coded)> {
        let coded = self.decode_latent(file)?;
        let img = toy_synthesis(
            &coded.y_tilde,
            &self.weights.synthesis,
            file.height as usize,
            file.width as usize,
        )?;
        Ok((img, coded))
    }

    fn drive(&self, io: &mut impl SymbolIo, lh: usize, lw: usize) -> Result<DriveOutput> {
        let p = self.profile();
        let w = &self.weights;
        let t = self.toggles;
        let mut segments = Vec::with_capacity(1 + 2 * p.slices);

        let (zh, zw) = hyper_dims(lh, lw);
        let z_sigma = z_scales(&w.hyper);
        let zn = zh * zw;
        let elems: Vec<usize> = (0..p.n * zn).collect();
        let mu = vec![0.0; elems.len()];
        let sigma: Vec<f64> = elems.iter().map(|&e| z_sigma[e / zn]).collect();
        let d = io.segment(0, Target::Z, &elems, &mu, &sigma)?;
        segments.push(segment_rate("z", &d, &sigma, io.segment_len(0))?);
        let z_hat = Tensor4::from_vec(p.n, zh, zw, d.iter().map(|&v| v as f64).collect())?;
        let phi_h = hyper_synthesis(&z_hat, &w.hyper, lh, lw)?;

        let part = CheckerboardPartition::new(lh, lw)?;
        let mut state = SliceState::new();
        let mut tilde = Vec::with_capacity(p.slices);
        let mut trace = Vec::with_capacity(p.slices);
        let zero_ctx = Tensor4::zeros(p.ctx_channels(), lh, lw);

        for i in 0..p.slices {
            let mut bundle = ContextBundle::with_hyper(&p, phi_h.clone());
            if i > 0 && t.channel {
                bundle.phi_ch = channel_context(&state, i, &w.channel[i])?;
            }
            if i > 0 && t.inter {
                bundle.phi_gc_inter = inter_global_context(&state, i, &w.inter[i])?;
            }

            let mut y_hat = Tensor4::zeros(p.s, lh, lw);
            let anchor = entropy_params(&bundle, Pass::Anchor, &w.entropy[i])?;
            let seg = 1 + 2 * i;
            let rate = code_positions(io, seg, i, &p, &part, part.anchors(), &anchor, &mut y_hat)?;
            segments.push(SegmentRate {
                name: format!("slice{}_anchor", i),
                ..rate
            });

            bundle.phi_lc = if t.local {
                local_context(&y_hat, &part, &w.local[i], p.window)?
            } else {
                zero_ctx.clone()
            };
            if i > 0 && t.intra {
                bundle.phi_gc_intra = intra_global_context(&state.slices()[i - 1], &y_hat, &part, &w.intra[i])?;
            }
            let nonanchor = entropy_params(&bundle, Pass::NonAnchor, &w.entropy[i])?;
            let seg = 2 + 2 * i;
            let rate = code_positions(io, seg, i, &p, &part, part.nonanchors(), &nonanchor, &mut y_hat)?;
            segments.push(SegmentRate {
                name: format!("slice{}_nonanchor", i),
                ..rate
            });

            state.push(y_hat)?;
            tilde.push(if t.lrp {
                lrp(&phi_h, state.slices(), &w.lrp[i])?
            } else {
                state.slices()[i].clone()
            });
            trace.push(SliceTrace { anchor, nonanchor });
        }

        let y_hat = Tensor4::concat_channels(&state.slices().iter().collect::<Vec<_>>())?;
        let y_tilde = Tensor4::concat_channels(&tilde.iter().collect::<Vec<_>>())?;
        Ok(DriveOutput {
            segments,
            z_hat,
            y_hat,
            y_tilde,
            trace,
        })
    }
}

struct DriveOutput {
    segments: Vec<SegmentRate>,
    z_hat: Tensor4,
    y_hat: Tensor4,
    y_tilde: Tensor4,
    trace: Vec<SliceTrace>,
}

impl DriveOutput {
    fn finish(self, file: BitstreamFile, pixels: usize) -> Coded {
        let report = RateReport {
            segments: self.segments,
            pixels,
            file_bytes: file.total_bytes(),
        };
        Coded {
            file,
            report,
            z_hat: self.z_hat,
            y_hat: self.y_hat,
            y_tilde: self.y_tilde,
            trace: self.trace,
        }
    }
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Shape(format!("dimension {} exceeds 32 bits", v)))
}

fn segment_rate(name: &str, d: &[i64], sigma: &[f64], bytes: usize) -> Result<SegmentRate> {
    let mut bits = 0.0;
    for (&v, &s) in d.iter().zip(sigma) {
        bits += symbol_rate_bits(v as f64, 0.0, s)?;
    }
    Ok(SegmentRate {
        name: name.to_string(),
        symbols: d.len(),
        estimated_bits: bits,
        actual_bytes: bytes,
    })
}

/// Code slice `i` at `positions` and write `ŷ = d + μ` into `y_hat`.
#[allow(clippy::too_many_arguments)]
fn code_positions(
    io: &mut impl SymbolIo,
    seg: usize,
    i: usize,
    p: &Profile,
    part: &CheckerboardPartition,
    positions: &[usize],
    field: &GaussianField,
    y_hat: &mut Tensor4,
) -> Result<SegmentRate> {
    let plane = part.height() * part.width();
    let n = p.s * positions.len();
    let mut elems = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for c in 0..p.s {
        let (m, s) = (field.mu.channel(c), field.sigma.channel(c));
        for &t in positions {
            elems.push((i * p.s + c) * plane + t);
            mu.push(m[t]);
            sigma.push(s[t]);
        }
    }
    let d = io.segment(seg, Target::Y, &elems, &mu, &sigma)?;
    if d.len() != n {
        return Err(Error::Coder(format!("segment {} yielded {} of {} symbols", seg, d.len(), n)));
    }
    let mut k = 0;
    for c in 0..p.s {
        let dst = y_hat.channel_mut(c);
        for &t in positions {
            dst[t] = d[k] as f64 + mu[k];
            k += 1;
        }
    }
    segment_rate("", &d, &sigma, io.segment_len(seg))
}

/// Mean squared error between equally shaped tensors.
pub fn mse(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::quantize;
    use crate::numerics::{Seed, SplitMix64};

    fn latent(p: &Profile, h: usize, w: usize, seed: u64, spread: f64) -> Tensor4 {
        let mut g = SplitMix64::new(Seed(seed));
        Tensor4::from_fn(p.m, h, w, |_, _, _| (g.next_unit() * 2.0 - 1.0) * spread)
    }

    fn toy_codec(seed: u64) -> Codec {
        Codec::new(ModelWeights::generate(Profile::TOY, Seed(seed)).unwrap()).unwrap()
    }

    #[test]
    fn latent_round_trip_and_fields_match() {
        let codec = toy_codec(3);
        let y = latent(&Profile::TOY, 5, 6, 11, 6.0);
        let enc = codec.encode_latent(&y).unwrap();
        let bytes = enc.file.to_bytes();
        let dec = codec.decode_latent(&BitstreamFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(dec.y_hat, enc.y_hat);
        assert_eq!(dec.z_hat, enc.z_hat);
        assert_eq!(dec.y_tilde, enc.y_tilde);
        assert_eq!(dec.trace, enc.trace);
        assert_eq!(dec.report, enc.report);
        // ŷ is y quantized against the mean used for its pass.
        let p = Profile::TOY;
        let part = CheckerboardPartition::new(5, 6).unwrap();
        for i in 0..p.slices {
            for c in 0..p.s {
                let g = i * p.s + c;
                for &t in part.anchors() {
                    let mu = enc.trace[i].anchor.mu.channel(c)[t];
                    assert_eq!(enc.y_hat.channel(g)[t], quantize(y.channel(g)[t], mu));
                }
                for &t in part.nonanchors() {
                    let mu = enc.trace[i].nonanchor.mu.channel(c)[t];
                    assert_eq!(enc.y_hat.channel(g)[t], quantize(y.channel(g)[t], mu));
                }
            }
        }
    }

    #[test]
    fn report_decomposes() {
        let codec = toy_codec(4);
        let enc = codec.encode_latent(&latent(&Profile::TOY, 4, 4, 2, 3.0)).unwrap();
        let r = &enc.report;
        assert_eq!(r.segments.len(), 9);
        let parts = r.z_bits() + (0..4).map(|i| r.anchor_bits(i) + r.nonanchor_bits(i)).sum::<f64>();
        assert!((r.total_estimated_bits() - parts).abs() <= 1e-6);
        assert_eq!(r.file_bytes, enc.file.to_bytes().len());
        assert_eq!(r.pixels, 64 * 64);
    }

    #[test]
    fn zero_weights_code_unit_gaussian() {
        let p = Profile::TOY;
        let codec = Codec::new(ModelWeights::zeros(p).unwrap()).unwrap();
        let y = latent(&p, 32, 32, 9, 0.49);
        let enc = codec.encode_latent(&y).unwrap();
        assert!(enc.y_hat.data().iter().all(|&v| v == 0.0));
        let n = (p.m * 1024) as f64;
        let coded_bits: f64 = enc.report.segments[1..].iter().map(|s| 8.0 * s.actual_bytes as f64).sum();
        assert!((coded_bits / (n * 1.38494) - 1.0).abs() < 0.02, "{coded_bits}");
    }

    #[test]
    fn digest_and_profile_mismatch_rejected() {
        let a = toy_codec(1);
        let b = toy_codec(2);
        let enc = a.encode_latent(&latent(&Profile::TOY, 2, 2, 1, 2.0)).unwrap();
        assert!(matches!(b.decode_latent(&enc.file), Err(Error::Format(_))));
        let single = Codec::new(ModelWeights::generate(Profile::SINGLE_SLICE, Seed(1)).unwrap()).unwrap();
        assert!(matches!(single.decode_latent(&enc.file), Err(Error::Format(_))));
        assert!(matches!(
            a.encode_latent(&Tensor4::zeros(8, 2, 2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn toggles_change_stream_and_round_trip() {
        let w = ModelWeights::generate(Profile::TOY, Seed(6)).unwrap();
        let y = latent(&Profile::TOY, 4, 5, 3, 5.0);
        let full = Codec::new(w.clone()).unwrap().encode_latent(&y).unwrap();
        for off in 0..5 {
            let mut t = ContextToggles::ALL;
            match off {
                0 => t.channel = false,
                1 => t.local = false,
                2 => t.intra = false,
                3 => t.inter = false,
                _ => t.lrp = false,
            }
            let codec = Codec::with_toggles(w.clone(), t).unwrap();
            let enc = codec.encode_latent(&y).unwrap();
            assert_ne!(enc.file, full.file);
            let dec = codec.decode_latent(&enc.file).unwrap();
            assert_eq!(dec.y_hat, enc.y_hat);
            assert_eq!(dec.y_tilde, enc.y_tilde);
            assert_eq!(codec.encode_latent(&y).unwrap().file, enc.file);
        }
    }

    #[test]
    fn image_round_trip() {
        let codec = toy_codec(7);
        let img = Tensor4::from_fn(3, 20, 37, |c, h, w| ((c + h * 3 + w * 5) % 17) as f64 / 16.0);
        let enc = codec.encode_image(&img).unwrap();
        assert_eq!((enc.file.height, enc.file.width), (20, 37));
        let (rec, dec) = codec.decode_image(&enc.file).unwrap();
        assert_eq!(dec.y_hat, enc.y_hat);
        assert_eq!(rec.dims(), (3, 20, 37));
        assert!(mse(&img, &rec).unwrap().is_finite());
        assert_eq!(
            rec,
            toy_synthesis(&enc.y_tilde, &codec.weights().synthesis, 20, 37).unwrap()
        );
    }

    #[test]
    fn tampering_is_detected() {
        let codec = toy_codec(8);
        let enc = codec.encode_latent(&latent(&Profile::TOY, 4, 4, 5, 4.0)).unwrap();
        let mut hits = 0;
        for seg in 0..enc.file.segments.len() {
            let mut f = enc.file.clone();
            let k = f.segments[seg].len() / 2;
            f.segments[seg][k] ^= 0x5a;
            match codec.decode_latent(&f) {
                Err(_) => hits += 1,
                Ok(d) => {
                    if d.y_hat != enc.y_hat || d.z_hat != enc.z_hat {
                        hits += 1;
                    }
                }
            }
        }
        assert_eq!(hits, enc.file.segments.len());
    }
}
