//! Container formats: coded bitstream, raw tensors, binary PPM images.

use std::fs;
use std::path::Path;

use crate::context::Profile;
use crate::error::{Error, Result};
use crate::numerics::Tensor4;

pub const BITSTREAM_MAGIC: &[u8; 4] = b"MEMB";
pub const BITSTREAM_VERSION: u8 = 1;
pub const TENSOR_MAGIC: &[u8; 4] = b"MEMT";

/// magic, version, profile, height, width, digest.
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 8;

/// Coded file: header plus `1 + 2·L_s` length-prefixed segments.
///
/// Segment 0 holds `ẑ`; segments `1 + 2i` and `2 + 2i` hold the anchor and
/// non-anchor symbols of slice `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamFile {
    pub version: u8,
    pub profile_id: u8,
    /// Pixel dimensions of the source.
    pub height: u32,
    pub width: u32,
    pub digest: u64,
    pub segments: Vec<Vec<u8>>,
}

impl BitstreamFile {
    pub fn profile(&self) -> Result<Profile> {
        Profile::from_id(self.profile_id)
    }

    pub fn z_segment(&self) -> &[u8] {
        &self.segments[0]
    }

    pub fn anchor_segment(&self, slice: usize) -> &[u8] {
        &self.segments[1 + 2 * slice]
    }

    pub fn nonanchor_segment(&self, slice: usize) -> &[u8] {
        &self.segments[2 + 2 * slice]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.segments.iter().map(|s| 4 + s.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body);
        out.extend_from_slice(BITSTREAM_MAGIC);
        out.push(self.version);
        out.push(self.profile_id);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.digest.to_le_bytes());
        for s in &self.segments {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != BITSTREAM_MAGIC {
            return Err(Error::Format("bad magic, not a coded bitstream".into()));
        }
        let version = bytes[4];
        if version != BITSTREAM_VERSION {
            return Err(Error::Format(format!("unsupported bitstream version {}", version)));
        }
        let profile_id = bytes[5];
        let profile = Profile::from_id(profile_id)?;
        let height = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let width = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let digest = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        if height == 0 || width == 0 {
            return Err(Error::Format(format!("empty image {}x{}", height, width)));
        }
        let expected = 1 + 2 * profile.slices;
        let mut segments = Vec::with_capacity(expected);
        let mut pos = HEADER_LEN;
        if pos == bytes.len() {
            return Err(Error::Format("no segments after header".into()));
        }
        while pos < bytes.len() {
            if segments.len() == expected {
                return Err(Error::Format(format!(
                    "{} bytes after the last segment",
                    bytes.len() - pos
                )));
            }
            let Some(len) = bytes.get(pos..pos + 4) else {
                return Err(Error::Coder("truncated segment length".into()));
            };
            let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
            pos += 4;
            let Some(seg) = bytes.get(pos..pos + len) else {
                return Err(Error::Coder(format!(
                    "segment {} truncated: {} of {} bytes",
                    segments.len(),
                    bytes.len() - pos,
                    len
                )));
            };
            segments.push(seg.to_vec());
            pos += len;
        }
        if segments.len() != expected {
            return Err(Error::Coder(format!(
                "{} segments present, profile {} needs {}",
                segments.len(),
                profile.name,
                expected
            )));
        }
        Ok(BitstreamFile {
            version,
            profile_id,
            height,
            width,
            digest,
            segments,
        })
    }

    pub fn total_bytes(&self) -> usize {
        HEADER_LEN + self.segments.iter().map(|s| 4 + s.len()).sum::<usize>()
    }
}

/// `MEMT | C | H | W` (u32 LE) then `C·H·W` f64 LE values.
pub fn tensor_to_bytes(t: &Tensor4) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [t.channels(), t.height(), t.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor file".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
    if bytes.len() - 16 != n.saturating_mul(8) {
        return Err(Error::Format(format!(
            "tensor {}x{}x{} needs {} value bytes, file has {}",
            c,
            h,
            w,
            8 * n,
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor4::from_vec(c, h, w, data)
}

/// Binary PPM (P6, maxval 255) to a `3 × H × W` tensor in `[0, 1]`.
pub fn ppm_from_bytes(bytes: &[u8]) -> Result<Tensor4> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::Format(format!("expected P6 PPM, found {:?}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PPM header field {:?}", s)))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PPM supported, maxval {}", maxval)));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("empty image {}x{}", w, h)));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != 3 * w * h {
        return Err(Error::Format(format!(
            "PPM raster has {} bytes, expected {}",
            raster.len(),
            3 * w * h
        )));
    }
    Ok(Tensor4::from_fn(3, h, w, |c, y, x| raster[3 * (y * w + x) + c] as f64 / 255.0))
}

/// `3 × H × W` tensor to binary PPM, values clamped to `[0, 1]`.
pub fn ppm_to_bytes(image: &Tensor4) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {}", image.channels())));
    }
    let (h, w) = (image.height(), image.width());
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((image.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_bitstream(path: &Path) -> Result<BitstreamFile> {
    BitstreamFile::from_bytes(&fs::read(path)?)
}

pub fn write_bitstream(path: &Path, file: &BitstreamFile) -> Result<()> {
    Ok(fs::write(path, file.to_bytes())?)
}

pub fn read_tensor(path: &Path) -> Result<Tensor4> {
    tensor_from_bytes(&fs::read(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor4) -> Result<()> {
    Ok(fs::write(path, tensor_to_bytes(t))?)
}

pub fn read_ppm(path: &Path) -> Result<Tensor4> {
    ppm_from_bytes(&fs::read(path)?)
}

pub fn write_ppm(path: &Path, image: &Tensor4) -> Result<()> {
    Ok(fs::write(path, ppm_to_bytes(image)?)?)
}
