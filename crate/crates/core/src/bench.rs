//! Scaling benchmarks for the global attention kernels and the codec.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::attention::{linear_global_attention_measured, materialized_linear_attention_measured, Measured, Qkv};
use crate::codec::Codec;
use crate::context::{ModelWeights, Profile};
use crate::error::{Error, Result};
use crate::numerics::{Seed, SplitMix64, Tensor4, TokenMatrix};

/// Largest token count for which the quadratic reference is run.
pub const ORACLE_TOKEN_CAP: usize = 16384;
/// Channel width of the benchmark queries, keys and values.
pub const HEAD_DIM: usize = 32;
/// Relative tolerance of the linear / quadratic equivalence gate.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

/// One resolution of [`bench_attention`]. Quadratic fields are `None` when
/// the token count exceeds [`ORACLE_TOKEN_CAP`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub resolution: usize,
    pub tokens: usize,
    pub linear_time_s: f64,
    pub quad_time_s: Option<f64>,
    pub linear_elems: usize,
    pub quad_elems: Option<usize>,
}

impl ScalingRow {
    pub fn oracle_skipped(&self) -> bool {
        self.quad_time_s.is_none()
    }
}

/// One resolution of [`bench_codec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodecRow {
    pub resolution: usize,
    pub symbols: usize,
    pub encode_time_s: f64,
    pub decode_time_s: f64,
    pub bpp: f64,
}

/// Random attention inputs with `tokens` rows of [`HEAD_DIM`] channels.
pub fn random_qkv(tokens: usize, seed: Seed) -> Qkv {
    let mut g = SplitMix64::new(seed);
    let mut m = || TokenMatrix::from_fn(tokens, HEAD_DIM, |_, _| 4.0 * g.next_unit() - 2.0);
    let (q, k, v) = (m(), m(), m());
    Qkv::new(q, k, v).expect("shapes agree by construction")
}

/// `‖a - b‖ / ‖b‖` in the Frobenius norm; `0` when both are zero.
pub fn relative_error(a: &TokenMatrix, b: &TokenMatrix) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.data().iter().map(|y| y * y).sum();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Shortest wall time of one sample; fast calls are batched up to it.
const MIN_SAMPLE_S: f64 = 0.02;

fn timed(repeats: usize, mut f: impl FnMut() -> Result<Measured>) -> Result<(f64, usize)> {
    let elems = f()?.peak_elements;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let mut calls = 0u32;
        while calls == 0 || t.elapsed().as_secs_f64() < MIN_SAMPLE_S {
            f()?;
            calls += 1;
        }
        times.push(t.elapsed().as_secs_f64() / calls as f64);
    }
    Ok((median(times), elems))
}

fn check_sizes(resolutions: &[usize], repeats: usize) -> Result<()> {
    if resolutions.is_empty() || resolutions.contains(&0) {
        return Err(Error::Config("resolutions must be non-empty and positive".into()));
    }
    if resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("resolutions must be strictly ascending".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    Ok(())
}

/// Time the linear kernel and its materialised reference on `H = W = r`
/// grids. The two are checked for equivalence on the smallest grid first.
pub fn bench_attention(resolutions: &[usize], repeats: usize, seed: Seed) -> Result<Vec<ScalingRow>> {
    check_sizes(resolutions, repeats)?;
    let smallest = random_qkv(resolutions[0] * resolutions[0], seed);
    let lin = linear_global_attention_measured(&smallest)?;
    let quad = materialized_linear_attention_measured(&smallest)?;
    let err = relative_error(&quad.output, &lin.output);
    if !(err <= EQUIVALENCE_TOL) {
        return Err(Error::State(format!(
            "linear and materialised attention disagree: relative error {:e}",
            err
        )));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for (i, &r) in resolutions.iter().enumerate() {
        let tokens = r * r;
        let qkv = random_qkv(tokens, Seed(seed.0.wrapping_add(i as u64)));
        let (linear_time_s, linear_elems) = timed(repeats, || linear_global_attention_measured(&qkv))?;
        let (quad_time_s, quad_elems) = if tokens <= ORACLE_TOKEN_CAP {
            let (t, e) = timed(repeats, || materialized_linear_attention_measured(&qkv))?;
            (Some(t), Some(e))
        } else {
            (None, None)
        };
        rows.push(ScalingRow {
            resolution: r,
            tokens,
            linear_time_s,
            quad_time_s,
            linear_elems,
            quad_elems,
        });
    }
    Ok(rows)
}

/// Encode / decode times and rate for random latents on `r × r` grids.
pub fn bench_codec(resolutions: &[usize], profile: Profile, repeats: usize, seed: Seed) -> Result<Vec<CodecRow>> {
    check_sizes(resolutions, repeats)?;
    let codec = Codec::new(ModelWeights::generate(profile, seed)?)?;
    let mut rows = Vec::with_capacity(resolutions.len());
    for (i, &r) in resolutions.iter().enumerate() {
        let mut g = SplitMix64::new(Seed(seed.0 ^ (0x9e37 + i as u64)));
        let y = Tensor4::from_fn(profile.m, r, r, |_, _, _| 8.0 * g.next_unit() - 4.0);
        let coded = codec.encode_latent(&y)?;
        let back = codec.decode_latent(&coded.file)?;
        if back.y_hat != coded.y_hat {
            return Err(Error::State(format!("codec round trip failed at {}x{}", r, r)));
        }
        let mut enc_t = Vec::with_capacity(repeats);
        let mut dec_t = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            let c = codec.encode_latent(&y)?;
            enc_t.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            codec.decode_latent(&c.file)?;
            dec_t.push(t.elapsed().as_secs_f64());
        }
        rows.push(CodecRow {
            resolution: r,
            symbols: y.data().len(),
            encode_time_s: median(enc_t),
            decode_time_s: median(dec_t),
            bpp: coded.report.bpp(),
        });
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with header `resolution,tokens,linear_time_s,quad_time_s,linear_elems,quad_elems`;
/// skipped oracle cells are empty.
pub fn write_scaling_csv(out: impl Write, rows: &[ScalingRow]) -> Result<()> {
    write_rows(out, rows)
}

/// CSV with header `resolution,symbols,encode_time_s,decode_time_s,bpp`.
pub fn write_codec_csv(out: impl Write, rows: &[CodecRow]) -> Result<()> {
    write_rows(out, rows)
}

/// Least-squares line `y = a + b·x` and its coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (a, b, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_attention_bench() {
        let rows = bench_attention(&[4, 8, 16], 1, Seed(1)).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.tokens, r.resolution * r.resolution);
            assert!(r.quad_elems.unwrap() >= r.tokens * r.tokens);
            if r.tokens > 2 * HEAD_DIM {
                assert!(r.linear_elems < r.quad_elems.unwrap());
            }
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.tokens as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.linear_elems as f64).collect();
        assert!(linear_fit(&xs, &ys).2 > 0.999);
    }

    #[test]
    fn oracle_skipped_above_cap() {
        let rows = bench_attention(&[2, 129], 1, Seed(2)).unwrap();
        assert!(!rows[0].oracle_skipped());
        assert!(rows[1].oracle_skipped());
        let mut buf = Vec::new();
        write_scaling_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "resolution,tokens,linear_time_s,quad_time_s,linear_elems,quad_elems"
        );
        assert!(lines.nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(matches!(bench_attention(&[8, 4], 1, Seed(0)), Err(Error::Config(_))));
        assert!(matches!(bench_attention(&[], 1, Seed(0)), Err(Error::Config(_))));
        assert!(matches!(bench_attention(&[4], 0, Seed(0)), Err(Error::Config(_))));
    }

    #[test]
    fn codec_bench_rows() {
        let t = Instant::now();
        let rows = bench_codec(&[4], Profile::TOY, 1, Seed(3)).unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0);
        assert_eq!(rows[0].symbols, 32 * 16);
        assert!(rows[0].bpp > 0.0);
        let mut buf = Vec::new();
        write_codec_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("resolution,symbols,encode_time_s,decode_time_s,bpp\n"));
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        let (a, b, r2) = linear_fit(&xs, &ys);
        assert!((a - 3.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
