//! Mean-scale Gaussian conditional model.
//!
//! A symbol is the integer offset `d = ŷ - μ`. Its probability is the mass
//! of `N(0, σ²)` over `[d - 0.5, d + 0.5)`, and its estimated cost is the
//! negative base-2 log of that mass. For coding, the offsets `[-64, 64]`
//! get one bin each, with one escape bin on either side for outliers;
//! escaped offsets carry a raw 16-bit magnitude payload.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::numerics::Tensor4;

/// Largest offset with its own bin.
pub const SUPPORT: i32 = 64;
/// Bins: low escape, `[-SUPPORT, SUPPORT]`, high escape.
pub const NUM_BINS: usize = 2 * SUPPORT as usize + 3;
pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;
/// Escape payload range: `|d| - (SUPPORT + 1)` must fit in 16 bits.
pub const MAX_ESCAPE_PAYLOAD: u32 = (1 << 16) - 1;

/// Lower bound applied to the raw scale before `exp`.
pub const LOG_SCALE_BOUND: f64 = 10.0;

/// Per-element Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub mu: Tensor4,
    pub sigma: Tensor4,
}

impl GaussianField {
    pub fn new(mu: Tensor4, sigma: Tensor4) -> Result<Self> {
        if mu.dims() != sigma.dims() {
            return Err(Error::Shape(format!(
                "mean {:?} vs scale {:?}",
                mu.dims(),
                sigma.dims()
            )));
        }
        if let Some(s) = sigma.data().iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain(format!("non-positive scale {}", s)));
        }
        Ok(GaussianField { mu, sigma })
    }

    /// Unit Gaussian everywhere.
    pub fn standard(channels: usize, height: usize, width: usize) -> Self {
        GaussianField {
            mu: Tensor4::zeros(channels, height, width),
            sigma: Tensor4::filled(channels, height, width, 1.0),
        }
    }
}

/// `σ = exp(clamp(raw, -10, 10))`.
#[inline]
pub fn scale_from_raw(raw: f64) -> f64 {
    raw.clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND).exp()
}

/// `round(y - μ) + μ`, ties away from zero.
#[inline]
pub fn quantize(y: f64, mu: f64) -> f64 {
    (y - mu).round() + mu
}

/// Integer offset `round(y - μ)`.
#[inline]
pub fn quantize_offset(y: f64, mu: f64) -> i64 {
    (y - mu).round() as i64
}

/// Mass of `N(0, σ²)` on `[d - 0.5, d + 0.5)`.
///
/// Evaluated on `|d|` through complementary error functions so that both
/// tails keep full relative accuracy and the result is exactly symmetric.
pub fn bin_probability(d: f64, sigma: f64) -> f64 {
    let d = d.abs();
    let lo = (d - 0.5) / (sigma * SQRT_2);
    let hi = (d + 0.5) / (sigma * SQRT_2);
    let p = if lo >= 0.0 {
        0.5 * (libm::erfc(lo) - libm::erfc(hi))
    } else {
        // Interval straddles the mean: Φ(hi) - Φ(lo) = (erf(hi) + erf(-lo)) / 2.
        0.5 * (libm::erf(hi) + libm::erf(-lo))
    };
    p.clamp(0.0, 1.0)
}

/// Mass of `N(0, σ²)` above `t` (upper tail).
pub fn upper_tail(t: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(t / (sigma * SQRT_2))
}

/// Estimated bits for coding `ŷ` under `N(μ, σ²)`.
pub fn symbol_rate_bits(y_hat: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("scale must be positive, got {}", sigma)));
    }
    let p = bin_probability(y_hat - mu, sigma).max(f64::MIN_POSITIVE);
    Ok((-p.log2()).max(0.0))
}

/// Sum of [`symbol_rate_bits`] over a tensor.
pub fn tensor_rate_bits(y_hat: &Tensor4, field: &GaussianField) -> Result<f64> {
    if y_hat.dims() != field.mu.dims() {
        return Err(Error::Shape(format!(
            "latent {:?} vs field {:?}",
            y_hat.dims(),
            field.mu.dims()
        )));
    }
    let mut bits = 0.0;
    for ((&y, &m), &s) in y_hat
        .data()
        .iter()
        .zip(field.mu.data())
        .zip(field.sigma.data())
    {
        bits += symbol_rate_bits(y, m, s)?;
    }
    Ok(bits)
}

/// `R / pixels + λ · D`.
pub fn loss_eval(rate_bits: f64, distortion_mse: f64, lambda: f64, pixels: usize) -> f64 {
    rate_bits / pixels.max(1) as f64 + lambda * distortion_mse
}

/// Where an offset lands in a [`CdfTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinRef {
    Direct(usize),
    /// Escape bin plus the 16-bit magnitude payload.
    Escape { bin: usize, payload: u32 },
}

/// Quantised cumulative distribution over the offset bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    offset: i32,
    cumulative: Vec<u32>,
}

impl CdfTable {
    /// Smallest offset with its own bin.
    pub fn offset(&self) -> i32 {
        self.offset
    }

    /// `NUM_BINS + 1` entries, `0` first and `TOTAL` last.
    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn num_bins(&self) -> usize {
        self.cumulative.len() - 1
    }

    #[inline]
    pub fn range(&self, bin: usize) -> (u32, u32) {
        let lo = self.cumulative[bin];
        (lo, self.cumulative[bin + 1] - lo)
    }

    pub fn count(&self, bin: usize) -> u32 {
        self.range(bin).1
    }

    /// Bin whose cumulative interval contains `target < TOTAL`.
    pub fn find(&self, target: u32) -> usize {
        // Largest i with cumulative[i] <= target.
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    pub fn low_escape(&self) -> usize {
        0
    }

    pub fn high_escape(&self) -> usize {
        self.num_bins() - 1
    }

    pub fn locate(&self, d: i64) -> Result<BinRef> {
        let lo = self.offset as i64;
        let hi = lo + self.num_bins() as i64 - 3;
        if d >= lo && d <= hi {
            return Ok(BinRef::Direct((d - lo) as usize + 1));
        }
        let (bin, excess) = if d < lo {
            (self.low_escape(), lo - 1 - d)
        } else {
            (self.high_escape(), d - hi - 1)
        };
        if excess > MAX_ESCAPE_PAYLOAD as i64 {
            return Err(Error::Coder(format!("offset {} beyond escape range", d)));
        }
        Ok(BinRef::Escape {
            bin,
            payload: excess as u32,
        })
    }

    /// Inverse of [`CdfTable::locate`].
    pub fn offset_of(&self, bin: usize, payload: Option<u32>) -> i64 {
        let lo = self.offset as i64;
        let hi = lo + self.num_bins() as i64 - 3;
        if bin == self.low_escape() {
            lo - 1 - payload.unwrap_or(0) as i64
        } else if bin == self.high_escape() {
            hi + 1 + payload.unwrap_or(0) as i64
        } else {
            lo + bin as i64 - 1
        }
    }

    pub fn is_escape(&self, bin: usize) -> bool {
        bin == self.low_escape() || bin == self.high_escape()
    }

    /// Ideal code length of a bin under this table.
    pub fn self_information(&self, bin: usize) -> f64 {
        -(self.count(bin) as f64 / TOTAL as f64).log2()
    }
}

/// Unquantised bin probabilities for scale `sigma`, low escape first.
pub fn bin_probabilities(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("scale must be positive, got {}", sigma)));
    }
    let tail = upper_tail(SUPPORT as f64 + 0.5, sigma);
    let mut p = Vec::with_capacity(NUM_BINS);
    p.push(tail);
    for d in -SUPPORT..=SUPPORT {
        p.push(bin_probability(d as f64, sigma));
    }
    p.push(tail);
    Ok(p)
}

/// 16-bit table for `N(μ, σ²)` offsets. Only `σ` matters since symbols are
/// offsets from the mean.
///
/// Each bin first receives one count; the remaining `TOTAL - NUM_BINS`
/// counts are shared by largest remainder (ties to the lower bin).
pub fn build_cdf(sigma: f64) -> Result<CdfTable> {
    let p = bin_probabilities(sigma)?;
    let norm: f64 = p.iter().sum();
    let spare = (TOTAL as usize - NUM_BINS) as f64;
    let mut counts = vec![1u32; NUM_BINS];
    let mut remainders = Vec::with_capacity(NUM_BINS);
    let mut assigned = 0u32;
    for (i, &pi) in p.iter().enumerate() {
        let target = pi / norm * spare;
        let whole = target.floor();
        counts[i] += whole as u32;
        assigned += whole as u32;
        remainders.push((target - whole, i));
    }
    let left = (TOTAL as usize - NUM_BINS) as u32 - assigned;
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(left as usize) {
        counts[i] += 1;
    }
    let mut cumulative = Vec::with_capacity(NUM_BINS + 1);
    let mut acc = 0u32;
    cumulative.push(0);
    for c in counts {
        acc += c;
        cumulative.push(acc);
    }
    debug_assert_eq!(acc, TOTAL);
    Ok(CdfTable {
        offset: -SUPPORT,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // -log2(Φ(0.5) - Φ(-0.5)) and friends, evaluated with 40-digit arithmetic.
    const RATE_D0_S1: f64 = 1.384_866_534_290_989_7;
    const RATE_D1_S02: f64 = 7.331_268_769_179_324;
    const RATE_D3_S02: f64 = 117.689_244_302_839_61;
    const RATE_D3_S1: f64 = 7.386_353_992_888_302;
    const RATE_D8_S1: f64 = 44.833_462_357_855_31;
    const RATE_D8_S8: f64 = 5.047_095_951_804_143;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(1.3, 0.0), 1.0);
        assert!((quantize(1.3, 0.4) - 1.4).abs() < 1e-15);
        assert_eq!(quantize(-0.5, 0.0), -1.0);
        assert_eq!(quantize(0.5, 0.0), 1.0);
        assert_eq!(quantize_offset(-2.5, 0.0), -3);
    }

    #[test]
    fn unit_scale_zero_offset_rate() {
        let r = symbol_rate_bits(0.0, 0.0, 1.0).unwrap();
        assert!((r - RATE_D0_S1).abs() < 1e-12, "{r}");
        assert!((r - 1.38494).abs() < 1e-4);
    }

    #[test]
    fn rates_match_high_precision_reference() {
        for (d, s, want) in [
            (1.0, 0.2, RATE_D1_S02),
            (3.0, 0.2, RATE_D3_S02),
            (3.0, 1.0, RATE_D3_S1),
            (8.0, 1.0, RATE_D8_S1),
            (8.0, 8.0, RATE_D8_S8),
        ] {
            let got = symbol_rate_bits(d, 0.0, s).unwrap();
            assert!((got - want).abs() / want < 1e-10, "d={d} s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn tiny_scale_costs_nothing() {
        assert!(symbol_rate_bits(0.0, 0.0, 1e-4).unwrap() < 1e-9);
    }

    #[test]
    fn rate_symmetry_and_domain() {
        for s in [0.1, 0.7, 3.0, 40.0] {
            for d in 0..20 {
                let a = symbol_rate_bits(d as f64 + 0.25, 0.25, s).unwrap();
                let b = symbol_rate_bits(-(d as f64) + 0.25, 0.25, s).unwrap();
                assert_eq!(a, b);
            }
        }
        assert!(matches!(symbol_rate_bits(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(symbol_rate_bits(0.0, 0.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(build_cdf(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tensor_rate_sums_elements() {
        let y = Tensor4::zeros(2, 3, 3);
        let f = GaussianField::standard(2, 3, 3);
        let bits = tensor_rate_bits(&y, &f).unwrap();
        assert!((bits - 18.0 * RATE_D0_S1).abs() < 1e-9);
        assert!((bits - 18.0 * 1.38494).abs() < 18.0 * 1e-4);
        let single = Tensor4::filled(1, 1, 1, 2.0);
        let f1 = GaussianField::new(Tensor4::filled(1, 1, 1, 0.5), Tensor4::filled(1, 1, 1, 1.5)).unwrap();
        assert_eq!(
            tensor_rate_bits(&single, &f1).unwrap(),
            symbol_rate_bits(2.0, 0.5, 1.5).unwrap()
        );
        assert!(matches!(
            tensor_rate_bits(&Tensor4::zeros(1, 3, 3), &f),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_eval(3.0, 2.0, 0.0, 1), 3.0);
        assert_eq!(loss_eval(3.0, 0.0, 0.5, 1), 3.0);
        assert!((loss_eval(1.0, 1.0, 0.0483, 1) - 1.0483).abs() < 1e-15);
        assert_eq!(loss_eval(64.0, 0.0, 1.0, 32), 2.0);
    }

    #[test]
    fn table_totals_and_shape() {
        for s in [1e-4, 0.2, 1.0, 8.0, 1e4] {
            let t = build_cdf(s).unwrap();
            assert_eq!(t.num_bins(), NUM_BINS);
            assert_eq!(*t.cumulative().last().unwrap(), TOTAL);
            assert!(t.cumulative().windows(2).all(|w| w[1] > w[0]));
        }
        let t = build_cdf(1.0).unwrap();
        let center = t.locate(0).unwrap();
        let BinRef::Direct(c) = center else { panic!() };
        assert!((0..NUM_BINS).all(|b| b == c || t.count(b) < t.count(c)));
    }

    #[test]
    fn probabilities_sum_to_one() {
        for s in [0.05, 0.2, 1.0, 8.0, 30.0, 100.0] {
            let total: f64 = bin_probabilities(s).unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "sigma {s}: {total}");
        }
    }

    #[test]
    fn locate_round_trips() {
        let t = build_cdf(2.0).unwrap();
        for d in [-65_600i64, -66, -65, -64, -1, 0, 5, 64, 65, 66, 65_600] {
            let r = t.locate(d).unwrap();
            let back = match r {
                BinRef::Direct(b) => t.offset_of(b, None),
                BinRef::Escape { bin, payload } => t.offset_of(bin, Some(payload)),
            };
            assert_eq!(back, d);
        }
        assert!(matches!(t.locate(65 + 65_536), Err(Error::Coder(_))));
        assert!(matches!(t.locate(-70_000), Err(Error::Coder(_))));
        assert_eq!(t.locate(-65).unwrap(), BinRef::Escape { bin: 0, payload: 0 });
        assert_eq!(t.locate(65).unwrap(), BinRef::Escape { bin: NUM_BINS - 1, payload: 0 });
    }

    #[test]
    fn find_inverts_range() {
        let t = build_cdf(0.7).unwrap();
        for b in 0..t.num_bins() {
            let (lo, f) = t.range(b);
            assert_eq!(t.find(lo), b);
            assert_eq!(t.find(lo + f - 1), b);
        }
    }

    #[test]
    fn coded_length_tracks_scalar_rate() {
        // Each bin holds 1 + floor(p R) or 2 + floor(p R) counts with
        // R = TOTAL - NUM_BINS, so its code length differs from -log2 p by at
        // most max(log2(TOTAL / R), log2(R / TOTAL + 2 / (TOTAL p))).
        let r = (TOTAL as usize - NUM_BINS) as f64;
        let total = TOTAL as f64;
        for s in [0.2, 1.0, 8.0] {
            let t = build_cdf(s).unwrap();
            for d in -8i64..=8 {
                let BinRef::Direct(b) = t.locate(d).unwrap() else { panic!() };
                let p = bin_probability(d as f64, s);
                let rate = symbol_rate_bits(d as f64, 0.0, s).unwrap();
                let bound = (total / r).log2().max((r / total + 2.0 / (total * p)).log2());
                let diff = (t.self_information(b) - rate).abs();
                assert!(diff <= 0.001 + bound, "s={s} d={d}: diff {diff} bound {bound}");
            }
        }
    }
}
