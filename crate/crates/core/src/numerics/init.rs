//! Seeded, platform-independent parameter generation.
//!
//! A SplitMix64 stream is mapped to `uniform(-a, a)` with
//! `a = 1 / sqrt(fan_in)`. The top 53 bits of each output become a value
//! `u` in `[0, 1)`, then `(2u - 1) * a`. Only exact IEEE-754 operations
//! are involved (integer to float of a 53-bit value, multiplication by
//! powers of two, one `sqrt`), so the stream is bit-identical everywhere.

/// Seed for weight generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: Seed) -> Self {
        SplitMix64 { state: seed.0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fill `out` with `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` values.
    pub fn fill_uniform(&mut self, out: &mut [f64], fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in out.iter_mut() {
            *v = (2.0 * self.next_unit() - 1.0) * bound;
        }
    }
}

/// `len` values from a fresh stream seeded with `seed`.
pub fn gen_weights(seed: Seed, len: usize, fan_in: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    SplitMix64::new(seed).fill_uniform(&mut out, fan_in);
    out
}
