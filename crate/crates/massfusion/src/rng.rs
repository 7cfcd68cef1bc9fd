//! Seedable, portable random number generation.
//!
//! Everything that consumes randomness in this crate goes through
//! [`Rng`], a SplitMix64 generator. The generator, the float-conversion
//! rule and the derived distributions below are fixed algorithms built
//! from IEEE-exact operations only (`+ - * /`, integer ops), so a given
//! seed produces bit-identical streams on every platform and toolchain.
//!
//! Independent substreams are derived with [`substream`], which hashes
//! `(seed, index)`; parallel workers can each own a substream without
//! sharing state.

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of the `index`-th child stream of `seed`.
pub fn substream(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_mul(0xA24B_AED4_963E_E407).wrapping_add(1)))
}

/// SplitMix64 pseudo-random generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Modulo reduction; the bias is below
    /// `n / 2^64` and irrelevant for the small ranges used here.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn uniform_u32(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo <= hi);
        lo + self.next_below(hi as u64 - lo as u64 + 1) as u32
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Standard-normal variate via the Irwin–Hall sum of 12 uniforms.
    ///
    /// Mean 0, variance exactly 1, support `[-6, 6]`; adequate for the
    /// jitter models here and free of platform-dependent libm calls.
    pub fn gaussian(&mut self) -> f64 {
        let mut sum = 0.0;
        for _ in 0..12 {
            sum += self.next_f64();
        }
        sum - 6.0
    }

    /// Coarse standard-normal variate from one draw: the four low bytes of
    /// a `u64` are summed (Irwin–Hall with n = 4 discrete lanes) and
    /// standardized. One generator step per sample; used for per-pixel
    /// texture noise where throughput matters more than tail quality.
    pub fn gaussian_coarse(&mut self) -> f64 {
        let bits = self.next_u64();
        let sum = (bits & 0xFF) + ((bits >> 8) & 0xFF) + ((bits >> 16) & 0xFF) + ((bits >> 24) & 0xFF);
        // sqrt(4 * (256^2 - 1) / 12): four lanes of discrete-uniform variance
        const SD: f64 = 147.80054127099805;
        (sum as f64 - 510.0) / SD
    }

    /// Poisson variate by Knuth's product-of-uniforms method.
    ///
    /// Uses [`exp_neg`] for the acceptance threshold, so the sampler stays
    /// bit-portable. Intended for small rates (events per image).
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        debug_assert!(lambda >= 0.0);
        if lambda == 0.0 {
            return 0;
        }
        let threshold = exp_neg(lambda);
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= self.next_f64();
            if p <= threshold {
                return k;
            }
            k += 1;
        }
    }
}

/// Portable `e^(-x)` for `x >= 0`.
///
/// Splits `x` into integer and fractional parts, multiplies out the
/// integer part from a constant and sums a fixed 18-term Taylor series
/// for the fraction. Relative error is a few ulps — not a correctly
/// rounded exp, but a fixed sequence of IEEE operations that yields the
/// same bits on every platform.
pub fn exp_neg(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x > 700.0 {
        // below the smallest positive f64 anyway
        return 0.0;
    }
    const E: f64 = std::f64::consts::E;
    let n = x.floor();
    let frac = x - n;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..=18 {
        term *= frac / i as f64;
        sum += term;
    }
    let mut int_part = 1.0;
    let mut remaining = n as u64;
    while remaining > 0 {
        int_part *= E;
        remaining -= 1;
    }
    1.0 / (int_part * sum)
}
