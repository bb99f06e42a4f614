use crate::error::{Error, Result};

/// Deterministic 64-bit generator (SplitMix64, Steele et al. 2014).
///
/// State advances by the golden-ratio increment and each output is the
/// standard 2-round xor-multiply finalizer. The same seed always yields the
/// same stream on every platform, so experiments replay bit-exactly.
///
/// `derive` builds statistically independent child streams from the parent
/// seed plus structural tags (epoch, batch, sentence, purpose). Derivation
/// never consumes parent state, which keeps resumed runs identical to
/// uninterrupted ones.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `tags`. Independent of how much of the parent
    /// stream has been consumed.
    pub fn derive(&self, tags: &[u64]) -> Rng {
        let mut s = self.seed;
        for (i, t) in tags.iter().enumerate() {
            s = mix(s ^ t.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        }
        Rng::new(mix(s))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> Result<f64> {
        if !(low < high) {
            return Err(Error::InvalidArgument {
                op: "uniform",
                msg: format!("low ({low}) must be < high ({high})"),
            });
        }
        Ok(low + (high - low) * self.next_f64())
    }

    /// Uniform integer in `[0, n)` (Lemire multiply-shift; n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// True with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
