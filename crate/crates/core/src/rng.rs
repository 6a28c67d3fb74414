//! Counter-based 64-bit generator used for every seeded behaviour.
//!
//! The stream is fully specified so other implementations can reproduce it:
//!
//! ```text
//! GAMMA = 0x9E37_79B9_7F4A_7C15
//! next_u64():
//!     counter += 1                              (wrapping)
//!     z = seed + counter * GAMMA                (wrapping)
//!     z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//!     z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//!     return z ^ (z >> 31)
//! next_f64()   = (next_u64() >> 11) * 2^-53     in [0, 1)
//! next_f32()   = (next_u64() >> 40) * 2^-24     in [0, 1)
//! below(n)     = (next_u64() * n) >> 64         128-bit product, n >= 1
//! derive(key)  = Rng::new(mix(seed ^ mix(key)))  where mix is the finaliser above
//! ```
//!
//! This is SplitMix64 expressed as a function of `(seed, counter)`, so any
//! position of the stream can be computed without replaying it.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Output at an absolute stream position (1-based), without advancing.
    pub fn at(&self, counter: u64) -> u64 {
        mix(self.seed.wrapping_add(counter.wrapping_mul(GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        self.at(self.counter)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "Rng::below called with n = 0");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform float in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Bernoulli draw with probability `p`. Always consumes one output.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Independent generator keyed off this one's seed.
    pub fn derive(&self, key: u64) -> Rng {
        Rng::new(mix(self.seed ^ mix(key)))
    }
}
