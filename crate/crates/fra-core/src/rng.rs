//! Deterministic random number generation.
//!
//! Everything random in this crate (encoder weights, benchmark inputs, test
//! fixtures) flows through the generator defined here so that results are
//! bitwise reproducible across platforms and independent of any external
//! crate's implementation details.
//!
//! The generator is xorshift64* (Marsaglia's xorshift with the 12/25/27
//! triple, output scrambled by multiplication with 0x2545F4914F6CDD1D).
//! Seeds are pre-mixed through one round of SplitMix64 so that small or
//! structured user seeds still start from well-spread state.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* generator with SplitMix64 seeding.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            // xorshift state must be nonzero.
            state = SPLITMIX_GAMMA;
        }
        Rng { state }
    }

    /// Derive the seed of an independent stream from a master seed and a
    /// stream index. Stream k uses `splitmix64(master + (k+1) * gamma)`,
    /// so streams never collide with the master itself and the parallel
    /// schedule of the caller cannot affect which stream a consumer gets.
    pub fn stream_seed(master: u64, index: u64) -> u64 {
        splitmix64(master.wrapping_add(SPLITMIX_GAMMA.wrapping_mul(index + 1)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1): top 53 bits scaled by 2^-53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }
}
