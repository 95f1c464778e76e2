//! Seed derivation and counter-addressable random streams.
//!
//! Every random quantity in the crate is addressed by a `(seed, stream,
//! position)` triple so results never depend on evaluation order or on the
//! number of worker threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Streams reserved inside a per-trajectory seed. Field components use
/// streams `0..3`.
pub const STREAM_INITIAL_CONDITION: u64 = 16;
pub const STREAM_ORACLE_NOISE: u64 = 17;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for item `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// ChaCha8 generator positioned at the start of `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Same as [`stream_rng`] but positioned at 64-bit word `word`.
pub fn stream_rng_at(seed: u64, stream: u64, word: u64) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, stream);
    rng.set_word_pos(u128::from(word) * 2);
    rng
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `(0, 1]`, safe for logarithms.
#[inline]
pub fn open_unit_f64(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Pair of independent standard normals (Box–Muller) from two words.
pub fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = open_unit_f64(rng.next_u64());
    let u2 = unit_f64(rng.next_u64());
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Buffered standard-normal source built on [`normal_pair`].
pub struct NormalSource<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> NormalSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = normal_pair(&mut self.rng);
        self.spare = Some(b);
        a
    }
}
