//! Seeded randomness. Every stochastic component draws from a
//! [`SimRng`] created here, so a seed fully determines a run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator; independent streams are split off with
/// [`split`].
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives stream `stream` of the generator keyed by `seed`. Streams with
/// different ids never overlap.
pub fn split(seed: u64, stream: u64) -> SimRng {
    let mut rng = seeded(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw from the half-open interval (0, 1].
pub fn open_unit(rng: &mut SimRng) -> f64 {
    use rand::Rng;
    1.0 - rng.random::<f64>()
}
