//! Seed derivation. Every stochastic unit of work (a rollout, an epoch
//! shuffle, a simulated dialogue) gets its own generator seeded from the run
//! seed plus a path of indices, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_from(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// How to turn a probability vector into an index.
pub enum Choice<'a> {
    /// Highest probability, lowest index on ties.
    Greedy,
    Sample(&'a mut Rng),
}

impl Choice<'_> {
    pub fn pick(&mut self, probs: &[f64]) -> usize {
        use rand::Rng as _;
        match self {
            Choice::Greedy => crate::nn::ops::argmax(probs),
            Choice::Sample(rng) => crate::nn::ops::sample_index(probs, rng.gen::<f64>()),
        }
    }
}
