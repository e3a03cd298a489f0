//! Inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reversal_core::datagen::ArithmeticInstance;
use reversal_core::{Format, TokenSequence};

/// `count` random d-digit ForwardX instances, rendered left to right.
pub fn forward_batch(count: usize, digits: usize, seed: u64) -> Vec<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = 10u64.pow(digits as u32);
    (0..count)
        .map(|_| {
            ArithmeticInstance::new(rng.gen_range(0..hi), rng.gen_range(0..hi), digits, Format::ForwardX)
                .expect("digits in range")
                .render()
        })
        .collect()
}

/// Row-major ids of equal-length sequences.
pub fn flat_ids(seqs: &[TokenSequence]) -> Vec<usize> {
    seqs.iter().flat_map(|s| s.ids()).collect()
}
