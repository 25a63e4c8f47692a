//! Named random sub-streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of the sub-stream `name` under `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    splitmix(root ^ splitmix(fnv1a(name)))
}

/// Seed of the `index`-th member of sub-stream `name`.
pub fn substream_idx(root: u64, name: &str, index: u64) -> u64 {
    splitmix(substream(root, name) ^ splitmix(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        assert_eq!(substream(7, "mask"), substream(7, "mask"));
        assert_ne!(substream(7, "mask"), substream(7, "dropout"));
        assert_ne!(substream(7, "mask"), substream(8, "mask"));
        assert_ne!(substream_idx(7, "utt", 0), substream_idx(7, "utt", 1));
    }
}
