//! Synthetic feature datasets for exercising the classifier in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeatureVector;

/// `n` points uniform on the unit square, labelled 1 iff both features exceed
/// `0.6`, with each label flipped with probability `noise`.
pub fn corner_dataset(n: usize, noise: f64, seed: u64) -> Vec<(FeatureVector, u8)> {
    corner_dataset_at(n, noise, seed, (0.6, 0.6))
}

pub fn corner_dataset_at(n: usize, noise: f64, seed: u64, corner: (f64, f64)) -> Vec<(FeatureVector, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s_f: f64 = rng.random();
            let g_f: f64 = rng.random();
            let clean = s_f > corner.0 && g_f > corner.1;
            let flip = rng.random::<f64>() < noise;
            (FeatureVector { s_f, g_f }, u8::from(clean != flip))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_noisy() {
        let a = corner_dataset(500, 0.05, 9);
        assert_eq!(a, corner_dataset(500, 0.05, 9));
        let flipped = a
            .iter()
            .filter(|(x, y)| (x.s_f > 0.6 && x.g_f > 0.6) != (*y == 1))
            .count();
        assert!(flipped > 5 && flipped < 50, "{flipped}");
    }
}
