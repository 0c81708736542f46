use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::NdArray;

pub const IMAGE_SIDE: usize = 32;
pub const NOISE_AMPLITUDE: f64 = 0.2;
/// Stripe period in pixels; each stripe is half a period wide.
pub const STRIPE_PERIOD: usize = 8;
const LOW: f64 = 0.25;
const HIGH: f64 = 0.75;

pub const HORIZONTAL: usize = 0;
pub const VERTICAL: usize = 1;

/// Horizontal (label 0) versus vertical (label 1) stripes with additive noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: Vec<NdArray>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

impl SyntheticDataset {
    /// `n` images with alternating labels; each image draws a stripe phase
    /// and per-channel uniform noise in `±NOISE_AMPLITUDE`, clamped to `[0, 1]`.
    pub fn generate(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let phase = rng.random_range(0..STRIPE_PERIOD);
            let img = NdArray::from_fn(&[IMAGE_SIDE, IMAGE_SIDE, 3], |k| {
                let (row, col) = (k / (3 * IMAGE_SIDE), (k / 3) % IMAGE_SIDE);
                let coord = if label == HORIZONTAL { row } else { col };
                let base = if (coord + phase) % STRIPE_PERIOD < STRIPE_PERIOD / 2 {
                    HIGH
                } else {
                    LOW
                };
                (base + rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE)).clamp(0.0, 1.0)
            });
            images.push(img);
            labels.push(label);
        }
        Self { images, labels, seed }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = SyntheticDataset::generate(64, 5);
        assert_eq!(a, SyntheticDataset::generate(64, 5));
        assert_ne!(a.images, SyntheticDataset::generate(64, 6).images);
        assert_eq!(a.labels.iter().filter(|&&l| l == VERTICAL).count(), 32);
    }

    #[test]
    fn stripes_follow_label() {
        let d = SyntheticDataset::generate(2, 1);
        let mean = |img: &NdArray, r: usize, c: usize| img.get(&[r, c, 0]);
        // horizontal: constant along a row up to noise
        let h = &d.images[0];
        assert!((0..IMAGE_SIDE).all(|c| (mean(h, 3, c) - mean(h, 3, 0)).abs() <= 2.0 * NOISE_AMPLITUDE));
        let v = &d.images[1];
        assert!((0..IMAGE_SIDE).all(|r| (mean(v, r, 3) - mean(v, 0, 3)).abs() <= 2.0 * NOISE_AMPLITUDE));
        assert!(h.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
