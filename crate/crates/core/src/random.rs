//! Seeded initialization and dropout masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor2;

/// Xavier (Glorot) uniform initialization: i.i.d. on
/// [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))], deterministic per seed.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    assert!(rows >= 1 && cols >= 1, "xavier_init needs a nonempty shape");
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 * bound - bound).collect();
    Tensor2::from_vec(rows, cols, data)
}

/// Inverted-dropout multiplicative mask.
///
/// Training: entries are 0 with probability `rate`, else 1/(1-rate).
/// Inference (`training == false`): all ones, whatever the rate.
/// The mask is a pure function of its arguments, so a frozen seed makes any
/// loss built on top of it re-evaluate identically.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64, training: bool) -> Tensor2 {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if !training || rate == 0.0 {
        return Tensor2::filled(rows, cols, 1.0);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    Tensor2::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_within_bounds() {
        // rows+cols = 6 gives bound sqrt(6/6) = 1.
        let t = xavier_init(4, 2, 1);
        for v in &t.data {
            assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn xavier_deterministic_per_seed() {
        assert_eq!(xavier_init(3, 5, 7), xavier_init(3, 5, 7));
        assert_ne!(xavier_init(3, 5, 7), xavier_init(3, 5, 8));
    }

    #[test]
    fn xavier_sample_variance_matches_uniform_moment() {
        // Var of U(-b, b) is b^2/3 = (6/(rows+cols))/3 = 2/(rows+cols).
        let t = xavier_init(1000, 1000, 2);
        let n = t.numel() as f64;
        let mean = t.data.iter().sum::<f64>() / n;
        let var = t.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 2.0 / 2000.0;
        assert!((var - expected).abs() / expected < 0.1, "var {var} vs {expected}");
    }

    #[test]
    fn dropout_rate_zero_and_inference_are_all_ones() {
        let ones = Tensor2::filled(4, 4, 1.0);
        assert_eq!(dropout_mask(4, 4, 0.0, 3, true), ones);
        assert_eq!(dropout_mask(4, 4, 0.7, 3, false), ones);
    }

    #[test]
    fn dropout_keep_fraction_concentrates() {
        let mask = dropout_mask(500, 200, 0.1, 4, true);
        let kept = mask.data.iter().filter(|v| **v != 0.0).count() as f64;
        let frac = kept / mask.numel() as f64;
        assert!((frac - 0.9).abs() <= 0.01, "keep fraction {frac}");
        // Kept entries carry the inverse keep probability.
        for v in mask.data.iter().filter(|v| **v != 0.0) {
            assert!((v - 1.0 / 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_mask_is_pure_in_its_seed() {
        assert_eq!(dropout_mask(8, 8, 0.3, 5, true), dropout_mask(8, 8, 0.3, 5, true));
        assert_ne!(dropout_mask(8, 8, 0.3, 5, true), dropout_mask(8, 8, 0.3, 6, true));
    }
}
