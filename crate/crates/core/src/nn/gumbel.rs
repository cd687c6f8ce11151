use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::numeric::softmax;

/// One standard Gumbel(0, 1) draw.
pub fn sample_gumbel(rng: &mut impl Rng) -> f64 {
    Gumbel::new(0.0, 1.0).expect("unit scale").sample(rng)
}

/// `softmax((logits + g) / τ)` with fresh Gumbel noise `g`.
pub fn gumbel_softmax(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = logits.iter().map(|_| sample_gumbel(rng)).collect();
    relaxed(logits, &noise, temperature)
}

pub(crate) fn relaxed(logits: &[f64], noise: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().zip(noise).map(|(a, g)| (a + g) / temperature).collect();
    softmax(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::argmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sums_to_one_and_sharpens() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = [0.3, -1.0, 2.0, 0.0];
        for _ in 0..100 {
            let y = gumbel_softmax(&logits, 0.7, &mut rng);
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let cold = gumbel_softmax(&logits, 1e-4, &mut rng);
            assert!(cold.iter().copied().fold(0.0, f64::max) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn gumbel_max_is_uniform_for_equal_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = 4;
        let n = 100_000;
        let mut counts = vec![0usize; b];
        for _ in 0..n {
            counts[argmax(&gumbel_softmax(&vec![0.0; b], 1.0, &mut rng))] += 1;
        }
        let p = 1.0 / b as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{c}");
        }
    }
}
