use rand::Rng;

use crate::error::{Error, Result};

/// Negative-sampling distribution `P(i) ∝ count_i^exponent`.
///
/// Sampling inverts the cumulative distribution with a binary search, so
/// the realized probabilities are exact up to f64 rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    cumulative: Vec<f64>,
    exponent: f64,
}

pub const DEFAULT_NOISE_EXPONENT: f64 = 0.75;

impl NoiseTable {
    pub fn build(counts: &[u64], exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Config(format!("noise exponent must be > 0, got {exponent}")));
        }
        if counts.is_empty() {
            return Err(Error::Config("noise table needs a non-empty vocabulary".into()));
        }
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(exponent)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("noise table needs a positive count".into()));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(NoiseTable {
            cumulative,
            exponent,
        })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn probability(&self, i: usize) -> f64 {
        let lo = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        self.cumulative[i] - lo
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.probability(i)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical(table: &NoiseTable, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist = vec![0usize; table.len()];
        for _ in 0..draws {
            hist[table.sample(&mut rng) as usize] += 1;
        }
        hist.into_iter().map(|h| h as f64 / draws as f64).collect()
    }

    #[test]
    fn symmetric_pair() {
        let t = NoiseTable::build(&[1, 1], 0.75).unwrap();
        let p = empirical(&t, 1_000_000, 1);
        assert!((p[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn powered_ratio() {
        let t = NoiseTable::build(&[16, 1], 0.75).unwrap();
        assert!((t.probability(0) / t.probability(1) - 8.0).abs() < 1e-9);
        let p = empirical(&t, 1_000_000, 2);
        let ratio = p[0] / p[1];
        assert!((ratio / 8.0 - 1.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn identity_exponent() {
        let counts = [50u64, 30, 15, 5];
        let t = NoiseTable::build(&counts, 1.0).unwrap();
        let p = empirical(&t, 1_000_000, 3);
        for (i, &c) in counts.iter().enumerate() {
            assert!((p[i] - c as f64 / 100.0).abs() < 0.01);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let t = NoiseTable::build(&[3, 9, 27, 1, 1], 0.75).unwrap();
        let s: f64 = t.probabilities().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_exponent() {
        assert!(NoiseTable::build(&[1, 2], 0.0).is_err());
        assert!(NoiseTable::build(&[1, 2], -1.0).is_err());
    }
}
