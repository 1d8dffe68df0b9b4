use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The test fraction is carved from the whole dataset first; the
/// remaining three fractions partition what is left and must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub test: f64,
    pub train: f64,
    pub val: f64,
    pub metaval: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            test: 0.2,
            train: 0.8,
            val: 0.1,
            metaval: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.metaval];
        if parts.iter().any(|&r| !(r > 0.0)) || !(self.test > 0.0 && self.test < 1.0) {
            return Err(Error::Config(format!("split ratios must be positive: {self:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "train/val/metaval ratios sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub metaval: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into test, then train/val/metaval.
pub fn split(n: usize, ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    let n_test = (n as f64 * ratios.test).round() as usize;
    let rest = n.saturating_sub(n_test);
    let n_train = (rest as f64 * ratios.train).round() as usize;
    let n_val = (rest as f64 * ratios.val).round() as usize;
    let n_meta = rest.saturating_sub(n_train + n_val);
    if [n_test, n_train, n_val, n_meta].contains(&0) || n_train + n_val > rest {
        return Err(Error::Config(format!(
            "{n} samples cannot fill every split (test {n_test}, train {n_train}, val {n_val}, metaval {n_meta})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, rest) = order.split_at(n_test);
    let (train, rest) = rest.split_at(n_train);
    let (val, metaval) = rest.split_at(n_val);
    Ok(Splits {
        train: train.to_vec(),
        val: val.to_vec(),
        metaval: metaval.to_vec(),
        test: test.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_samples() {
        let s = split(100, SplitRatios::default(), 3).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.metaval.len(), s.test.len()),
            (64, 8, 8, 20)
        );
        let mut all: Vec<usize> = [&s.train, &s.val, &s.metaval, &s.test]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split(100, SplitRatios::default(), 3).unwrap());
        assert_ne!(s, split(100, SplitRatios::default(), 4).unwrap());
    }

    #[test]
    fn empty_split_rejected() {
        assert!(split(5, SplitRatios::default(), 0).is_err());
        let bad = SplitRatios {
            train: 0.5,
            ..SplitRatios::default()
        };
        assert!(split(100, bad, 0).is_err());
    }
}
