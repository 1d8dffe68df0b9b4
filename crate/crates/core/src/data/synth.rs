use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// One isotropic Gaussian per class centred at `e_c / σ`.
    Blobs,
    /// Concentric rings of radius `c + 1` in the first two features, with
    /// Gaussian noise of scale σ in every feature.
    TwoRings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub classes: usize,
    pub samples: usize,
    pub features: usize,
    /// Class overlap: larger means harder.
    pub sigma: f64,
    /// Probability that a label is flipped to a uniformly chosen other class.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            generator: Generator::Blobs,
            classes: 3,
            samples: 3000,
            features: 8,
            sigma: 1.0,
            rho: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.samples < 1 {
            return Err(Error::Config("need at least 1 sample".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        let min_features = match self.generator {
            Generator::Blobs => self.classes,
            Generator::TwoRings => 2,
        };
        if self.features < min_features {
            return Err(Error::Config(format!(
                "{:?} with {} classes needs at least {min_features} features, got {}",
                self.generator, self.classes, self.features
            )));
        }
        Ok(())
    }
}

/// Generated data plus the labels before noise was injected.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub data: Dataset,
    pub clean_labels: Vec<usize>,
}

/// Balanced classes (within ±1), deterministic per seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, k, d) = (spec.samples, spec.classes, spec.features);
    let mut clean: Vec<usize> = (0..n).map(|i| i % k).collect();
    clean.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n * d);
    for &c in &clean {
        match spec.generator {
            Generator::Blobs => {
                for j in 0..d {
                    let centre = if j == c { 1.0 / spec.sigma } else { 0.0 };
                    features.push(centre + rng.sample::<f64, _>(StandardNormal));
                }
            }
            Generator::TwoRings => {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let radius = (c + 1) as f64;
                for j in 0..d {
                    let base = match j {
                        0 => radius * angle.cos(),
                        1 => radius * angle.sin(),
                        _ => 0.0,
                    };
                    features.push(base + spec.sigma * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
    }

    let labels = clean
        .iter()
        .map(|&c| {
            if rng.random::<f64>() < spec.rho {
                let other = rng.random_range(0..k - 1);
                if other >= c {
                    other + 1
                } else {
                    other
                }
            } else {
                c
            }
        })
        .collect();

    Ok(Synthetic {
        data: Dataset::new(Tensor::new(n, d, features)?, labels, k)?,
        clean_labels: clean,
    })
}
