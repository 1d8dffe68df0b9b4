use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected ReLU network `d_in -> hidden... -> K`. The last hidden
/// layer is the penultimate representation fed to the γ-Net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    /// Alternating weight (`in x out`) and bias (`1 x out`) tensors.
    pub params: Vec<Tensor>,
}

/// Penultimate features and logits for a batch.
pub struct Forward<'g> {
    pub features: Var<'g>,
    pub logits: Var<'g>,
}

impl Backbone {
    /// He-normal weights, zero biases.
    pub fn init(d_in: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || classes < 2 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid backbone shape: d_in={d_in}, hidden={hidden:?}, classes={classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = std::iter::once(d_in)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            params.push(Tensor::new(fan_in, fan_out, w)?);
            params.push(Tensor::zeros(1, fan_out));
        }
        Ok(Self { params })
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.params[self.params.len() - 3].cols()
    }

    pub fn classes(&self) -> usize {
        self.params[self.params.len() - 1].cols()
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.params.len())
            .map(|i| format!("{}{}", if i % 2 == 0 { "weight" } else { "bias" }, i / 2))
            .collect()
    }

    /// Values only: `(features, logits)` for every row of `x`.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let out = forward(g.constant(x.clone()), &params)?;
        let features = (*out.features.value()).clone();
        let logits = (*out.logits.value()).clone();
        Ok((features, logits))
    }
}

/// Forward pass through `params` laid out as in [`Backbone::params`].
pub fn forward<'g>(x: Var<'g>, params: &[Var<'g>]) -> Result<Forward<'g>> {
    if params.len() < 4 || !params.len().is_multiple_of(2) {
        return Err(Error::dim("backbone", format!("{} parameter tensors", params.len())));
    }
    let layers = params.len() / 2;
    let mut h = x;
    for l in 0..layers - 1 {
        h = h.matmul(params[2 * l])?.add(params[2 * l + 1])?.relu();
    }
    let logits = h.matmul(params[2 * layers - 2])?.add(params[2 * layers - 1])?;
    Ok(Forward { features: h, logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let b = Backbone::init(5, &[7, 4], 3, 1).unwrap();
        assert_eq!(b, Backbone::init(5, &[7, 4], 3, 1).unwrap());
        assert_eq!((b.input_dim(), b.feature_dim(), b.classes()), (5, 4, 3));
        let (f, l) = b.predict(&Tensor::filled(6, 5, 0.5)).unwrap();
        assert_eq!(f.shape(), (6, 4));
        assert_eq!(l.shape(), (6, 3));
        assert!(f.data().iter().all(|&v| v >= 0.0));
        assert_eq!(b.names()[..2], ["weight0".to_string(), "bias0".to_string()]);
        assert!(Backbone::init(5, &[], 3, 1).is_err());
    }
}
