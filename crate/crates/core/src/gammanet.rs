//! Meta-network mapping backbone features to a positive per-sample focal
//! loss γ:
//!
//! ```text
//! a = x·A          (b x k)
//! p = softmax(a)   over the k heads of each row
//! x̃ = p·Aᵀ         (b x d)
//! γ = |x̃·W| / τ    (b x 1), clamped to [0, GAMMA_MAX]
//! ```
//!
//! `A` is used for both the projection and the reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::focal::GAMMA_MAX;
use crate::tensor::Tensor;

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_INIT_GAMMA: f64 = 1.0;

/// Rows in the random probe batch used to scale `W` at initialization.
const PROBE_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Positivity {
    #[default]
    Abs,
    /// Ablation only.
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaNetParams {
    /// `d x k` attention projection.
    pub a: Tensor,
    /// `d x 1` output layer.
    pub w: Tensor,
    pub tau: f64,
    #[serde(default)]
    pub positivity: Positivity,
}

impl GammaNetParams {
    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn heads(&self) -> usize {
        self.a.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("gamma-net temperature must be positive, got {}", self.tau)));
        }
        if self.w.shape() != (self.a.rows(), 1) {
            return Err(Error::dim(
                "gamma-net",
                format!("A is {:?} but W is {:?}", self.a.shape(), self.w.shape()),
            ));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.a, &self.w]
    }
}

/// γ for a batch of features as a `b x 1` graph node, differentiable in
/// `x`, `a` and `w`.
pub fn gamma_forward_var<'g>(
    x: Var<'g>,
    a: Var<'g>,
    w: Var<'g>,
    tau: f64,
    positivity: Positivity,
) -> Result<Var<'g>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("gamma-net temperature must be positive, got {tau}")));
    }
    let heads = x.matmul(a)?.softmax_rows();
    let mixed = heads.matmul(a.t())?;
    let raw = mixed.matmul(w)?;
    let positive = match positivity {
        Positivity::Abs => raw.abs(),
        Positivity::Softplus => raw.softplus(),
    };
    Ok(positive.scale(1.0 / tau).clamp(0.0, GAMMA_MAX))
}

/// Value-only γ for every row of `x`.
pub fn gamma_forward(x: &Tensor, params: &GammaNetParams) -> Result<Vec<f64>> {
    params.validate()?;
    if x.cols() != params.dim() {
        return Err(Error::dim(
            "gamma_forward",
            format!("features have {} columns, gamma-net expects {}", x.cols(), params.dim()),
        ));
    }
    let g = Graph::new();
    let gamma = gamma_forward_var(
        g.constant(x.clone()),
        g.constant(params.a.clone()),
        g.constant(params.w.clone()),
        params.tau,
        params.positivity,
    )?;
    let out = gamma.value().data().to_vec();
    Ok(out)
}

/// Seeded parameters: `A` uniform in `±1/√d`, `W` a random direction
/// rescaled so that the mean γ over a random nonnegative probe batch equals
/// `target_gamma`.
pub fn init_gamma_params(d: usize, k: usize, seed: u64, target_gamma: f64, tau: f64) -> Result<GammaNetParams> {
    if d < 1 || k < 1 {
        return Err(Error::Config(format!("gamma-net needs d, k >= 1, got d={d}, k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let a = Tensor::new(d, k, (0..d * k).map(|_| rng.random_range(-bound..bound)).collect())?;
    let w = Tensor::new(d, 1, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())?;
    let probe = probe_features(d, seed);
    let mut params = GammaNetParams {
        a,
        w,
        tau,
        positivity: Positivity::Abs,
    };
    params.validate()?;
    rescale_to_mean_gamma(&mut params, &probe, target_gamma)?;
    Ok(params)
}

/// The nonnegative random probe batch [`init_gamma_params`] calibrates on.
pub fn probe_features(d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let data = (0..PROBE_ROWS * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal).max(0.0))
        .collect();
    Tensor::new(PROBE_ROWS, d, data).expect("probe shape")
}

/// Rescales `W` so that mean γ over `probe` equals `target`. γ is
/// homogeneous of degree 1 in `W` under the absolute-value head, so one
/// rescale is exact unless the clamp is active.
pub fn rescale_to_mean_gamma(params: &mut GammaNetParams, probe: &Tensor, target: f64) -> Result<()> {
    if target == 0.0 {
        params.w = Tensor::zeros(params.dim(), 1);
        return Ok(());
    }
    let gammas = gamma_forward(probe, params)?;
    let mean = gammas.iter().sum::<f64>() / gammas.len() as f64;
    if !(mean > 0.0) || params.positivity != Positivity::Abs {
        return Ok(());
    }
    let factor = target / mean;
    params.w = params.w.map(|v| v * factor);
    Ok(())
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
