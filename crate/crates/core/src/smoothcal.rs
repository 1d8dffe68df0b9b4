//! Smooth calibration error.
//!
//! Every sample is treated as its own bin. Its accuracy is estimated as the
//! Gaussian-kernel-weighted average accuracy of all samples (itself
//! included) in top-label confidence space:
//!
//! ```text
//! SACC(i) = Σ_j π(j)·K(z_i, z_j) / Σ_j K(z_i, z_j)
//! SECE    = 1/N Σ_i |SACC(i) - z_i|
//! ```
//!
//! `π(j)` is either the hard 0/1 correctness (evaluation) or a soft
//! all-pairs accuracy built from sigmoids of logit margins, which makes
//! SECE differentiable in the logits and usable as a training objective.
//! [`kde_ece`] integrates the same kernel estimates over `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::PredictionSet;
use crate::tensor::Tensor;

pub const DEFAULT_BANDWIDTH: f64 = 0.01;
pub const DEFAULT_KDE_GRID: usize = 512;

/// Gaussian kernel `exp(-(a - b)² / (2h²))` with bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        (-(d * d) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

pub fn gaussian_kernel(zi: f64, zj: f64, spec: KernelSpec) -> f64 {
    spec.eval(zi, zj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairAggregation {
    Mean,
    Min,
}

/// All-pairs soft accuracy: sigmoid of `(z_y - z_k) / tau` for every
/// non-target class `k`, aggregated by mean or min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftAccuracySpec {
    pub tau: f64,
    pub aggregation: PairAggregation,
}

impl Default for SoftAccuracySpec {
    fn default() -> Self {
        Self {
            tau: 0.1,
            aggregation: PairAggregation::Mean,
        }
    }
}

impl SoftAccuracySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "soft-accuracy temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Whether per-sample accuracy is the hard 0/1 indicator or the
/// differentiable soft estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    Hard,
    Soft(SoftAccuracySpec),
}

/// Soft accuracy per sample from logits.
pub fn soft_accuracy(logits: &Tensor, labels: &[usize], spec: SoftAccuracySpec) -> Result<Vec<f64>> {
    spec.validate()?;
    check_logits(logits, labels)?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            let pairs = row
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != y)
                .map(|(_, &zk)| crate::autodiff::sigmoid((row[y] - zk) / spec.tau));
            match spec.aggregation {
                PairAggregation::Mean => pairs.sum::<f64>() / (row.len() - 1) as f64,
                PairAggregation::Min => pairs.fold(1.0, f64::min),
            }
        })
        .collect())
}

/// Differentiable soft accuracy as an `n x 1` column.
pub fn soft_accuracy_var<'g>(logits: Var<'g>, labels: &[usize], spec: SoftAccuracySpec) -> Result<Var<'g>> {
    spec.validate()?;
    let (n, k) = logits.shape();
    if k < 2 || labels.len() != n {
        return Err(Error::dim("soft_accuracy", format!("{n}x{k} logits, {} labels", labels.len())));
    }
    let graph = logits.graph();
    let target = logits.pick(labels)?;
    let margins = logits.sub(target)?.neg().scale(1.0 / spec.tau).sigmoid();
    let mut others = Tensor::ones(n, k);
    for (r, &y) in labels.iter().enumerate() {
        others.set(r, y, 0.0);
    }
    match spec.aggregation {
        PairAggregation::Mean => {
            let kept = margins.mul(graph.constant(others))?;
            Ok(kept.sum_rows()?.scale(1.0 / (k - 1) as f64))
        }
        PairAggregation::Min => {
            // Push the target column above every sigmoid so it never wins
            // the min.
            let lifted = margins.add(graph.constant(others.map(|o| 2.0 * (1.0 - o))))?;
            Ok(lifted.neg().max_rows().neg())
        }
    }
}

fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<()> {
    let (n, k) = logits.shape();
    if k < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} rows", labels.len())));
    }
    if labels.iter().any(|&y| y >= k) {
        return Err(Error::Input("label out of range".into()));
    }
    Ok(())
}

/// Kernel-weighted accuracy around sample `i`, self term included.
pub fn sacc(i: usize, z: &[f64], pi: &[f64], spec: KernelSpec) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&zj, &pj) in z.iter().zip(pi) {
        let w = spec.eval(z[i], zj);
        num += pj * w;
        den += w;
    }
    num / den
}

/// [`sacc`] for every sample.
pub fn sacc_all(z: &[f64], pi: &[f64], spec: KernelSpec, exec: Exec) -> Vec<f64> {
    exec.map(z.len(), |i| sacc(i, z, pi, spec))
}

/// SECE from confidences and per-sample accuracies.
pub fn sece_from_parts(z: &[f64], pi: &[f64], spec: KernelSpec, exec: Exec) -> f64 {
    let s = sacc_all(z, pi, spec, exec);
    let total: f64 = s.iter().zip(z).map(|(a, c)| (a - c).abs()).sum();
    total / z.len() as f64
}

/// SECE with hard 0/1 accuracies, for evaluation.
pub fn sece_hard(preds: &PredictionSet, spec: KernelSpec) -> f64 {
    sece_hard_with(preds, spec, Exec::default())
}

pub fn sece_hard_with(preds: &PredictionSet, spec: KernelSpec, exec: Exec) -> f64 {
    let pi: Vec<f64> = preds.correct().iter().map(|&c| f64::from(u8::from(c))).collect();
    sece_from_parts(&preds.confidences(), &pi, spec, exec)
}

/// SECE in either accuracy mode. Soft mode needs the prediction set to
/// carry logits.
pub fn sece(preds: &PredictionSet, spec: KernelSpec, mode: AccuracyMode) -> Result<f64> {
    match mode {
        AccuracyMode::Hard => Ok(sece_hard(preds, spec)),
        AccuracyMode::Soft(acc) => {
            let logits = preds
                .logits()
                .ok_or_else(|| Error::Input("soft-mode SECE requires logits".into()))?;
            let pi = soft_accuracy(logits, preds.labels(), acc)?;
            Ok(sece_from_parts(&preds.confidences(), &pi, spec, Exec::default()))
        }
    }
}

/// Differentiable soft-mode SECE of `logits` (an `n x K` graph node).
pub fn sece_soft_var<'g>(
    logits: Var<'g>,
    labels: &[usize],
    spec: KernelSpec,
    acc: SoftAccuracySpec,
) -> Result<Var<'g>> {
    let n = logits.shape().0;
    let pi = soft_accuracy_var(logits, labels, acc)?;
    let z = logits.softmax_rows().max_rows();
    let zi = z.broadcast_to((n, n))?;
    let diff = zi.sub(zi.t())?;
    let h = spec.bandwidth();
    let weights = diff.mul(diff)?.scale(-1.0 / (2.0 * h * h)).exp();
    let sacc = weights.matmul(pi)?.div(weights.sum_rows()?)?;
    Ok(sacc.sub(z)?.abs().mean())
}

/// KDE-based ECE: `∫ |z - π̂(z)| p̂(z) dz` over `[0, 1]` with hard
/// accuracies, trapezoid rule on a uniform grid, `p̂` renormalized to unit
/// mass on the grid.
///
/// When the bandwidth is below half the grid spacing the grid cannot
/// resolve the kernels; the estimate then uses its point-mass limit
/// `1/N Σ_i |z_i - π̂(z_i)|`.
pub fn kde_ece(preds: &PredictionSet, spec: KernelSpec) -> Result<f64> {
    kde_ece_with(preds, spec, DEFAULT_KDE_GRID, Exec::default())
}

pub fn kde_ece_with(preds: &PredictionSet, spec: KernelSpec, grid: usize, exec: Exec) -> Result<f64> {
    let pi: Vec<f64> = preds.correct().iter().map(|&c| f64::from(u8::from(c))).collect();
    kde_ece_from_parts(&preds.confidences(), &pi, spec, grid, exec)
}

pub fn kde_ece_from_parts(z: &[f64], pi: &[f64], spec: KernelSpec, grid: usize, exec: Exec) -> Result<f64> {
    if grid < 2 {
        return Err(Error::Config(format!("KDE grid needs at least 2 points, got {grid}")));
    }
    let step = 1.0 / (grid - 1) as f64;
    if 2.0 * spec.bandwidth() < step {
        return Ok(sece_from_parts(z, pi, spec, exec));
    }
    let n = z.len() as f64;
    // (density, density-weighted |g - π̂(g)|) at every grid point
    let samples = exec.map(grid, |t| {
        let g = t as f64 * step;
        let mut mass = 0.0;
        let mut hits = 0.0;
        for (&zi, &p) in z.iter().zip(pi) {
            let w = spec.eval(g, zi);
            mass += w;
            hits += p * w;
        }
        if mass == 0.0 {
            (0.0, 0.0)
        } else {
            let density = mass / n;
            (density, (g - hits / mass).abs() * density)
        }
    });
    let trapezoid = |f: &dyn Fn(&(f64, f64)) -> f64| {
        samples
            .windows(2)
            .map(|w| 0.5 * step * (f(&w[0]) + f(&w[1])))
            .sum::<f64>()
    };
    let norm = trapezoid(&|s| s.0);
    if norm == 0.0 {
        return Ok(sece_from_parts(z, pi, spec, exec));
    }
    Ok(trapezoid(&|s| s.1) / norm)
}
