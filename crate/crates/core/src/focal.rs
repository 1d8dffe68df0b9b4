//! Focal loss `-(1 - p_y)^γ · log p_y` with one continuous `γ` per sample.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::metrics::PROB_FLOOR;
use crate::tensor::Tensor;

/// Upper clamp on per-sample γ.
pub const GAMMA_MAX: f64 = 50.0;

/// Mean focal loss over the batch. `probs` is `n x K`, `gammas` is `n x 1`;
/// the result is differentiable in both. `(1 - p)^γ` is evaluated as
/// `exp(γ·log(1 - p))` with `1 - p` floored at [`PROB_FLOOR`], so γ = 0
/// reproduces cross-entropy exactly and `p_y = 1` yields 0.
pub fn focal_loss_var<'g>(probs: Var<'g>, labels: &[usize], gammas: Var<'g>) -> Result<Var<'g>> {
    let n = probs.shape().0;
    if gammas.shape() != (n, 1) {
        let (r, c) = gammas.shape();
        return Err(Error::dim("focal_loss", format!("gammas {r}x{c} for {n} samples")));
    }
    if let Some(g) = gammas.value().data().iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::Contract(format!("focal loss gamma must be >= 0, got {g}")));
    }
    let p_true = probs.pick(labels)?.clamp(PROB_FLOOR, 1.0);
    let residual = p_true.neg().add_scalar(1.0).clamp(PROB_FLOOR, 1.0);
    let modulator = gammas.mul(residual.log())?.exp();
    Ok(modulator.mul(p_true.log().neg())?.mean())
}

/// Value-only focal loss.
pub fn focal_loss(probs: &Tensor, labels: &[usize], gammas: &[f64]) -> Result<f64> {
    let n = probs.rows();
    if gammas.len() != n || labels.len() != n {
        return Err(Error::dim(
            "focal_loss",
            format!("{n} rows, {} labels, {} gammas", labels.len(), gammas.len()),
        ));
    }
    let mut total = 0.0;
    for ((row, &y), &g) in probs.iter_rows().zip(labels).zip(gammas) {
        if !(g >= 0.0) {
            return Err(Error::Contract(format!("focal loss gamma must be >= 0, got {g}")));
        }
        total += focal_term(row[y], g);
    }
    Ok(total / n as f64)
}

fn focal_term(p: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0);
    let residual = (1.0 - p).clamp(PROB_FLOOR, 1.0);
    (gamma * residual.ln()).exp() * -p.ln()
}

/// `L_f - [KL(q‖p) + H(q) - γ·H(p)]` for one distribution `p` and one-hot
/// target `q` at index `target`. Nonnegative for every valid input.
pub fn entropy_bound_gap(probs: &[f64], target: usize, gamma: f64) -> f64 {
    let loss = focal_term(probs[target], gamma);
    let kl = -probs[target].max(PROB_FLOOR).ln();
    let entropy: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    loss - (kl - gamma * entropy)
}
