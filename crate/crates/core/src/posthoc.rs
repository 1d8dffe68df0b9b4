//! Temperature scaling: one scalar `T` dividing the logits, fitted by
//! minimizing validation NLL.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
/// Stop once the bracket on `T` is narrower than this.
pub const T_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll: f64,
    pub nll_at_one: f64,
    pub iterations: usize,
    /// Every logit row was constant, so `T` is unidentifiable and left at 1.
    pub degenerate: bool,
}

/// NLL of `softmax(logits / t)` computed through log-sum-exp.
pub fn scaled_nll(logits: &Tensor, labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = max + row.iter().map(|&v| (v / t - max).exp()).sum::<f64>().ln();
        total += lse - row[y] / t;
    }
    total / labels.len() as f64
}

/// Golden-section search over `log T` on `[T_MIN, T_MAX]`. `T = 1` is
/// always a candidate, so the fitted NLL never exceeds the unscaled NLL.
pub fn fit_temperature(logits: &Tensor, labels: &[usize]) -> Result<TemperatureFit> {
    let n = logits.rows();
    if n == 0 || labels.len() != n {
        return Err(Error::Input(format!("{n} logit rows, {} labels", labels.len())));
    }
    if logits.cols() < 2 || labels.iter().any(|&y| y >= logits.cols()) {
        return Err(Error::Input("labels out of range for logits".into()));
    }
    if !logits.is_finite() {
        return Err(Error::Input("logits contain non-finite values".into()));
    }
    let nll_at_one = scaled_nll(logits, labels, 1.0);
    let degenerate = logits.iter_rows().all(|r| r.iter().all(|&v| v == r[0]));
    if degenerate {
        log::warn!("all logit rows are constant; temperature left at 1");
        return Ok(TemperatureFit {
            temperature: 1.0,
            nll: nll_at_one,
            nll_at_one,
            iterations: 0,
            degenerate,
        });
    }

    let f = |u: f64| scaled_nll(logits, labels, u.exp());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (T_MIN.ln(), T_MAX.ln());
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iterations = 0;
    while hi.exp() - lo.exp() > T_TOL {
        iterations += 1;
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    let t = (0.5 * (lo + hi)).exp();
    let nll = scaled_nll(logits, labels, t);
    let (temperature, nll) = if nll <= nll_at_one { (t, nll) } else { (1.0, nll_at_one) };
    Ok(TemperatureFit {
        temperature,
        nll,
        nll_at_one,
        iterations,
        degenerate,
    })
}

/// Row softmax of `logits / t`.
pub fn apply_temperature(logits: &Tensor, t: f64) -> Result<Tensor> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {t}")));
    }
    Ok(logits.map(|v| v / t).softmax_rows())
}
