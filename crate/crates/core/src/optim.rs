//! First-order optimizers and the differentiable one-step lookahead used
//! for meta-gradients.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// `momentum = 0` is plain SGD. Weight decay is added to the gradient.
    Sgd { momentum: f64, weight_decay: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd {
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.rows(), p.cols());
        let second = match kind {
            OptimizerKind::Adam { .. } => params.iter().map(zeros).collect(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            lr,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. A non-finite gradient aborts the update
    /// before any parameter is modified.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[&str]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::dim(
                "optimizer step",
                format!(
                    "{} params, {} grads, {} buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::dim(
                    "optimizer step",
                    format!("parameter {} shape mismatch", name_at(names, i)),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for parameter {}",
                    name_at(names, i)
                )));
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd {
                momentum,
                weight_decay,
            } => {
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), bv) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
                        let d = gv + weight_decay * *pv;
                        *bv = momentum * *bv + d;
                        *pv -= lr * *bv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut());
                    for (((pv, &gv), mv), vv) in it {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn name_at(names: &[&str], i: usize) -> String {
    names.get(i).map_or_else(|| format!("#{i}"), |n| (*n).to_string())
}

/// One differentiable SGD step: returns `θ' = θ - lr·(μ·buf + ∇θL + wd·θ)`
/// as graph nodes, matching what [`OptimizerState::step`] would commit.
///
/// With `first_order`, `∇θL` enters as a constant, so nothing upstream of
/// the gradient (such as meta-parameters that shaped the inner loss)
/// receives a second-order contribution.
pub fn unrolled_inner_step<'g>(
    graph: &'g Graph,
    params: &[Var<'g>],
    inner_loss: Var<'g>,
    state: &OptimizerState,
    first_order: bool,
) -> Result<Vec<Var<'g>>> {
    let OptimizerKind::Sgd {
        momentum,
        weight_decay,
    } = state.kind
    else {
        return Err(Error::Unsupported(
            "unrolled inner step requires an SGD inner optimizer".into(),
        ));
    };
    if state.first.len() != params.len() {
        return Err(Error::dim(
            "unrolled step",
            format!("{} params, {} buffers", params.len(), state.first.len()),
        ));
    }
    let grads = graph.grad(inner_loss, params, !first_order)?;
    let mut out = Vec::with_capacity(params.len());
    for ((&p, g), buf) in params.iter().zip(grads).zip(&state.first) {
        let mut direction = match g {
            Some(g) => g,
            None => graph.constant(Tensor::zeros(p.shape().0, p.shape().1)),
        };
        if weight_decay != 0.0 {
            direction = direction.add(p.scale(weight_decay))?;
        }
        if momentum != 0.0 {
            let carried = graph.constant(buf.map(|b| momentum * b));
            direction = carried.add(direction)?;
        }
        out.push(p.sub(direction.scale(state.lr))?);
    }
    Ok(out)
}
