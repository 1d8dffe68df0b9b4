use serde::{Deserialize, Serialize};

use super::backbone::{forward, Backbone};
use super::config::{MetaTrainConfig, Mode};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::focal::focal_loss_var;
use crate::gammanet::{gamma_forward_var, mean_std, GammaNetParams};
use crate::optim::{unrolled_inner_step, OptimizerState};
use crate::smoothcal::{sece_soft_var, KernelSpec};
use crate::tensor::Tensor;

/// Losses above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Backbone θ, γ-Net φ and their optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub backbone: Backbone,
    pub gamma_net: GammaNetParams,
    /// SGD on θ.
    pub inner: OptimizerState,
    /// Adam on φ.
    pub outer: OptimizerState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub train_loss: f64,
    /// Soft SECE of the lookahead model on the validation batch.
    pub meta_loss: Option<f64>,
    pub gamma_mean: f64,
    pub gamma_std: f64,
}

fn check_loss(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v > DIVERGENCE_LIMIT {
        return Err(Error::Divergence(format!("{name} is {v}")));
    }
    Ok(())
}

/// One iteration of the alternating scheme.
///
/// 1. γ from the γ-Net on the train batch features (constant 0 for `ce`,
///    the configured γ for `focal-fixed`).
/// 2. Focal loss on the train batch and the differentiable lookahead
///    `θ' = θ - η ∇θ L`.
/// 3. Soft SECE of `θ'` on the validation batch, differentiated through
///    the lookahead with respect to φ (`fl-gamma-sece` only).
/// 4. Commit the SGD step on θ and the Adam step on φ.
///
/// The committed θ equals the lookahead bitwise; φ is updated after θ's
/// step has been formed, so the inner step uses the current φ.
pub fn meta_step(
    learner: &mut Learner,
    train: (&Tensor, &[usize]),
    val: Option<(&Tensor, &[usize])>,
    config: &MetaTrainConfig,
) -> Result<StepStats> {
    let g = Graph::new();
    let meta = config.mode == Mode::FlGammaSece && val.is_some();
    let parts = build(&g, learner, train, if meta { val } else { None }, config)?;
    let meta_grads = match parts.sece {
        Some(sece) => Some(values(&g.grad(sece, &[parts.a, parts.w], false)?, &[parts.a, parts.w])),
        None => None,
    };

    let names = learner.backbone.names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let theta_grads = values(&g.grad(parts.loss, &parts.theta, false)?, &parts.theta);
    learner.inner.step(&mut learner.backbone.params, &theta_grads, &names)?;

    if let Some(grads) = meta_grads {
        let net = &mut learner.gamma_net;
        let mut phi = [net.a.clone(), net.w.clone()];
        learner.outer.step(&mut phi, &grads, &["gamma_net.A", "gamma_net.W"])?;
        let [a, w] = phi;
        net.a = a;
        net.w = w;
    }

    let (gamma_mean, gamma_std) = mean_std(parts.gammas.value().data());
    Ok(StepStats {
        train_loss: parts.loss.item(),
        meta_loss: parts.sece.map(|s| s.item()),
        gamma_mean,
        gamma_std,
    })
}

/// Validation SECE after the lookahead step and its gradient with respect
/// to `[A, W]`, without changing `learner`. Uses the γ-Net regardless of
/// `config.mode`.
pub fn meta_gradient(
    learner: &Learner,
    train: (&Tensor, &[usize]),
    val: (&Tensor, &[usize]),
    config: &MetaTrainConfig,
) -> Result<(f64, [Tensor; 2])> {
    let config = MetaTrainConfig {
        mode: Mode::FlGammaSece,
        ..config.clone()
    };
    let g = Graph::new();
    let parts = build(&g, learner, train, Some(val), &config)?;
    let sece = parts.sece.expect("validation batch given");
    let [ga, gw]: [Tensor; 2] = values(&g.grad(sece, &[parts.a, parts.w], false)?, &[parts.a, parts.w])
        .try_into()
        .expect("two gradients");
    Ok((sece.item(), [ga, gw]))
}

struct Parts<'g> {
    theta: Vec<Var<'g>>,
    a: Var<'g>,
    w: Var<'g>,
    gammas: Var<'g>,
    loss: Var<'g>,
    sece: Option<Var<'g>>,
}

/// Records the inner loss and, when `val` is given, the lookahead SECE.
fn build<'g>(
    g: &'g Graph,
    learner: &Learner,
    train: (&Tensor, &[usize]),
    val: Option<(&Tensor, &[usize])>,
    config: &MetaTrainConfig,
) -> Result<Parts<'g>> {
    let theta: Vec<Var> = learner.backbone.params.iter().map(|p| g.param(p.clone())).collect();
    let phi_leaf = |t: &Tensor| if val.is_some() { g.param(t.clone()) } else { g.constant(t.clone()) };
    let a = phi_leaf(&learner.gamma_net.a);
    let w = phi_leaf(&learner.gamma_net.w);

    let (x, y) = train;
    let b = y.len();
    let out = forward(g.constant(x.clone()), &theta)?;
    let gammas = match config.mode {
        Mode::Ce => g.constant(Tensor::zeros(b, 1)),
        Mode::FocalFixed => g.constant(Tensor::filled(b, 1, config.focal_gamma)),
        Mode::FlGammaSece | Mode::FlGammaNone => {
            let features = if config.detach_features {
                g.detach(out.features)
            } else {
                out.features
            };
            let net = &learner.gamma_net;
            gamma_forward_var(features, a, w, net.tau, net.positivity)?
        }
    };
    let loss = focal_loss_var(out.logits.softmax_rows(), y, gammas)?;
    check_loss("inner focal loss", loss.item())?;

    let sece = match val {
        Some((xv, yv)) => {
            let lookahead = unrolled_inner_step(g, &theta, loss, &learner.inner, config.first_order)?;
            let val_out = forward(g.constant(xv.clone()), &lookahead)?;
            let kernel = KernelSpec::gaussian(config.bandwidth)?;
            let sece = sece_soft_var(val_out.logits, yv, kernel, config.soft_accuracy)?;
            check_loss("outer SECE", sece.item())?;
            Some(sece)
        }
        None => None,
    };
    Ok(Parts {
        theta,
        a,
        w,
        gammas,
        loss,
        sece,
    })
}

/// Gradient values, zeros where the loss does not reach the input.
fn values(grads: &[Option<Var>], wrt: &[Var]) -> Vec<Tensor> {
    grads
        .iter()
        .zip(wrt)
        .map(|(g, v)| match g {
            Some(g) => (*g.value()).clone(),
            None => {
                let (r, c) = v.shape();
                Tensor::zeros(r, c)
            }
        })
        .collect()
}
