//! Central finite-difference checks. Each check returns the worst
//! norm-wise relative error over its inputs.

use calibkit::autodiff::{Graph, Var};
use calibkit::focal::focal_loss_var;
use calibkit::gammanet::{gamma_forward_var, GammaNetParams, Positivity};
use calibkit::metatrain::{meta_gradient, Backbone, Learner, MetaTrainConfig};
use calibkit::optim::{OptimizerKind, OptimizerState};
use calibkit::smoothcal::{sece_soft_var, KernelSpec, PairAggregation, SoftAccuracySpec};
use calibkit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn numeric(f: &dyn Fn(&Tensor) -> f64, x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi.data_mut()[i] += STEP;
        let mut lo = x.clone();
        lo.data_mut()[i] -= STEP;
        out.data_mut()[i] = (f(&hi) - f(&lo)) / (2.0 * STEP);
    }
    out
}

/// `‖a - n‖ / max(‖a‖, ‖n‖)`.
pub fn rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.data().iter().zip(numeric.data()).map(|(a, b)| a - b).collect();
    let scale = norm(analytic.data()).max(norm(numeric.data()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Pins the higher-ranked signature on a closure.
fn scalar_fn<F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>>(f: F) -> F {
    f
}

/// Relative error of the gradient of `build` with respect to every input.
fn check_all(inputs: &[Tensor], build: &dyn for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>) -> f64 {
    (0..inputs.len()).map(|which| check(inputs, which, build)).fold(0.0, f64::max)
}

fn check(inputs: &[Tensor], which: usize, build: &dyn for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>) -> f64 {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&g, &vars);
    let analytic = (*g.grad(loss, &[vars[which]], false).unwrap()[0].unwrap().value()).clone();
    let f = |x: &Tensor| {
        let g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| g.constant(if i == which { x.clone() } else { t.clone() }))
            .collect();
        build(&g, &vars).item()
    };
    rel_err(&analytic, &numeric(&f, &inputs[which]))
}

/// Composite of every differentiable op.
pub fn ops() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(4, 3, 1.0, &mut rng), random(3, 5, 1.0, &mut rng), random(1, 5, 1.0, &mut rng)];
    check_all(
        &inputs,
        &scalar_fn(|_, v| {
            let m = v[0].matmul(v[1]).unwrap().add(v[2]).unwrap();
            let a = m.sigmoid().mul(m.softplus()).unwrap();
            let b = m.softmax_rows().pick(&[0, 4, 2, 1]).unwrap().log();
            let c = m.exp().add_scalar(1.0).powf(0.5).div(m.abs().add_scalar(2.0)).unwrap();
            let d = m.max_rows().sum().add(m.t().sum_rows().unwrap().relu().mean()).unwrap();
            let e = m.sub(m.scale(0.5).neg()).unwrap().clamp(-0.5, 0.5).max();
            a.sum().add(b.sum()).unwrap().add(c.mean()).unwrap().add(d).unwrap().add(e).unwrap()
        }),
    )
}

/// Focal loss with respect to logits and per-sample γ.
pub fn focal() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = random(6, 4, 2.0, &mut rng);
    let gammas = Tensor::column((0..6).map(|_| rng.random_range(0.2..4.0)).collect());
    let labels = [0, 3, 1, 2, 2, 0];
    check_all(
        &[logits, gammas],
        &scalar_fn(|_, v| focal_loss_var(v[0].softmax_rows(), &labels, v[1]).unwrap()),
    )
}

/// γ-Net forward with respect to x, A and W, every output away from the
/// kink of `|·|` and below the clamp.
pub fn gamma_net() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, d, k) = (5, 6, 3);
    let x = random(b, d, 1.0, &mut rng);
    let a = random(d, k, 0.5, &mut rng);
    let mut w = random(d, 1, 0.01, &mut rng);
    loop {
        let g = Graph::new();
        let gamma = gamma_forward_var(g.constant(x.clone()), g.constant(a.clone()), g.constant(w.clone()), 0.01, Positivity::Abs)
            .unwrap();
        if gamma.value().data().iter().all(|&v| v > 0.05 && v < 40.0) {
            break;
        }
        w = random(d, 1, 0.01, &mut rng);
    }
    let weights = Tensor::column((0..b).map(|i| 1.0 + i as f64).collect());
    check_all(
        &[x, a, w],
        &scalar_fn(|g, v| {
            let gamma = gamma_forward_var(v[0], v[1], v[2], 0.01, Positivity::Abs).unwrap();
            gamma.mul(g.constant(weights.clone())).unwrap().sum()
        }),
    )
}

/// Soft-mode SECE with respect to logits, N = 16, K = 4.
pub fn soft_sece() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for (h, aggregation) in [(0.05, PairAggregation::Mean), (0.1, PairAggregation::Mean), (0.1, PairAggregation::Min)] {
        let logits = random(16, 4, 1.5, &mut rng);
        let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..4)).collect();
        let acc = SoftAccuracySpec { tau: 0.5, aggregation };
        let kernel = KernelSpec::gaussian(h).unwrap();
        worst = worst.max(check(
            &[logits],
            0,
            &scalar_fn(|_, v| sece_soft_var(v[0], &labels, kernel, acc).unwrap()),
        ));
    }
    worst
}

/// Learner with a `d_in -> d -> k` backbone, a γ-Net on the `d` features
/// and momentum buffers populated by one committed step.
pub fn toy_learner(d_in: usize, d: usize, k: usize, seed: u64) -> Learner {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backbone = Backbone::init(d_in, &[d], k, seed).unwrap();
    // positive hidden bias keeps every ReLU active
    backbone.params[1] = Tensor::filled(1, d, 0.5);
    let gamma_net = GammaNetParams {
        a: random(d, k, 1.0, &mut rng),
        w: Tensor::filled(d, 1, 0.004),
        tau: 0.01,
        positivity: Positivity::Abs,
    };
    let kind = OptimizerKind::Sgd {
        momentum: 0.9,
        weight_decay: 5e-4,
    };
    let mut inner = OptimizerState::new(kind, 0.5, &backbone.params);
    let warm: Vec<Tensor> = backbone.params.iter().map(|p| p.map(|v| 0.1 * v)).collect();
    let mut scratch = backbone.params.clone();
    let names = backbone.names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    inner.step(&mut scratch, &warm, &names).unwrap();
    let outer = OptimizerState::new(OptimizerKind::adam(), 1e-3, &[gamma_net.a.clone(), gamma_net.w.clone()]);
    Learner {
        backbone,
        gamma_net,
        inner,
        outer,
    }
}

/// Train and validation batches of `n` rows.
pub fn toy_batches(d_in: usize, k: usize, n: usize, seed: u64) -> (Tensor, Vec<usize>, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(n, d_in, 1.0, &mut rng);
    let y = (0..n).map(|_| rng.random_range(0..k)).collect();
    let xv = random(n, d_in, 1.0, &mut rng);
    let yv = (0..n).map(|_| rng.random_range(0..k)).collect();
    (x, y, xv, yv)
}

pub fn meta_config(bandwidth: f64) -> MetaTrainConfig {
    MetaTrainConfig {
        bandwidth,
        soft_accuracy: SoftAccuracySpec {
            tau: 0.5,
            aggregation: PairAggregation::Mean,
        },
        ..MetaTrainConfig::default()
    }
}

/// One-step meta-gradient of validation SECE with respect to `[A, W]`.
/// `None` when the analytic gradient is identically zero.
pub fn meta(learner: &Learner, config: &MetaTrainConfig, n: usize, seed: u64) -> Option<f64> {
    let d_in = learner.backbone.input_dim();
    let k = learner.backbone.classes();
    let (x, y, xv, yv) = toy_batches(d_in, k, n, seed);
    let (_, [ga, gw]) = meta_gradient(learner, (&x, &y), (&xv, &yv), config).unwrap();
    if ga.data().iter().chain(gw.data()).all(|&v| v == 0.0) {
        return None;
    }
    let value = |l: &Learner| meta_gradient(l, (&x, &y), (&xv, &yv), config).unwrap().0;
    let na = numeric(
        &|a: &Tensor| {
            let mut l = learner.clone();
            l.gamma_net.a = a.clone();
            value(&l)
        },
        &learner.gamma_net.a,
    );
    let nw = numeric(
        &|w: &Tensor| {
            let mut l = learner.clone();
            l.gamma_net.w = w.clone();
            value(&l)
        },
        &learner.gamma_net.w,
    );
    let joined = |p: &Tensor, q: &Tensor| Tensor::column(p.data().iter().chain(q.data()).copied().collect());
    Some(rel_err(&joined(&ga, &gw), &joined(&na, &nw)))
}

/// The 5-parameter toy: one feature, four heads (A is 1x4, W is 1x1).
pub fn meta_five() -> Option<f64> {
    let learner = toy_learner(3, 1, 4, 7);
    assert_eq!(learner.gamma_net.a.len() + learner.gamma_net.w.len(), 5);
    meta(&learner, &meta_config(0.1), 8, 11)
}
