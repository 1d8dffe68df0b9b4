//! Library-level acceptance checks, shared by the test suites and the
//! acceptance report.

use std::time::{Duration, Instant};

use calibkit::data::{read_predictions, write_predictions, PredictionKind};
use calibkit::focal::focal_loss;
use calibkit::metrics::{
    adaptive_ece, classwise_ece, ece, error_rate, mce, AceSpec, BinningScheme, PredictionSet,
};
use calibkit::posthoc::{apply_temperature, fit_temperature};
use calibkit::smoothcal::{sacc_all, sece_hard, KernelSpec};
use calibkit::exec::Exec;
use calibkit::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck;
use super::oracle::{self, Instance};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn set(probs: &[Vec<f64>], labels: &[usize]) -> PredictionSet {
    PredictionSet::from_probs(Tensor::from_rows(probs).unwrap(), labels.to_vec()).unwrap()
}

/// Random prediction set: softmax rows at a random sharpness, or rows on a
/// 1/20 lattice so confidences land on bin edges and tie.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_k: usize) -> Instance {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=max_k);
    let lattice = rng.random_bool(0.3);
    let scale = rng.random_range(0.0..8.0);
    let probs = (0..n)
        .map(|_| {
            if lattice {
                let mut counts = vec![0u32; k];
                for _ in 0..20 {
                    counts[rng.random_range(0..k)] += 1;
                }
                counts.iter().map(|&c| c as f64 / 20.0).collect()
            } else {
                let z: Vec<f64> = (0..k).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    Instance { probs, labels }
}

/// Worst absolute library-vs-oracle difference over ECE, MCE, classwise
/// ECE and ACE.
pub fn oracle_gap(inst: &Instance, bins: usize) -> f64 {
    let preds = set(&inst.probs, &inst.labels);
    let scheme = BinningScheme::equal_width(bins).unwrap();
    let (e, m) = oracle::ece_mce(inst, bins);
    let ranges = bins.min(inst.labels.len());
    [
        ece(&preds, scheme) - e,
        mce(&preds, scheme) - m,
        classwise_ece(&preds, bins).unwrap() - oracle::classwise_ece(inst, bins),
        adaptive_ece(&preds, AceSpec::new(ranges)).unwrap() - oracle::adaptive_ece(inst, ranges),
    ]
    .iter()
    .map(|d| d.abs())
    .fold(0.0, f64::max)
}

pub fn c1_metric_oracles() -> Outcome {
    let (worst, took) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        (0..1000)
            .map(|_| {
                let inst = random_instance(&mut rng, 500, 10);
                let bins = rng.random_range(1..=50);
                oracle_gap(&inst, bins)
            })
            .fold(0.0, f64::max)
    });
    Outcome::new(
        worst <= 1e-12 && took < Duration::from_secs(10),
        format!("1000 instances, max |lib - oracle| = {worst:.2e}, {:.2}s", took.as_secs_f64()),
    )
}

/// Confidence groups at dyadic values, `8·c` of 8 correct in each group.
pub fn perfectly_calibrated() -> PredictionSet {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for c in [0.625, 0.75, 0.875, 1.0] {
        let correct = (8.0 * c) as usize;
        for i in 0..8 {
            probs.push(vec![c, 1.0 - c]);
            labels.push(if i < correct { 0 } else { 1 });
        }
    }
    set(&probs, &labels)
}

pub fn c2_perfect_calibration() -> Outcome {
    let ((e, m, s), took) = timed(|| {
        let preds = perfectly_calibrated();
        let scheme = BinningScheme::equal_width(10).unwrap();
        (
            ece(&preds, scheme),
            mce(&preds, scheme),
            sece_hard(&preds, KernelSpec::gaussian(1e-4).unwrap()),
        )
    });
    Outcome::new(
        e == 0.0 && m == 0.0 && s < 1e-6 && took < Duration::from_secs(1),
        format!("ECE = {e:e}, MCE = {m:e}, SECE(h=1e-4) = {s:.2e}"),
    )
}

/// Binary predictions with 200 distinct confidences spread over
/// `[0.5, 1)`.
pub fn distinct_confidences() -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut z: Vec<f64> = (0..200).map(|i| 0.5 + 0.5 * (i as f64 + 0.5) / 200.0).collect();
    z.shuffle(&mut rng);
    let probs: Vec<Vec<f64>> = z.iter().map(|&c| vec![c, 1.0 - c]).collect();
    let labels = z.iter().map(|&c| usize::from(!rng.random_bool(c))).collect::<Vec<_>>();
    set(&probs, &labels)
}

/// `(|SECE(h=1e-6) - mean|π - z||, spread of SACC at h=1e3)`.
pub fn sece_limits() -> (f64, f64) {
    let preds = distinct_confidences();
    let z = preds.confidences();
    let pi: Vec<f64> = preds.correct().iter().map(|&c| f64::from(u8::from(c))).collect();
    let brier_like = z.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>() / z.len() as f64;
    let dirac = (sece_hard(&preds, KernelSpec::gaussian(1e-6).unwrap()) - brier_like).abs();
    let wide = sacc_all(&z, &pi, KernelSpec::gaussian(1e3).unwrap(), Exec::Sequential);
    let lo = wide.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = wide.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (dirac, hi - lo)
}

pub fn c3_sece_limits() -> Outcome {
    let (dirac, spread) = sece_limits();
    Outcome::new(
        dirac <= 1e-6 && spread <= 1e-9,
        format!("Dirac |SECE - mean|pi - z|| = {dirac:.2e} (tol 1e-6); uniform SACC spread = {spread:.2e} (tol 1e-9)"),
    )
}

/// `(SECE, one-bin-per-cluster ECE)` for 5 clusters 0.1 apart at
/// `h = 1e-3`.
pub fn cluster_pair() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (centre, correct) in [(0.52, 10), (0.62, 30), (0.72, 20), (0.82, 35), (0.92, 38)] {
        for i in 0..40 {
            let c: f64 = centre + rng.random_range(-1e-7..1e-7);
            probs.push(vec![c, 1.0 - c]);
            labels.push(if i < correct { 0 } else { 1 });
        }
    }
    let preds = set(&probs, &labels);
    let h = 1e-3;
    (
        sece_hard(&preds, KernelSpec::gaussian(h).unwrap()),
        ece(&preds, BinningScheme::equal_mass(5).unwrap()),
    )
}

pub fn c4_cluster_equivalence() -> Outcome {
    let (s, e) = cluster_pair();
    Outcome::new(
        (s - e).abs() <= 1e-6,
        format!("SECE = {s:.9}, cluster ECE = {e:.9}, diff {:.2e}", (s - e).abs()),
    )
}

pub fn c5_gradients() -> Outcome {
    let (errs, took) = timed(|| {
        [
            gradcheck::focal(),
            gradcheck::gamma_net(),
            gradcheck::soft_sece(),
            gradcheck::meta_five().unwrap_or(f64::INFINITY),
        ]
    });
    let pass = errs[..3].iter().all(|&e| e < 1e-4) && errs[3] < 1e-3 && took < Duration::from_secs(30);
    Outcome::new(
        pass,
        format!(
            "focal {:.1e}, gamma-net {:.1e}, soft SECE {:.1e}, meta (5 params) {:.1e}, {:.2}s",
            errs[0],
            errs[1],
            errs[2],
            errs[3],
            took.as_secs_f64()
        ),
    )
}

/// Smallest `L_f - [KL(q‖p) + H(q) - γH(p)]` over random draws, `L_f` from
/// the library, the rest computed here.
pub fn entropy_bound_min(draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::INFINITY;
    for _ in 0..draws {
        let k = [2, 5, 10][rng.random_range(0..3)];
        let scale = rng.random_range(0.0..10.0);
        let z: Vec<f64> = (0..k).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        let p: Vec<f64> = z.iter().map(|v| v.exp() / s).collect();
        let y = rng.random_range(0..k);
        let gamma = rng.random_range(0.0..=10.0);
        let lf = focal_loss(&Tensor::row_vector(p.clone()), &[y], &[gamma]).unwrap();
        let kl = -p[y].ln();
        let hq = 0.0;
        let hp: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        worst = worst.min(lf - (kl + hq - gamma * hp));
    }
    worst
}

pub fn c6_entropy_bound() -> Outcome {
    let worst = entropy_bound_min(10_000);
    Outcome::new(worst >= -1e-12, format!("min gap over 1e4 draws = {worst:.3e}"))
}

/// Logits whose NLL-optimal temperature is 1, with labels drawn from
/// their own softmax.
pub fn optimal_logits() -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, k) = (2000, 5);
    let raw = gradcheck::random(n, k, 3.0, &mut rng);
    let probs = raw.softmax_rows();
    let labels: Vec<usize> = probs
        .iter_rows()
        .map(|row| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            row.iter().position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(k - 1)
        })
        .collect();
    let t = fit_temperature(&raw, &labels).unwrap().temperature;
    (raw.map(|v| v / t), labels)
}

pub fn c7_temperature_recovery() -> Outcome {
    let (logits, labels) = optimal_logits();
    let base = error_rate(&PredictionSet::from_logits(logits.clone(), labels.clone()).unwrap());
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [0.5, 2.0, 4.0] {
        let scaled = logits.map(|v| v * c);
        let t = fit_temperature(&scaled, &labels).unwrap().temperature;
        let scaled_err = error_rate(&PredictionSet::from_logits(scaled.clone(), labels.clone()).unwrap());
        let fitted = apply_temperature(&scaled, t).unwrap();
        let fitted_err = error_rate(&PredictionSet::from_probs(fitted, labels.clone()).unwrap());
        let ok = ((t - c) / c).abs() <= 0.03
            && scaled_err.to_bits() == base.to_bits()
            && fitted_err.to_bits() == base.to_bits();
        pass &= ok;
        parts.push(format!("c={c}: T={t:.4}"));
    }
    Outcome::new(pass, format!("{}, accuracy unchanged: {pass}", parts.join(", ")))
}

/// Text and back.
pub fn text_round_trip(preds: &PredictionSet, kind: PredictionKind) -> PredictionSet {
    let mut buf = Vec::new();
    write_predictions(&mut buf, preds, kind).unwrap();
    read_predictions(std::path::Path::new("<memory>"), buf.as_slice()).unwrap()
}
