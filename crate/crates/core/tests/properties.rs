mod support;

use calibkit::data::{load_predictions, write_binary_predictions, PredictionKind};
use calibkit::exec::Exec;
use calibkit::focal::focal_loss;
use calibkit::metrics::{
    adaptive_ece_with, bin_sweep_with, classwise_ece_with, ece, mce, nll, AceSpec, BinningScheme, PredictionSet,
};
use calibkit::posthoc::apply_temperature;
use calibkit::smoothcal::{kde_ece_with, sece_hard_with, KernelSpec};
use calibkit::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::criteria::{oracle_gap, random_instance, text_round_trip};
use support::oracle::Instance;

fn instance(seed: u64, max_n: usize) -> (Instance, PredictionSet) {
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), max_n, 10);
    let preds = PredictionSet::from_probs(Tensor::from_rows(&inst.probs).unwrap(), inst.labels.clone()).unwrap();
    (inst, preds)
}

fn logits(seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = support::gradcheck::random(40, 4, 5.0, &mut rng);
    let labels = (0..40).map(|i| (i * 7 + seed as usize) % 4).collect();
    PredictionSet::from_logits(l, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_oracle(seed in any::<u64>(), bins in 1usize..60) {
        let (inst, _) = instance(seed, 200);
        prop_assert!(oracle_gap(&inst, bins) <= 1e-12);
    }

    #[test]
    fn ece_bounded_by_mce(seed in any::<u64>(), bins in 1usize..60, mass in any::<bool>()) {
        let (_, preds) = instance(seed, 200);
        let scheme = if mass { BinningScheme::equal_mass(bins) } else { BinningScheme::equal_width(bins) }.unwrap();
        let (e, m) = (ece(&preds, scheme), mce(&preds, scheme));
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(e <= m + 1e-15 && m <= 1.0);
    }

    #[test]
    fn ece_permutation_invariant(seed in any::<u64>(), bins in 1usize..60) {
        let (inst, preds) = instance(seed, 200);
        let n = inst.labels.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let shuffled = PredictionSet::from_probs(
            Tensor::from_rows(&order.iter().map(|&i| inst.probs[i].clone()).collect::<Vec<_>>()).unwrap(),
            order.iter().map(|&i| inst.labels[i]).collect(),
        ).unwrap();
        let scheme = BinningScheme::equal_width(bins).unwrap();
        prop_assert!((ece(&preds, scheme) - ece(&shuffled, scheme)).abs() <= 1e-12);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise(seed in any::<u64>(), bins in 1usize..30, h in 0.001f64..0.5) {
        let (_, preds) = instance(seed, 150);
        let kernel = KernelSpec::gaussian(h).unwrap();
        let ranges = bins.min(preds.n());
        let run = |exec| (
            sece_hard_with(&preds, kernel, exec).to_bits(),
            kde_ece_with(&preds, kernel, 128, exec).unwrap().to_bits(),
            classwise_ece_with(&preds, bins, exec).unwrap().to_bits(),
            adaptive_ece_with(&preds, AceSpec::new(ranges), exec).unwrap().to_bits(),
            bin_sweep_with(&preds, &[bins, 2 * bins], exec).unwrap(),
        );
        prop_assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
    }

    #[test]
    fn smooth_estimates_in_unit_interval(seed in any::<u64>(), h in 1e-4f64..1.0) {
        let (_, preds) = instance(seed, 150);
        let kernel = KernelSpec::gaussian(h).unwrap();
        let s = sece_hard_with(&preds, kernel, Exec::Sequential);
        let k = kde_ece_with(&preds, kernel, 128, Exec::Sequential).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((0.0..=1.0).contains(&k));
    }

    #[test]
    fn temperature_preserves_argmax(seed in any::<u64>(), t in 0.05f64..20.0) {
        let preds = logits(seed);
        let scaled = apply_temperature(preds.logits().unwrap(), t).unwrap();
        prop_assert_eq!(scaled.argmax_rows(), preds.predictions());
    }

    #[test]
    fn zero_gamma_focal_is_nll(seed in any::<u64>()) {
        let preds = logits(seed);
        let f = focal_loss(preds.probs(), preds.labels(), &vec![0.0; preds.n()]).unwrap();
        prop_assert!((f - nll(&preds)).abs() <= 1e-12);
    }

    #[test]
    fn focal_loss_decreases_in_gamma(seed in any::<u64>(), g in 0.0f64..5.0, dg in 0.0f64..5.0) {
        let preds = logits(seed);
        let n = preds.n();
        let lo = focal_loss(preds.probs(), preds.labels(), &vec![g; n]).unwrap();
        let hi = focal_loss(preds.probs(), preds.labels(), &vec![g + dg; n]).unwrap();
        prop_assert!(hi <= lo);
    }

    #[test]
    fn text_round_trip_is_exact(seed in any::<u64>()) {
        let (_, preds) = instance(seed, 50);
        let back = text_round_trip(&preds, PredictionKind::Probs);
        prop_assert_eq!(back.probs(), preds.probs());
        prop_assert_eq!(back.labels(), preds.labels());
        let with_logits = logits(seed);
        let back = text_round_trip(&with_logits, PredictionKind::Logits);
        prop_assert_eq!(back.logits(), with_logits.logits());
    }

    #[test]
    fn binary_round_trip_keeps_f32_values(seed in any::<u64>()) {
        let preds = logits(seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.bin");
        write_binary_predictions(std::fs::File::create(&path).unwrap(), &preds).unwrap();
        let back = load_predictions(&path).unwrap();
        let expected: Vec<f64> = preds.probs().data().iter().map(|&p| f64::from(p as f32)).collect();
        prop_assert_eq!(back.probs().data(), &expected[..]);
        prop_assert_eq!(back.labels(), preds.labels());
    }
}
