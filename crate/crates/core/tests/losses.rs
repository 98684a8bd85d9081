use anglekit::geometry::{encode_heatmap, GaussianSpec, Point2D};
use anglekit::losses::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn focal_oracle(pred: &[f64], target: &[f64], alpha: f64, gamma: f64) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let pt = if y == 1.0 { p } else { 1.0 - p };
        total += -alpha * (1.0 - pt).powf(gamma) * pt.ln();
    }
    total / pred.len() as f64
}

fn fbeta_oracle(pred: &[f64], target: &[f64], beta: f64, eps: f64) -> f64 {
    let tp: f64 = pred.iter().zip(target).map(|(p, y)| p * y).sum();
    let fp: f64 = pred.iter().zip(target).map(|(p, y)| p * (1.0 - y)).sum();
    let fn_: f64 = pred.iter().zip(target).map(|(p, y)| (1.0 - p) * y).sum();
    1.0 - ((1.0 + beta) * tp + eps) / ((1.0 + beta) * tp + beta * beta * fn_ + fp + eps)
}

fn random_case(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
    let target = (0..n).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
    (pred, target)
}

fn random_heatmaps(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = (0..16).map(|_| rng.random_range(0.05..0.95)).collect();
    let target = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
    (pred, target)
}

#[test]
fn focal_scalar_matches_hand_value() {
    let v = focal_loss(&[0.5], &[1.0], &FocalParams::default()).unwrap().value;
    let expected = 2.0 * 0.25 * -(0.5f64.ln());
    assert!((v - expected).abs() < 1e-12);
    assert!((v - 0.346574).abs() < 1e-6);
}

#[test]
fn fbeta_hand_count() {
    let v = fbeta_loss(&[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0, 0.0, 0.0], &FBetaParams::default())
        .unwrap()
        .value;
    assert!((v - 0.625).abs() < 1e-6);
}

#[test]
fn hybrid_composes_its_parts() {
    let pred = [1.0, 0.0, 0.0, 1.0];
    let target = [1.0, 1.0, 0.0, 0.0];
    let (fp, bp) = (FocalParams::default(), FBetaParams::default());
    let v = hybrid_loss(&pred, &target, &HybridParams::default(), &fp, &bp).unwrap().value;
    let expected = 0.5 * focal_oracle(&pred, &target, 2.0, 2.0) + 0.5 * fbeta_oracle(&pred, &target, 2.0, 1e-6);
    assert!((v - expected).abs() < 1e-9);
}

#[test]
fn kr_closed_form_on_encoded_heatmap() {
    let hm = encode_heatmap(Point2D::new(30.0, 33.0), (64, 64), GaussianSpec::new(4.0).unwrap()).unwrap();
    let y: Vec<f64> = hm.values().iter().map(|&v| f64::from(v)).collect();
    let n = y.len() as f64;
    let q: f64 = y.iter().map(|v| v * v).sum();
    let p = KRParams::default();
    let v = kr_loss(&vec![0.0; y.len()], &y, &p).unwrap().value;
    assert!((v - (p.rho3 * q / n + p.rho4)).abs() < 1e-6);
}

#[test]
fn gradients_pass_finite_differences_over_50_seeds() {
    let (fp, bp, hp, kp) = (
        FocalParams::default(),
        FBetaParams::default(),
        HybridParams::default(),
        KRParams::default(),
    );
    for seed in 0..50 {
        let (pred, target) = random_case(seed, 8);
        let reports = [
            grad_check(|x| focal_loss(x, &target, &fp), &pred, 1e-4).unwrap(),
            grad_check(|x| fbeta_loss(x, &target, &bp), &pred, 1e-4).unwrap(),
            grad_check(|x| hybrid_loss(x, &target, &hp, &fp, &bp), &pred, 1e-4).unwrap(),
        ];
        let (hpred, htarget) = random_heatmaps(seed);
        let kr = grad_check(|x| kr_loss(x, &htarget, &kp), &hpred, 1e-4).unwrap();
        for r in reports.iter().chain([&kr]) {
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }
}

proptest! {
    #[test]
    fn focal_matches_oracle(seed in any::<u64>(), alpha in 0.1f64..3.0, gamma in 0.0f64..3.0) {
        let (pred, target) = random_case(seed, 12);
        let p = FocalParams { alpha, gamma, class_balanced_alpha: false };
        let v = focal_loss(&pred, &target, &p).unwrap().value;
        prop_assert!((v - focal_oracle(&pred, &target, alpha, gamma)).abs() < 1e-12);
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn focal_without_focusing_is_bce(seed in any::<u64>()) {
        let (pred, target) = random_case(seed, 10);
        let p = FocalParams { alpha: 1.0, gamma: 0.0, class_balanced_alpha: false };
        let bce: f64 = pred
            .iter()
            .zip(&target)
            .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum::<f64>()
            / pred.len() as f64;
        prop_assert!((focal_loss(&pred, &target, &p).unwrap().value - bce).abs() < 1e-9);
    }

    #[test]
    fn fbeta_bounded_and_matches_oracle(seed in any::<u64>()) {
        let (pred, target) = random_case(seed, 9);
        let v = fbeta_loss(&pred, &target, &FBetaParams::default()).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - fbeta_oracle(&pred, &target, 2.0, 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn fbeta_monotone_in_positive_predictions(seed in any::<u64>(), k in 0usize..9) {
        let (mut pred, mut target) = random_case(seed, 9);
        target[k] = 1.0;
        let p = FBetaParams::default();
        let before = fbeta_loss(&pred, &target, &p).unwrap().value;
        pred[k] += 0.05;
        let after = fbeta_loss(&pred, &target, &p).unwrap().value;
        prop_assert!(after <= before + 1e-15);
    }

    #[test]
    fn kr_overlap_in_unit_interval(seed in any::<u64>()) {
        let (pred, target) = random_heatmaps(seed);
        let p = KRParams { rho3: 0.0, rho4: 1.0, eps: 1e-6 };
        let v = kr_loss(&pred, &target, &p).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn kr_mse_term_zero_only_at_target(seed in any::<u64>()) {
        let (pred, target) = random_heatmaps(seed);
        let mse = HeatmapLoss::Mse { rho3: 1.0 };
        prop_assert_eq!(mse.eval(&target, &target).unwrap().value, 0.0);
        prop_assert!(mse.eval(&pred, &target).unwrap().value > 0.0);
    }
}
