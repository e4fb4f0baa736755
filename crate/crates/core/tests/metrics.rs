use derm_core::metrics::{auc_roc, basic_metrics, confusion, weighted_metrics, ConfusionMatrix, MetricsReport};
use derm_core::Rng;
use proptest::prelude::*;

/// Metrics recomputed from scratch with one class as the positive.
fn naive(preds: &[u8], labels: &[u8], positive: u8) -> (f64, f64, f64, f64) {
    let n = preds.len();
    let mut correct = 0;
    let mut predicted_pos = 0;
    let mut actual_pos = 0;
    let mut hits = 0;
    for i in 0..n {
        if preds[i] == labels[i] {
            correct += 1;
        }
        if preds[i] == positive {
            predicted_pos += 1;
        }
        if labels[i] == positive {
            actual_pos += 1;
            if preds[i] == positive {
                hits += 1;
            }
        }
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = div(hits, predicted_pos);
    let r = div(hits, actual_pos);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (div(correct, n), p, r, f)
}

fn random_vectors(rng: &mut Rng, n: usize) -> (Vec<u8>, Vec<u8>) {
    // vary the class balance and the predictor's skill between draws
    let bias = rng.next_f64();
    let skill = rng.next_f64();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(bias))).collect();
    let preds = labels
        .iter()
        .map(|&y| if rng.bernoulli(skill) { y } else { u8::from(rng.bernoulli(0.5)) })
        .collect();
    (preds, labels)
}

#[test]
fn recount_oracle() {
    let mut rng = Rng::new(2024);
    for _ in 0..1000 {
        let (preds, labels) = random_vectors(&mut rng, 200);
        let probs: Vec<f64> = preds.iter().map(|&p| p as f64).collect();
        let r = MetricsReport::new(&probs, &preds, &labels).unwrap();
        assert_eq!(r.confusion.total(), 200);
        let (acc, p, rc, f) = naive(&preds, &labels, 1);
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (acc, p, rc, f));
        assert_eq!((r.malignant.precision, r.malignant.recall, r.malignant.f1), (p, rc, f));
        let (_, p0, r0, f0) = naive(&preds, &labels, 0);
        assert_eq!((r.non_malignant.precision, r.non_malignant.recall, r.non_malignant.f1), (p0, r0, f0));
        let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
        let (w1, w0) = (n1 / 200.0, (200.0 - n1) / 200.0);
        assert_eq!(r.weighted_precision, w0 * p0 + w1 * p);
        assert_eq!(r.weighted_recall, w0 * r0 + w1 * rc);
        assert_eq!(r.weighted_f1, w0 * f0 + w1 * f);
        assert!((r.weighted_recall - r.accuracy).abs() <= 1e-12);
    }
}

#[test]
fn confusion_examples() {
    let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
    let cm = confusion(&labels, &labels).unwrap();
    assert_eq!(cm, ConfusionMatrix { tp: 50, tn: 50, fp: 0, fn_: 0 });
    let cm = confusion(&[1; 100], &labels).unwrap();
    assert_eq!(cm, ConfusionMatrix { tp: 50, tn: 0, fp: 50, fn_: 0 });
    assert!(confusion(&[1, 0], &[1]).is_err());
    assert_eq!(cm.as_rows(), [[0, 50], [0, 50]]);
}

#[test]
fn worked_metrics() {
    let m = basic_metrics(&ConfusionMatrix { tp: 40, fn_: 10, fp: 5, tn: 45 });
    assert!((m.accuracy - 0.85).abs() < 1e-12);
    assert!((m.precision - 0.888889).abs() < 1e-6);
    assert!((m.recall - 0.8).abs() < 1e-12);
    assert!((m.f1 - 0.842105).abs() < 1e-6);
    assert!((weighted_metrics(&[0.8, 0.9], &[50, 50]).unwrap() - 0.85).abs() < 1e-12);
    assert!((weighted_metrics(&[1.0, 0.0], &[90, 10]).unwrap() - 0.9).abs() < 1e-12);
    assert!(weighted_metrics(&[0.5, 0.5], &[0, 0]).is_err());
}

/// Every (positive, negative) pair, ties counting one half.
fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        for (j, &t) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if s > t {
                    1.0
                } else if s == t {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_examples() {
    assert_eq!(auc_roc(&[0.9, 0.4, 0.5, 0.1], &[1, 1, 0, 0]).unwrap(), 0.75);
    assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(auc_roc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
}

#[test]
fn auc_matches_pair_enumeration() {
    let mut rng = Rng::new(8);
    for _ in 0..2000 {
        let n = 2 + rng.below(49);
        let labels: Vec<u8> = (0..n).map(|i| if i < 2 { i as u8 } else { rng.below(2) as u8 }).collect();
        // coarse scores so that ties occur often
        let scores: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 / 8.0).collect();
        assert_eq!(auc_roc(&scores, &labels).unwrap(), auc_pairs(&scores, &labels));
    }
}

proptest! {
    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), n in 2usize..120) {
        let mut rng = Rng::new(seed);
        let (preds, labels) = random_vectors(&mut rng, n);
        let probs: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let perm = rng.permutation(n);
        let p2: Vec<u8> = perm.iter().map(|&i| preds[i]).collect();
        let l2: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let s2: Vec<f64> = perm.iter().map(|&i| probs[i]).collect();
        let a = MetricsReport::new(&probs, &preds, &labels).unwrap();
        let b = MetricsReport::new(&s2, &p2, &l2).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert_eq!(a.weighted_f1, b.weighted_f1);
        prop_assert_eq!(a.auc_roc, b.auc_roc);
    }

    #[test]
    fn auc_is_rank_based(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = Rng::new(seed);
        let labels: Vec<u8> = (0..n).map(|i| if i < 2 { i as u8 } else { rng.below(2) as u8 }).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), auc_roc(&squashed, &labels).unwrap());
        let r = MetricsReport::new(&squashed, &labels, &labels).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.weighted_precision, r.weighted_recall, r.weighted_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
