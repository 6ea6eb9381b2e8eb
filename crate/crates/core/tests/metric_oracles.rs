//! AUC and TPR at fixed FPR against brute-force oracles.

use difftraj::metrics::{roc_auc, tpr_at_fpr, RocCurve};
use difftraj::rng::keyed;
use proptest::prelude::*;
use rand::Rng;

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Best TPR over every rule `score >= c`, for every observed `c` and `+inf`.
fn sweep_tpr(scores: &[f64], labels: &[bool], level: f64) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::INFINITY);
    let mut best: f64 = 0.0;
    for c in cuts {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= c).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= c).count() as f64;
        if fp / n <= level {
            best = best.max(tp / p);
        }
    }
    best
}

fn random_set(i: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = keyed(0xa0c, &[i]);
    let n = r.random_range(2..=1000usize);
    let coarse = r.random_bool(0.5);
    let shift: f64 = r.random_range(0.0..2.0);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let v: f64 = r.random::<f64>() + if l { shift * 0.3 } else { 0.0 };
            if coarse {
                (v * 20.0).round() / 20.0
            } else {
                v
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn hundred_random_sets_match_oracles() {
    for i in 0..100 {
        let (s, l) = random_set(i);
        let auc = roc_auc(&s, &l).unwrap();
        assert!((auc - pairwise_auc(&s, &l)).abs() <= 1e-12, "set {i}");
        let tpr = tpr_at_fpr(&s, &l, 0.01).unwrap();
        assert!((tpr - sweep_tpr(&s, &l, 0.01)).abs() <= 1e-12, "set {i}");
        let curve = RocCurve::new(&s, &l).unwrap();
        assert!((curve.area() - auc).abs() <= 1e-12, "set {i}");
    }
}

#[test]
fn hand_example() {
    let s = [0.35, 0.8, 0.1, 0.4];
    let l = [true, true, false, false];
    assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
}

#[test]
fn inclusive_boundary_at_one_percent() {
    let mut s: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
    let mut l = vec![false; 100];
    s.push(0.995);
    l.push(true);
    s.push(5.0);
    l.push(true);
    // only the top negative (0.99) sits above 0.5 among the ones below 0.995
    assert_eq!(tpr_at_fpr(&s, &l, 0.01).unwrap(), 1.0);
    assert_eq!(tpr_at_fpr(&s, &l, 0.0).unwrap(), 1.0);
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(-50i32..50).prop_map(|v| v as f64 / 10.0), -5.0f64..5.0], n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn monotone_transform_invariance((s, l) in scored()) {
        let t: Vec<f64> = s.iter().map(|v| (0.7 * v).exp() + 3.0 * v).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() - roc_auc(&t, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn negation_complements((s, l) in scored()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_matches_rank_form((s, l) in scored()) {
        let c = RocCurve::new(&s, &l).unwrap();
        prop_assert!((c.area() - roc_auc(&s, &l).unwrap()).abs() < 1e-12);
        for w in c.points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert_eq!(c.points[0], (0.0, 0.0));
        prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn tpr_nondecreasing_in_level((s, l) in scored(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(tpr_at_fpr(&s, &l, lo).unwrap() <= tpr_at_fpr(&s, &l, hi).unwrap());
        prop_assert!((tpr_at_fpr(&s, &l, lo).unwrap() - sweep_tpr(&s, &l, lo)).abs() < 1e-12);
    }
}
