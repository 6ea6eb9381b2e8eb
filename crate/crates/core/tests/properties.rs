//! Invariants of the classifier, threshold calibration and confusion counts.

use difftraj::attribution::{calibrate_threshold_attack, threshold_decide, train_linear, LinearClassifier};
use difftraj::metrics::{argmax, asr, confusion_matrix};
use difftraj::rng::{keyed, normal_vec};
use difftraj::{NormStats, TrainConfig, TrajectoryFeatureVector};
use proptest::prelude::*;

fn fv(values: Vec<f64>) -> TrajectoryFeatureVector {
    TrajectoryFeatureVector { sample_id: 0, label: String::new(), values, spec_hash: "h".into() }
}

fn classifier(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> LinearClassifier {
    let d = weights[0].len();
    LinearClassifier {
        weights,
        bias,
        norm_stats: NormStats::identity(d),
        spec_hash: "h".into(),
        task: "t".into(),
        config: TrainConfig::classifier(),
    }
}

/// Balanced accuracy of `1[v < tau]` with members positive.
fn ba(member: &[f64], nonmember: &[f64], tau: f64) -> f64 {
    let tpr = member.iter().filter(|&&v| v < tau).count() as f64 / member.len() as f64;
    let tnr = nonmember.iter().filter(|&&v| v >= tau).count() as f64 / nonmember.len() as f64;
    0.5 * (tpr + tnr)
}

fn exhaustive(member: &[Vec<f64>], nonmember: &[Vec<f64>], ts: &[usize]) -> (usize, f64, f64) {
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by_key(|&j| ts[j]);
    for j in order {
        let m: Vec<f64> = member.iter().map(|r| r[j]).collect();
        let n: Vec<f64> = nonmember.iter().map(|r| r[j]).collect();
        let mut vals: Vec<f64> = m.iter().chain(&n).cloned().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals.dedup();
        for w in vals.windows(2) {
            let tau = 0.5 * (w[0] + w[1]);
            let acc = ba(&m, &n, tau);
            if best.map_or(true, |b| acc > b.2) {
                best = Some((ts[j], tau, acc));
            }
        }
    }
    best.unwrap_or((ts.iter().cloned().min().unwrap(), f64::NAN, 0.5))
}

fn grid() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..4, 1usize..50, 1usize..50).prop_flat_map(|(k, nm, nn)| {
        let row = move || prop::collection::vec((0i32..40).prop_map(|v| v as f64 / 8.0), k);
        (
            prop::collection::vec(row(), nm),
            prop::collection::vec(row(), nn),
            Just((0..k).map(|j| 3 * j + 1).collect::<Vec<usize>>()),
        )
    })
}

proptest! {
    #[test]
    fn argmax_invariant_to_constant(l in prop::collection::vec(-10.0f64..10.0, 2..6), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        prop_assert_eq!(argmax(&l), argmax(&shifted));
    }

    #[test]
    fn logits_affine(a in 0.0f64..1.0, f1 in prop::collection::vec(-3.0f64..3.0, 3), f2 in prop::collection::vec(-3.0f64..3.0, 3)) {
        let c = classifier(vec![vec![1.0, -2.0, 0.5], vec![0.3, 0.1, -1.0], vec![2.0, 0.0, 1.0]], vec![0.1, -0.2, 0.3]);
        let mix: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let l1 = c.logits_normalized(&f1);
        let l2 = c.logits_normalized(&f2);
        let lm = c.logits_normalized(&mix);
        for i in 0..3 {
            prop_assert!((lm[i] - (a * l1[i] + (1.0 - a) * l2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_is_the_grid_optimum((m, n, ts) in grid()) {
        let got = calibrate_threshold_attack(&m, &n, &ts, false).unwrap();
        let (t, tau, acc) = exhaustive(&m, &n, &ts);
        prop_assert!((got.calibration_accuracy - acc).abs() < 1e-12);
        if !tau.is_nan() {
            prop_assert_eq!(got.t_star, t);
            prop_assert!((got.tau - tau).abs() < 1e-12);
        }
        let j = ts.iter().position(|&s| s == got.t_star).unwrap();
        let mcol: Vec<f64> = m.iter().map(|r| r[j]).collect();
        let ncol: Vec<f64> = n.iter().map(|r| r[j]).collect();
        prop_assert!((ba(&mcol, &ncol, got.tau) - got.calibration_accuracy).abs() < 1e-12);
    }

    #[test]
    fn confusion_total(p in prop::collection::vec(0usize..3, 1..100)) {
        let l: Vec<usize> = p.iter().rev().cloned().collect();
        let c = confusion_matrix(&p, &l, 3);
        prop_assert_eq!(c.iter().flatten().sum::<usize>(), p.len());
    }
}

#[test]
fn three_class_recalls() {
    // recalls 1.0, 0.5, 0.0
    let labels = [0, 0, 1, 1, 2, 2];
    let preds = [0, 0, 1, 0, 0, 1];
    assert!((asr(&preds, &labels).unwrap() - 0.5).abs() < 1e-15);
}

/// A one-feature linear classifier is a threshold rule, so calibrating the
/// threshold directly can only match or beat it. Both sit near the Bayes
/// rate of two unit Gaussians two apart.
#[test]
fn threshold_matches_one_dim_linear_classifier() {
    let mut r = keyed(0x7e, &[]);
    let member: Vec<f64> = normal_vec(&mut r, 200).iter().map(|v| v + 0.0).collect();
    let nonmember: Vec<f64> = normal_vec(&mut r, 200).iter().map(|v| v + 2.0).collect();
    let attack = calibrate_threshold_attack(
        &member.iter().map(|&v| vec![v]).collect::<Vec<_>>(),
        &nonmember.iter().map(|&v| vec![v]).collect::<Vec<_>>(),
        &[5],
        false,
    )
    .unwrap();
    let feats: Vec<_> = member.iter().chain(&nonmember).map(|&v| fv(vec![v])).collect();
    let labels: Vec<usize> = (0..400).map(|i| (i < 200) as usize).collect();
    let (clf, _) = train_linear(&feats, &labels, 2, "mia", &TrainConfig::classifier()).unwrap();
    let preds: Vec<usize> = feats.iter().map(|f| clf.predict(f).unwrap()).collect();
    let lin_ba = asr(&preds, &labels).unwrap();
    // the linear decision is itself a threshold on the feature
    let z = |v: f64| clf.norm_stats.apply_values(&[v]).unwrap()[0];
    let w = clf.weights[1][0] - clf.weights[0][0];
    let b = clf.bias[1] - clf.bias[0];
    assert!(w < 0.0, "members have lower values, so the member logit must fall with the feature");
    for (f, &p) in feats.iter().zip(&preds) {
        let margin = w * z(f.values[0]) + b;
        if margin.abs() > 1e-9 {
            assert_eq!(p == 1, margin > 0.0);
        }
    }
    assert!(attack.calibration_accuracy >= lin_ba - 1e-12);
    assert!(lin_ba > 0.8 && attack.calibration_accuracy < 0.9, "{} vs {lin_ba}", attack.calibration_accuracy);
    assert!(threshold_decide(&attack, &[5], &[attack.tau - 1e-9]).unwrap());
}
