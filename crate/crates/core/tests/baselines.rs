//! The model-blind baseline against constructed distribution shifts.

use difftraj::attribution::raw_vectors;
use difftraj::data::MixtureComponent;
use difftraj::{gen_data, model_blind_baseline, roc_auc, MixtureSpec, Sample, SplitCounts, TrainConfig};

fn one_blob(shift: f64, scale: f64) -> MixtureSpec {
    MixtureSpec {
        dim: 2,
        components: vec![MixtureComponent { weight: 1.0, mean: vec![0.0, 0.0], sigma: 1.0 }],
        shift: vec![shift, 0.0],
        scale,
    }
}

fn pairs(s: &[Sample]) -> Vec<(u64, Vec<f64>)> {
    s.iter().map(|s| (s.id, s.x.clone())).collect()
}

fn blind_auc(spec: &MixtureSpec) -> f64 {
    let counts = SplitCounts { member_train: 200, member_eval: 200, external_train: 200, external_eval: 200, ..SplitCounts::default() };
    let b = gen_data(spec, &counts, 11).unwrap();
    let mut train = pairs(&b.member_train);
    train.extend(pairs(&b.external_train));
    let labels: Vec<usize> = (0..train.len()).map(|i| (i < 200) as usize).collect();
    let clf = model_blind_baseline(&train, &labels, 2, "mia", &TrainConfig::classifier()).unwrap();
    let mut eval = pairs(&b.member_eval);
    eval.extend(pairs(&b.external_eval));
    let scores: Vec<f64> = raw_vectors(&eval)
        .iter()
        .map(|f| {
            let l = clf.predict_logits(f).unwrap();
            l[1] - l[0]
        })
        .collect();
    let truth: Vec<bool> = (0..eval.len()).map(|i| i < 200).collect();
    roc_auc(&scores, &truth).unwrap()
}

#[test]
fn ten_sigma_shift_is_separated() {
    let auc = blind_auc(&one_blob(10.0, 1.0));
    assert!(auc > 0.99, "{auc}");
}

#[test]
fn no_shift_is_near_chance() {
    let auc = blind_auc(&one_blob(0.0, 1.0));
    assert!((auc - 0.5).abs() < 0.1, "{auc}");
}
